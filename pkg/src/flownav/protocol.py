"""Newline-delimited JSON episode protocol for external agents.

Each request is one JSON object per line with a ``cmd`` of reset, step,
query_flow, config, or close; each request gets exactly one response carrying
a monotonically increasing ``seq``. Malformed requests produce structured
error responses without ending the session. Step and reset responses include
the local flow vector and a small flow patch sampled in the x-z plane at the
UAV's height, for learning agents that condition on the flow.
"""

from __future__ import annotations

import json
import logging
import socketserver
import sys

import numpy as np

from .env import EnvError, NavigationEnv, Observation

logger = logging.getLogger(__name__)

DEFAULT_PATCH_SIZE = 5


class EpisodeSession:
    """One protocol session driving one environment instance."""

    def __init__(self, env: NavigationEnv, patch_size: int = DEFAULT_PATCH_SIZE):
        self.env = env
        self.patch_size = patch_size
        self.seq = 0
        self.closed = False

    # -- helpers -----------------------------------------------------------

    def _flow_patch(self) -> list:
        """patch_size x patch_size x 3 flow samples around the UAV at grid
        spacing in the x-z plane at the UAV's height."""
        s = self.env.state
        dx, _, dz = self.env.mesh.spacing
        c = self.patch_size // 2
        patch = []
        for i in range(self.patch_size):
            row = []
            for j in range(self.patch_size):
                p = (s.x + (i - c) * dx, s.y, s.z + (j - c) * dz)
                row.append(self.env.field.velocity(p, s.t).tolist())
            patch.append(row)
        return patch

    def _obs_payload(self, obs: Observation) -> dict:
        s = self.env.state
        return {
            "obs": obs.as_array().tolist(),
            "flow": self.env.last_flow.tolist(),
            "flow_patch": self._flow_patch(),
            "t": s.t,
            "state": s.as_array().tolist(),
        }

    def _error(self, code: str, message: str) -> dict:
        return {"ok": False, "seq": self.seq, "error": {"code": code, "message": message}}

    # -- request handling ---------------------------------------------------

    def handle_line(self, line: str) -> dict:
        self.seq += 1
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            return self._error("bad_json", f"could not parse request: {e}")
        if not isinstance(obj, dict):
            return self._error("bad_request", "request must be a JSON object")
        return self.handle(obj)

    def handle(self, obj: dict) -> dict:
        cmd = obj.get("cmd")
        try:
            if cmd == "config":
                return self._cmd_config()
            if cmd == "reset":
                return self._cmd_reset(obj)
            if cmd == "step":
                return self._cmd_step(obj)
            if cmd == "query_flow":
                return self._cmd_query_flow(obj)
            if cmd == "close":
                self.closed = True
                return {"ok": True, "seq": self.seq, "bye": True}
            return self._error("unknown_cmd", f"unknown cmd {cmd!r}")
        except EnvError as e:
            return self._error(e.code, str(e))
        except (KeyError, TypeError, ValueError) as e:
            return self._error("bad_request", f"{type(e).__name__}: {e}")

    def _cmd_config(self) -> dict:
        mesh = self.env.mesh
        rc = self.env.reward_cfg
        return {
            "ok": True, "seq": self.seq,
            "config": {
                "observation_size": 8 + self.env.fan.body_dirs.shape[0],
                "action": {
                    "thrust": [-2.0, 2.0],
                    "dpsi": [-np.pi / 4, np.pi / 4],
                    "dtheta": [-np.pi / 4, np.pi / 4],
                },
                "dt": self.env.integrator.dt,
                "max_steps": self.env.episode_cfg.max_steps,
                "patch_size": self.patch_size,
                "sensor_range": self.env.fan.max_range,
                "n_snapshots": mesh.n_snapshots,
                "domain_min": mesh.domain_min.tolist(),
                "domain_max": mesh.domain_max.tolist(),
                "obstacles": [b.to_dict() for b in mesh.obstacles],
                "target_radius": rc.target_radius,
            },
        }

    def _cmd_reset(self, obj: dict) -> dict:
        kwargs = {}
        for name in ("seed", "snapshot"):
            if obj.get(name) is not None:
                kwargs[name] = int(obj[name])
        for name in ("start", "target"):
            if obj.get(name) is not None:
                kwargs[name] = [float(v) for v in obj[name]]
        if obj.get("orientation") is not None:
            kwargs["orientation"] = tuple(float(v) for v in obj["orientation"])
        obs = self.env.reset(**kwargs)
        out = {"ok": True, "seq": self.seq,
               "start": self.env.start.tolist(),
               "target": self.env.target.tolist(),
               "snapshot": self.env.snapshot}
        out.update(self._obs_payload(obs))
        return out

    def _cmd_step(self, obj: dict) -> dict:
        action = obj["action"]
        obs, breakdown, done, event = self.env.step(action)
        out = {"ok": True, "seq": self.seq,
               "reward": breakdown.total,
               "breakdown": breakdown.to_dict(),
               "done": done,
               "event": event,
               "steps": self.env.steps}
        out.update(self._obs_payload(obs))
        return out

    def _cmd_query_flow(self, obj: dict) -> dict:
        p = (float(obj["x"]), float(obj["y"]), float(obj["z"]))
        t = float(obj["t"])
        k = int(obj["k"]) if obj.get("k") is not None else None
        vel = self.env.field.velocity(p, t, k)
        return {"ok": True, "seq": self.seq, "velocity": vel.tolist()}


def serve_stdio(session: EpisodeSession, stdin=None, stdout=None):
    """Serve one session over text streams until close or EOF."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        resp = session.handle_line(line)
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()
        if session.closed:
            break


def make_tcp_server(host: str, port: int, session_factory) -> socketserver.ThreadingTCPServer:
    """Build the threaded TCP server; each connection gets its own session."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            session = session_factory()
            logger.info("session opened from %s", self.client_address)
            try:
                for raw in self.rfile:
                    line = raw.decode("utf-8").strip()
                    if not line:
                        continue
                    resp = session.handle_line(line)
                    self.wfile.write((json.dumps(resp) + "\n").encode("utf-8"))
                    self.wfile.flush()
                    if session.closed:
                        break
            except (ConnectionError, BrokenPipeError):
                logger.info("session transport lost; closing cleanly")
            finally:
                server.sessions_served += 1

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True
        sessions_served = 0

    server = Server((host, port), Handler)
    return server


def serve_tcp(host: str, port: int, session_factory, max_sessions: int | None = None):
    """Serve sessions over TCP until interrupted (or max_sessions handled)."""
    server = make_tcp_server(host, port, session_factory)
    logger.info("serving episode protocol on %s:%d", *server.server_address)
    try:
        if max_sessions is None:
            server.serve_forever()
        else:
            while server.sessions_served < max_sessions:
                server.handle_request()
    finally:
        server.server_close()
    return server.server_address
