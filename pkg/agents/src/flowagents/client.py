"""NDJSON protocol client for the navigation engine.

Talks to a `flownav serve` process over stdio (spawned here) or TCP. All
engine interaction goes through this interface; the agent never imports the
engine.
"""

from __future__ import annotations

import json
import socket
import subprocess
import sys


class ProtocolError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class EngineClient:
    """One protocol session (one environment instance) over stdio or TCP."""

    def __init__(self, dataset: str | None = None, tcp: tuple[str, int] | None = None,
                 max_steps: int = 100, k: int = 8, extra_args: tuple[str, ...] = ()):
        self._proc = None
        self._sock = None
        if tcp is not None:
            self._sock = socket.create_connection(tcp, timeout=300)
            self._reader = self._sock.makefile("r", encoding="utf-8")
            self._writer = self._sock.makefile("w", encoding="utf-8")
        else:
            if dataset is None:
                raise ValueError("need a dataset root (stdio) or a tcp address")
            cmd = [sys.executable, "-m", "flownav", "serve", "--data", dataset,
                   "--max-steps", str(max_steps), "--k", str(k), *extra_args]
            self._proc = subprocess.Popen(
                cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
            self._reader = self._proc.stdout
            self._writer = self._proc.stdin

    def request(self, obj: dict) -> dict:
        self._writer.write(json.dumps(obj) + "\n")
        self._writer.flush()
        line = self._reader.readline()
        if not line:
            raise ProtocolError("transport", "engine closed the connection")
        resp = json.loads(line)
        if not resp.get("ok", False):
            err = resp.get("error", {})
            raise ProtocolError(err.get("code", "unknown"), err.get("message", ""))
        return resp

    def config(self) -> dict:
        return self.request({"cmd": "config"})["config"]

    def reset(self, seed: int | None = None, snapshot: int | None = None) -> dict:
        req = {"cmd": "reset"}
        if seed is not None:
            req["seed"] = seed
        if snapshot is not None:
            req["snapshot"] = snapshot
        return self.request(req)

    def step(self, action) -> dict:
        return self.request({"cmd": "step", "action": [float(a) for a in action]})

    def query_flow(self, x: float, y: float, z: float, t: float) -> list:
        return self.request({"cmd": "query_flow", "x": x, "y": y, "z": z,
                             "t": t})["velocity"]

    def close(self):
        try:
            if self._writer and not (self._proc and self._proc.poll() is not None):
                self._writer.write(json.dumps({"cmd": "close"}) + "\n")
                self._writer.flush()
                self._reader.readline()
        except (BrokenPipeError, OSError, ValueError):
            pass
        if self._proc is not None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        if self._sock is not None:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
