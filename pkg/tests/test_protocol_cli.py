import json
import socket
import threading

import numpy as np
import pytest

from flownav.cli import main
from flownav.env import EpisodeConfig, NavigationEnv
from flownav.interp import FlowField
from flownav.policies import GreedyPolicy
from flownav.protocol import EpisodeSession, make_tcp_server, serve_stdio
from flownav.store import BlockStore
from flownav.synth import SyntheticFlowSpec, synth_dataset


def make_session(store, max_steps=100, patch_size=5):
    env = NavigationEnv(FlowField(store), episode=EpisodeConfig(max_steps=max_steps))
    return EpisodeSession(env, patch_size=patch_size)


class TestSession:
    def test_reset_seeded_byte_identical(self, still_air_store):
        payloads = []
        for _ in range(2):
            session = make_session(still_air_store)
            resp = session.handle({"cmd": "reset", "seed": 7})
            payloads.append(json.dumps(resp, sort_keys=True))
        assert payloads[0] == payloads[1]

    def test_step_after_done_error(self, still_air_store):
        session = make_session(still_air_store, max_steps=1)
        session.handle({"cmd": "reset", "seed": 0})
        r1 = session.handle({"cmd": "step", "action": [0.0, 0.0, 0.0]})
        assert r1["done"]
        r2 = session.handle({"cmd": "step", "action": [0.0, 0.0, 0.0]})
        assert not r2["ok"]
        assert r2["error"]["code"] == "episode_done"

    def test_seq_monotone_and_errors_recoverable(self, still_air_store):
        session = make_session(still_air_store)
        r1 = session.handle_line("not json at all")
        assert not r1["ok"] and r1["error"]["code"] == "bad_json"
        r2 = session.handle_line(json.dumps({"cmd": "nonsense"}))
        assert not r2["ok"] and r2["error"]["code"] == "unknown_cmd"
        r3 = session.handle_line(json.dumps({"cmd": "config"}))
        assert r3["ok"]
        assert [r1["seq"], r2["seq"], r3["seq"]] == [1, 2, 3]

    def test_query_flow_matches_direct_call(self, still_air_store):
        session = make_session(still_air_store)
        field = FlowField(still_air_store)
        p = (0.5, 1.0, 0.25)
        t = 0.1
        resp = session.handle({"cmd": "query_flow", "x": p[0], "y": p[1],
                               "z": p[2], "t": t})
        direct = field.velocity(p, t)
        # JSON round trip must add no drift beyond float formatting
        echoed = json.loads(json.dumps(resp))["velocity"]
        assert np.max(np.abs(np.array(echoed) - direct)) <= 1e-12

    def test_flow_patch_shape(self, still_air_store):
        session = make_session(still_air_store, patch_size=5)
        resp = session.handle({"cmd": "reset", "seed": 1})
        patch = np.array(resp["flow_patch"])
        assert patch.shape == (5, 5, 3)
        assert np.isfinite(patch).all()
        assert len(resp["obs"]) == 53

    def test_config_reports_schema(self, still_air_store):
        session = make_session(still_air_store)
        cfg = session.handle({"cmd": "config"})["config"]
        assert cfg["observation_size"] == 53
        assert cfg["action"]["thrust"] == [-2.0, 2.0]
        assert cfg["n_snapshots"] == still_air_store.mesh.n_snapshots
        assert len(cfg["obstacles"]) == 2

    def test_session_matches_inprocess_episode(self, still_air_store):
        # protocol transport must not change a single step of the episode
        session = make_session(still_air_store)
        env = NavigationEnv(FlowField(still_air_store))
        policy = GreedyPolicy()

        resp = session.handle({"cmd": "reset", "seed": 33})
        obs_local = env.reset(seed=33)
        np.testing.assert_array_equal(np.array(resp["obs"]),
                                      obs_local.as_array())
        done = False
        while not done:
            action = policy(obs_local)
            resp = session.handle({"cmd": "step", "action": list(action)})
            obs_local, breakdown, done_local, event = env.step(action)
            np.testing.assert_array_equal(np.array(resp["obs"]), obs_local.as_array())
            assert resp["reward"] == breakdown.total
            assert resp["done"] == done_local
            assert resp["event"] == event
            done = resp["done"]

    def test_stdio_loop_close(self, still_air_store):
        import io
        session = make_session(still_air_store)
        lines = [json.dumps({"cmd": "config"}), json.dumps({"cmd": "close"}),
                 json.dumps({"cmd": "config"})]
        out = io.StringIO()
        serve_stdio(session, iter(l + "\n" for l in lines), out)
        responses = [json.loads(l) for l in out.getvalue().splitlines()]
        assert len(responses) == 2  # nothing served after close
        assert responses[-1]["bye"]


class TestTcp:
    def test_roundtrip_over_socket(self, still_air_store):
        server = make_tcp_server("127.0.0.1", 0,
                                 lambda: make_session(still_air_store))
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = server.server_address
            with socket.create_connection((host, port), timeout=5) as sock:
                f = sock.makefile("rw", encoding="utf-8")
                f.write(json.dumps({"cmd": "reset", "seed": 5}) + "\n")
                f.flush()
                resp = json.loads(f.readline())
                assert resp["ok"] and len(resp["obs"]) == 53
                f.write(json.dumps({"cmd": "step", "action": [1.0, 0.0, 0.0]}) + "\n")
                f.flush()
                resp = json.loads(f.readline())
                assert resp["ok"] and "reward" in resp
                f.write(json.dumps({"cmd": "close"}) + "\n")
                f.flush()
                assert json.loads(f.readline())["bye"]
        finally:
            server.shutdown()
            server.server_close()


class TestSynth:
    def test_deterministic_bytes(self, tmp_path):
        import hashlib, os
        digests = []
        for sub in ("a", "b"):
            root = tmp_path / sub
            spec = SyntheticFlowSpec(grid_dims=(16, 16, 16), n_snapshots=3,
                                     perturbation_amplitude=0.1, seed=9)
            synth_dataset(spec, str(root))
            h = hashlib.sha256()
            for name in sorted(os.listdir(root)):
                h.update(name.encode())
                h.update((root / name).read_bytes())
            digests.append(h.hexdigest())
        assert digests[0] == digests[1]

    def test_freestream_outside_wakes(self, tmp_path):
        spec = SyntheticFlowSpec(grid_dims=(16, 16, 16), n_snapshots=2,
                                 wake_amplitude=0.5, perturbation_amplitude=0.0,
                                 seed=0)
        store = synth_dataset(spec, str(tmp_path))
        u, v, w = store.reassemble_snapshot(0)
        xs = np.linspace(store.mesh.domain_min[0], store.mesh.domain_max[0], 16)
        upstream = xs < -0.25  # ahead of the first obstacle: no wake there
        assert np.all(u[upstream] == 1.0)
        assert np.all(v[upstream] == 0.0) and np.all(w[upstream] == 0.0)

    def test_speed_bounded(self, tmp_path):
        spec = SyntheticFlowSpec(grid_dims=(16, 16, 16), n_snapshots=3,
                                 wake_amplitude=0.5, perturbation_amplitude=0.1,
                                 max_speed=2.0, seed=4)
        store = synth_dataset(spec, str(tmp_path))
        for s in range(3):
            u, v, w = store.reassemble_snapshot(s)
            speed = np.sqrt(u.astype(float) ** 2 + v.astype(float) ** 2
                            + w.astype(float) ** 2)
            assert speed.max() <= 2.0

    def test_amplitude_budget_validated(self):
        spec = SyntheticFlowSpec(freestream=1.5, wake_amplitude=1.0, max_speed=2.0)
        with pytest.raises(ValueError):
            spec.validate()


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("clidata")
    spec = SyntheticFlowSpec(grid_dims=(16, 16, 16), n_snapshots=3,
                             wake_amplitude=0.4, seed=2)
    synth_dataset(spec, str(root))
    return str(root)


class TestCli:
    def run(self, capsys, *argv):
        code = main(list(argv))
        out = capsys.readouterr().out
        return code, out

    def test_query_smoke(self, capsys, cli_dataset):
        code, out = self.run(capsys, "query", "--data", cli_dataset,
                             "--x", "0", "--y", "1", "--z", "0", "--t", "0.1")
        assert code == 0
        rec = json.loads(out)
        assert len(rec["velocity"]) == 3
        assert rec["t"] == 0.1

    def test_eval_schema_and_determinism(self, capsys, cli_dataset):
        args = ("eval", "--data", cli_dataset, "--episodes", "3",
                "--policy", "random", "--seed", "1", "--max-steps", "12")
        code1, out1 = self.run(capsys, *args)
        code2, out2 = self.run(capsys, *args)
        assert code1 == code2 == 0
        assert out1 == out2  # byte-identical summaries
        summary = json.loads(out1)
        assert {"success_rate", "crash_rate", "mean_return"} <= set(summary)

    def test_episode_with_trajectory(self, capsys, cli_dataset, tmp_path):
        traj = tmp_path / "t.jsonl"
        code, out = self.run(capsys, "episode", "--data", cli_dataset,
                             "--policy", "greedy", "--seed", "3",
                             "--trajectory", str(traj))
        assert code == 0
        summary = json.loads(out)
        assert summary["outcome"] in {"target", "collision", "out_of_bounds", "timeout"}
        assert len(traj.read_text().splitlines()) == summary["steps"]

    def test_env_var_dataset_root(self, capsys, cli_dataset, monkeypatch):
        monkeypatch.setenv("FLOWNAV_DATA", cli_dataset)
        code, out = self.run(capsys, "query", "--x", "1", "--y", "1",
                             "--z", "0", "--t", "0.0")
        assert code == 0

    def test_missing_dataset_structured_error(self, capsys, monkeypatch):
        monkeypatch.delenv("FLOWNAV_DATA", raising=False)
        code, out = self.run(capsys, "query", "--x", "0", "--y", "0",
                             "--z", "0", "--t", "0")
        assert code == 1
        assert json.loads(out)["error"]["code"] == "missing_dataset"

    def test_synth_then_ingest_roundtrip(self, capsys, tmp_path):
        out_root = tmp_path / "ds"
        code, out = self.run(capsys, "synth", "--data", str(out_root),
                             "--grid", "12", "--snapshots", "2", "--seed", "5")
        assert code == 0
        info = json.loads(out)
        assert info["snapshots"] == 2
        BlockStore(str(out_root))  # opens and verifies files

    def test_zermelo_smoke(self, capsys, cli_dataset):
        code, out = self.run(capsys, "zermelo", "--data", cli_dataset,
                             "--start", "-1.0", "1.5", "0.0",
                             "--target", "3.0", "1.5", "0.0",
                             "--snapshot", "0", "--quad-points", "60",
                             "--max-iterations", "40")
        assert code == 0
        rec = json.loads(out)
        assert "cost" in rec and "trajectory" in rec
        assert len(rec["path"]) == 64
