import json
import subprocess
import sys

import pytest

from flowagents.client import EngineClient


def synth_dataset(root: str, grid: int, snapshots: int, seed: int = 2,
                  perturbation: float = 0.1):
    cmd = [sys.executable, "-m", "flownav", "synth", "--data", root,
           "--grid", str(grid), "--snapshots", str(snapshots),
           "--seed", str(seed), "--perturbation", str(perturbation)]
    out = subprocess.run(cmd, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory) -> str:
    root = str(tmp_path_factory.mktemp("engine16"))
    synth_dataset(root, grid=16, snapshots=3)
    return root


@pytest.fixture()
def client(small_dataset):
    c = EngineClient(dataset=small_dataset, max_steps=30)
    yield c
    c.close()
