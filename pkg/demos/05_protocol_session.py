"""Drive the NDJSON episode protocol the way an external agent would.

Every request is one JSON line; every response carries a sequence id. Step
and reset responses include the local flow vector and a 5x5x3 flow patch so
learning agents can condition on the flow field.
"""

import json
import os
import tempfile

from flownav import BlockStore, FlowField, NavigationEnv, SyntheticFlowSpec, synth_dataset
from flownav.protocol import EpisodeSession

root = os.path.join(tempfile.gettempdir(), "flownav-demo")
if not os.path.exists(os.path.join(root, "mesh.json")):
    synth_dataset(SyntheticFlowSpec(grid_dims=(32, 32, 32), n_snapshots=6,
                                    wake_amplitude=0.5, seed=42), root)

session = EpisodeSession(NavigationEnv(FlowField(BlockStore(root, 2048))))

def rpc(line: str) -> dict:
    print(f">> {line}")
    resp = session.handle_line(line)
    shown = {k: v for k, v in resp.items() if k not in ("obs", "flow_patch")}
    if "obs" in resp:
        shown["obs"] = f"[{len(resp['obs'])} floats]"
        shown["flow_patch"] = "[5x5x3 floats]"
    print(f"<< {json.dumps(shown)}\n")
    return resp

rpc(json.dumps({"cmd": "config"}))
rpc(json.dumps({"cmd": "reset", "seed": 7}))
rpc(json.dumps({"cmd": "step", "action": [2.0, 0.1, 0.0]}))
rpc(json.dumps({"cmd": "query_flow", "x": 0.5, "y": 1.0, "z": 0.0, "t": 0.2}))
rpc("this is not json")             # structured error, session survives
rpc(json.dumps({"cmd": "step", "action": [2.0, -0.1, 0.05]}))
rpc(json.dumps({"cmd": "close"}))

print("over a real transport, run:  flownav serve --data DIR --tcp 127.0.0.1:7878")
