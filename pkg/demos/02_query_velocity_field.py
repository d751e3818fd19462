"""Query interpolated velocities in space and time.

Queries go through tricubic Catmull-Rom interpolation inside the nearest
blocks, inverse-distance blending across overlapping blocks, and cubic
Catmull-Rom interpolation across four bracketing snapshots. Repeated queries
hit an in-memory result cache.
"""

import time

import numpy as np

from flownav import BlockStore, FlowField, SyntheticFlowSpec, synth_dataset
import os, tempfile

root = os.path.join(tempfile.gettempdir(), "flownav-demo")
if not os.path.exists(os.path.join(root, "mesh.json")):
    synth_dataset(SyntheticFlowSpec(grid_dims=(32, 32, 32), n_snapshots=6,
                                    wake_amplitude=0.5, seed=42), root)

store = BlockStore(root, cache_capacity=2048)
field = FlowField(store, k=8)

print("freestream region (upstream of the obstacles):")
for x in (-1.8, -1.0):
    v = field.velocity((x, 1.5, 0.0), 0.1)
    print(f"  u({x:+.1f}, 1.5, 0.0; t=0.1) = {v.round(6)}")

print("\nwake region (behind obstacle 1), over time:")
for t in np.linspace(0.0, 0.4, 5):
    v = field.velocity((0.6, 0.5, 0.0), float(t))
    print(f"  t={t:.3f}: u = {v.round(4)}")

p = (0.37, 1.21, -0.42)
n = 20_000
field.velocity(p, 0.2)
t0 = time.time()
for _ in range(n):
    field.velocity(p, 0.2)  # cached: identical key
cached_us = (time.time() - t0) / n * 1e6
rng = np.random.default_rng(0)
pts = rng.uniform(store.mesh.domain_min, store.mesh.domain_max, size=(n, 3))
t0 = time.time()
for q in pts:
    field.velocity(q, 0.2)
fresh_us = (time.time() - t0) / n * 1e6
print(f"\nthroughput: {fresh_us:.0f} us/query fresh, {cached_us:.1f} us/query cached")
print(f"block cache: {store.cache.hits} hits / {store.cache.disk_reads} disk reads")
