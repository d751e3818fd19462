"""Synthetic unsteady flow datasets (stand-in for an external CFD source).

The generated field is a uniform freestream along +x, plus a compact
oscillating wake deficit behind each obstacle, plus an optional solenoidal
perturbation built from a curl of smooth vector-potential modes so it stays
divergence-free. Everything is deterministic for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box
from .store import BlockStore, MeshMeta, ingest

PAPER_DOMAIN_MIN = (-2.0, 0.0, -1.0)
PAPER_DOMAIN_MAX = (5.0, 3.0, 1.0)
PAPER_OBSTACLES = (
    Box(lo=(-0.25, 0.0, -0.25), hi=(0.25, 1.0, 0.25)),
    Box(lo=(1.25, 0.0, -0.25), hi=(1.75, 0.5, 0.25)),
)
PAPER_DT = 0.08750


@dataclass
class SyntheticFlowSpec:
    grid_dims: tuple[int, int, int] = (64, 64, 64)
    n_snapshots: int = 8
    dt: float = PAPER_DT
    domain_min: tuple[float, float, float] = PAPER_DOMAIN_MIN
    domain_max: tuple[float, float, float] = PAPER_DOMAIN_MAX
    obstacles: tuple[Box, ...] = PAPER_OBSTACLES
    block_size: tuple[int, int, int] = (10, 10, 10)
    block_stride: tuple[int, int, int] = (8, 8, 8)
    freestream: float = 1.0
    wake_amplitude: float = 0.5
    wake_frequency: float = 0.6
    perturbation_amplitude: float = 0.0
    perturbation_modes: int = 3
    max_speed: float = 2.0
    seed: int = 0

    def validate(self):
        if self.n_snapshots < 1:
            raise ValueError("n_snapshots must be >= 1")
        bound = (abs(self.freestream) + abs(self.wake_amplitude)
                 + abs(self.perturbation_amplitude) * self.perturbation_modes)
        if bound > self.max_speed:
            raise ValueError(
                f"amplitude budget {bound:.3g} exceeds max_speed {self.max_speed}; "
                "reduce freestream/wake/perturbation amplitudes")


def _mesh_from_spec(spec: SyntheticFlowSpec) -> MeshMeta:
    times = np.arange(spec.n_snapshots) * spec.dt
    return MeshMeta(
        domain_min=spec.domain_min,
        domain_max=spec.domain_max,
        grid_dims=spec.grid_dims,
        snapshot_times=times,
        block_size=spec.block_size,
        block_stride=spec.block_stride,
        obstacles=list(spec.obstacles),
    )


def _perturbation_params(spec: SyntheticFlowSpec):
    rng = np.random.default_rng(spec.seed)
    modes = []
    for _ in range(spec.perturbation_modes):
        wave = rng.integers(1, 4, size=3).astype(float)
        phase = rng.uniform(0.0, 2.0 * math.pi, size=3)
        omega = rng.uniform(0.2, 1.0)
        modes.append((wave, phase, omega))
    return modes


def synthetic_snapshot(spec: SyntheticFlowSpec, t: float, modes=None):
    """Velocity component arrays (u, v, w), each indexed [ix, iy, iz]."""
    mesh = _mesh_from_spec(spec)
    xs = np.linspace(mesh.domain_min[0], mesh.domain_max[0], spec.grid_dims[0])
    ys = np.linspace(mesh.domain_min[1], mesh.domain_max[1], spec.grid_dims[1])
    zs = np.linspace(mesh.domain_min[2], mesh.domain_max[2], spec.grid_dims[2])
    x, y, z = np.meshgrid(xs, ys, zs, indexing="ij")

    u = np.full_like(x, float(spec.freestream))
    v = np.zeros_like(x)
    w = np.zeros_like(x)

    for i, box in enumerate(spec.obstacles):
        rear = box.hi[0]
        yc = 0.5 * (box.lo[1] + box.hi[1])
        zc = 0.5 * (box.lo[2] + box.hi[2])
        width = max(box.hi[1] - box.lo[1], box.hi[2] - box.lo[2])
        mask = x > rear
        profile = np.exp(-(((y - yc) / width) ** 2 + ((z - zc) / width) ** 2))
        decay = np.exp(-(x - rear) / 2.0)
        pulse = 0.6 + 0.4 * math.sin(2.0 * math.pi * spec.wake_frequency * t + 1.7 * i)
        u = u - spec.wake_amplitude * pulse * np.where(mask, profile * decay, 0.0)

    if spec.perturbation_amplitude > 0.0:
        if modes is None:
            modes = _perturbation_params(spec)
        lx, ly, lz = (mesh.domain_max - mesh.domain_min)
        for wave, phase, omega in modes:
            kx = 2.0 * math.pi * wave[0] / lx
            ky = 2.0 * math.pi * wave[1] / ly
            kz = 2.0 * math.pi * wave[2] / lz
            gx = kx * x + phase[2]
            gy = ky * y + phase[0]
            gz = kz * z + phase[1]
            ot = omega * t
            # velocity = s * curl(A) with vector potential
            # A = (sin(gy+ot) cos(gz), sin(gz+ot) cos(gx), sin(gx+ot) cos(gy));
            # s normalizes so each component stays within the amplitude
            s = spec.perturbation_amplitude / (kx + ky + kz)
            u = u + s * (-ky * np.sin(gx + ot) * np.sin(gy)
                         - kz * np.cos(gz + ot) * np.cos(gx))
            v = v + s * (-kz * np.sin(gy + ot) * np.sin(gz)
                         - kx * np.cos(gx + ot) * np.cos(gy))
            w = w + s * (-kx * np.sin(gz + ot) * np.sin(gx)
                         - ky * np.cos(gy + ot) * np.cos(gz))
    return u, v, w


def synth_dataset(spec: SyntheticFlowSpec, root: str) -> BlockStore:
    """Generate and ingest a synthetic dataset; returns the opened store."""
    spec.validate()
    mesh = _mesh_from_spec(spec)
    modes = _perturbation_params(spec) if spec.perturbation_amplitude > 0 else None
    times = mesh.snapshot_times

    def source(s: int):
        u, v, w = synthetic_snapshot(spec, float(times[s]), modes=modes)
        speed = np.sqrt(u * u + v * v + w * w)
        peak = float(speed.max())
        if not np.isfinite(peak) or peak > spec.max_speed:
            raise ValueError(f"generated snapshot {s} exceeds max_speed: {peak:.3g}")
        return u, v, w

    return ingest(source, mesh, root)
