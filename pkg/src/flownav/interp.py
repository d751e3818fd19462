"""Space-time velocity interpolation over the block store.

Spatial queries use tricubic Catmull-Rom interpolation (tensor product over
the 4x4x4 node neighborhood of the containing cell, stencil indices clamped
at block edges). Results from the nearest blocks that contain the point are
blended with inverse-distance weights 1/(d + 1e-12); when no candidate block
contains the point the nearest block is evaluated regardless of its bounds.
Temporal interpolation is cubic Catmull-Rom over four control snapshots with
index clamping at the ends of the time series; query times outside the series
clamp to the first/last snapshot. Query results are cached by
(t, quantized position).
"""

from __future__ import annotations

import bisect
import math
import threading
from dataclasses import dataclass

import numba
import numpy as np

from .store import BlockStore, FieldBlock, StoreError, quantize_position

IDW_EPS = 1e-12


class InterpError(Exception):
    pass


@numba.njit(cache=True)
def _tricubic_eval(data, px0, py0, pz0, dx, dy, dz, x, y, z, out):  # pragma: no cover
    nz, ny, nx = data.shape[1], data.shape[2], data.shape[3]

    ux = (x - px0) / dx
    uy = (y - py0) / dy
    uz = (z - pz0) / dz
    ix = int(math.floor(ux))
    iy = int(math.floor(uy))
    iz = int(math.floor(uz))
    # keep the base cell inside the block; out-of-range points extrapolate
    # the edge cell's polynomial
    if ix < 0:
        ix = 0
    elif ix > nx - 2:
        ix = nx - 2
    if iy < 0:
        iy = 0
    elif iy > ny - 2:
        iy = ny - 2
    if iz < 0:
        iz = 0
    elif iz > nz - 2:
        iz = nz - 2
    fx = ux - ix
    fy = uy - iy
    fz = uz - iz

    wx = np.empty(4)
    wy = np.empty(4)
    wz = np.empty(4)
    for f, wgt in ((fx, wx), (fy, wy), (fz, wz)):
        f2 = f * f
        f3 = f2 * f
        wgt[0] = 0.5 * (-f3 + 2.0 * f2 - f)
        wgt[1] = 0.5 * (3.0 * f3 - 5.0 * f2 + 2.0)
        wgt[2] = 0.5 * (-3.0 * f3 + 4.0 * f2 + f)
        wgt[3] = 0.5 * (f3 - f2)

    for c in range(3):
        acc = 0.0
        for a in range(4):
            kz = iz - 1 + a
            if kz < 0:
                kz = 0
            elif kz > nz - 1:
                kz = nz - 1
            plane = 0.0
            for b in range(4):
                ky = iy - 1 + b
                if ky < 0:
                    ky = 0
                elif ky > ny - 1:
                    ky = ny - 1
                row = 0.0
                for e in range(4):
                    kx = ix - 1 + e
                    if kx < 0:
                        kx = 0
                    elif kx > nx - 1:
                        kx = nx - 1
                    row += wx[e] * data[c, kz, ky, kx]
                plane += wy[b] * row
            acc += wz[a] * plane
        out[c] = acc


def catmull_rom_weights(f: float) -> tuple[float, float, float, float]:
    """Uniform Catmull-Rom basis weights at fraction ``f`` within a cell."""
    f2 = f * f
    f3 = f2 * f
    return (
        0.5 * (-f3 + 2.0 * f2 - f),
        0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
        0.5 * (-3.0 * f3 + 4.0 * f2 + f),
        0.5 * (f3 - f2),
    )


def tricubic_interp(block: FieldBlock, position) -> np.ndarray:
    """Tricubic Catmull-Rom interpolation of (u, v, w) inside one block."""
    if np.any(block.spacing <= 0):
        raise InterpError(f"degenerate block spacing {block.spacing}")
    out = np.empty(3)
    p = np.asarray(position, dtype=float)
    _tricubic_eval(
        block.data,
        block.phys_min[0], block.phys_min[1], block.phys_min[2],
        block.spacing[0], block.spacing[1], block.spacing[2],
        p[0], p[1], p[2],
        out,
    )
    return out


def idw_blend(values, distances) -> np.ndarray:
    """Inverse-distance-weighted average with weights 1/(d + 1e-12)."""
    num = np.zeros(3)
    den = 0.0
    for val, d in zip(values, distances):
        w = 1.0 / (d + IDW_EPS)
        num += w * np.asarray(val)
        den += w
    return num / den


@dataclass
class TemporalStencil:
    """Four clamped control-snapshot indices bracketing a query time."""

    indices: tuple[int, int, int, int]
    times: tuple[float, float, float, float]
    alpha: float


def temporal_stencil_fast(times: list[float], t: float):
    i = bisect.bisect_right(times, t) - 1
    n = len(times)
    i = min(max(i, 0), n - 2)
    alpha = (t - times[i]) / (times[i + 1] - times[i])
    return ((max(0, i - 1), i, i + 1, min(n - 1, i + 2)), alpha)


def temporal_stencil(times: np.ndarray, t: float) -> TemporalStencil:
    """Build the Catmull-Rom stencil for t strictly inside (t_0, t_{N-1})."""
    idx, alpha = temporal_stencil_fast([float(v) for v in times], float(t))
    return TemporalStencil(
        indices=idx,
        times=tuple(float(times[j]) for j in idx),
        alpha=float(alpha),
    )


def cubic_temporal_interp(samples, alpha: float) -> np.ndarray:
    """Catmull-Rom blend of four velocity samples at blend factor ``alpha``."""
    w = catmull_rom_weights(alpha)
    s = np.asarray(samples, dtype=float)
    return w[0] * s[0] + w[1] * s[1] + w[2] * s[2] + w[3] * s[3]


class FlowField:
    """Cached space-time velocity queries against a block store.

    Safe for concurrent queries; the cache is internally synchronized and
    results do not depend on interleaving (recomputation is pure).
    """

    def __init__(self, store: BlockStore, k: int = 8, cache_precision: int = 6):
        self.store = store
        self.k = k
        self.cache_precision = cache_precision
        self.last_valid_velocity = np.zeros(3)
        self.extrapolated_queries = 0
        self.failed_queries = 0
        self.last_query_failed = False
        self._cache: dict = {}
        self._lock = threading.Lock()
        self._times = [float(v) for v in store.mesh.snapshot_times]
        # hot-path bindings
        self._nearest_raw = store.index.nearest_raw
        self._bounds = store.index.bounds
        self._load = store.load_by_ordinal

    # -- spatial ---------------------------------------------------------

    def _candidates(self, x: float, y: float, z: float, k: int):
        """(contained candidates as (dist, ordinal) pairs, nearest ordinal).

        Block bounds are time-invariant, so containment is decided once from
        the index and reused for every control snapshot.
        """
        dists, ordinals = self._nearest_raw((x, y, z), k)
        bounds = self._bounds
        contained = []
        for d, o in zip(dists, ordinals):
            b = bounds[o]
            if b[0] <= x <= b[3] and b[1] <= y <= b[4] and b[2] <= z <= b[5]:
                contained.append((d, o))
        return contained, ordinals[0]

    def _spatial(self, x: float, y: float, z: float, snapshot: int,
                 contained, nearest_ordinal: int) -> tuple[float, float, float]:
        """IDW blend of per-block tricubic results over one neighbor set."""
        load = self._load
        out = np.empty(3)
        if not contained:
            # fall back to the nearest block regardless of its bounds
            blk = load(snapshot, nearest_ordinal)
            self.extrapolated_queries += 1
            _tricubic_eval(blk.data, *blk.geom, x, y, z, out)
            return out[0], out[1], out[2]
        if len(contained) == 1:
            # single containing block: identical to its tricubic result
            blk = load(snapshot, contained[0][1])
            _tricubic_eval(blk.data, *blk.geom, x, y, z, out)
            return out[0], out[1], out[2]
        n0 = n1 = n2 = den = 0.0
        for d, o in contained:
            blk = load(snapshot, o)
            _tricubic_eval(blk.data, *blk.geom, x, y, z, out)
            w = 1.0 / (d + IDW_EPS)
            n0 += w * out[0]
            n1 += w * out[1]
            n2 += w * out[2]
            den += w
        return n0 / den, n1 / den, n2 / den

    def spatial_interp_for_snapshot(self, position, snapshot: int,
                                    k: int | None = None) -> np.ndarray:
        """Blend tricubic results of the k nearest blocks containing the point."""
        k = self.k if k is None else k
        x, y, z = self._clamp(position)
        self.store._check_snapshot(snapshot)
        contained, nearest = self._candidates(x, y, z, k)
        return np.array(self._spatial(x, y, z, snapshot, contained, nearest))

    # -- full space-time query -------------------------------------------

    def _clamp(self, position) -> tuple[float, float, float]:
        dmin = self.store.dmin
        dmax = self.store.dmax
        x = float(position[0])
        y = float(position[1])
        z = float(position[2])
        if x < dmin[0]:
            x = dmin[0]
        elif x > dmax[0]:
            x = dmax[0]
        if y < dmin[1]:
            y = dmin[1]
        elif y > dmax[1]:
            y = dmax[1]
        if z < dmin[2]:
            z = dmin[2]
        elif z > dmax[2]:
            z = dmax[2]
        return x, y, z

    def velocity(self, position, t: float, k: int | None = None) -> np.ndarray:
        """Interpolated velocity u(x, y, z, t); the position is clamped to the
        domain and times outside the snapshot range clamp to the ends.

        Storage failures do not raise: the last valid velocity is returned and
        the failure is counted in ``failed_queries`` / ``last_query_failed``.
        """
        k = self.k if k is None else k
        x, y, z = self._clamp(position)
        t = float(t)
        p = self.cache_precision
        key = (t, round(x, p), round(y, p), round(z, p), k)
        hit = self._cache.get(key)  # atomic under the GIL; writes are locked
        if hit is not None:
            self.last_query_failed = False
            return hit.copy()

        times = self._times
        try:
            contained, nearest = self._candidates(x, y, z, k)
            if t <= times[0]:
                vel = self._spatial(x, y, z, 0, contained, nearest)
            elif t >= times[-1]:
                vel = self._spatial(x, y, z, len(times) - 1, contained, nearest)
            else:
                stencil = temporal_stencil_fast(times, t)
                i0, i1, i2, i3 = stencil[0]
                alpha = stencil[1]
                s0 = self._spatial(x, y, z, i0, contained, nearest)
                s1 = self._spatial(x, y, z, i1, contained, nearest)
                s2 = self._spatial(x, y, z, i2, contained, nearest)
                s3 = self._spatial(x, y, z, i3, contained, nearest)
                w0, w1, w2, w3 = catmull_rom_weights(alpha)
                vel = (w0 * s0[0] + w1 * s1[0] + w2 * s2[0] + w3 * s3[0],
                       w0 * s0[1] + w1 * s1[1] + w2 * s2[1] + w3 * s3[1],
                       w0 * s0[2] + w1 * s1[2] + w2 * s2[2] + w3 * s3[2])
        except StoreError:
            self.failed_queries += 1
            self.last_query_failed = True
            return self.last_valid_velocity.copy()

        arr = np.array(vel)
        with self._lock:
            self._cache[key] = arr
            self.last_valid_velocity = arr
        self.last_query_failed = False
        return arr.copy()

    def clear_cache(self):
        with self._lock:
            self._cache.clear()
