"""Block-decomposed storage of gridded velocity snapshots.

Each snapshot of a structured-grid velocity field is split into fixed-size,
overlapping blocks written as one binary file per (snapshot, block). Block
centers are indexed in a KD-tree for nearest-neighbor queries, and blocks are
loaded on demand through an LRU cache with hit/miss/disk-read counters.

Block file layout (little-endian), named ``t{T:05}_i{I:04}_j{J:04}_k{K:04}.ufb``:
magic "UFB1"; u32 nx,ny,nz; u32 i0,j0,k0; f64 x0,y0,z0; f64 dx,dy,dz; then
u, v, w as three consecutive f32 arrays of nx*ny*nz values, x-index fastest.
A ``mesh.json`` sidecar holds the grid metadata.
"""

from __future__ import annotations

import json
import os
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Box

MAGIC = b"UFB1"
_HEADER = struct.Struct("<4s3I3I3d3d")

BlockKey = tuple[int, int, int]


class StoreError(Exception):
    """Raised for missing or corrupt block files and invalid ingest input."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class MeshMeta:
    """Geometry and layout of one dataset: grid, snapshots, blocks, obstacles.

    Lengths are in units of the obstacle height ``h``; times in ``h / u_inf``.
    """

    domain_min: np.ndarray
    domain_max: np.ndarray
    grid_dims: tuple[int, int, int]
    snapshot_times: np.ndarray
    block_size: tuple[int, int, int]
    block_stride: tuple[int, int, int]
    obstacles: list[Box] = field(default_factory=list)
    h: float = 1.0
    u_inf: float = 1.0

    def __post_init__(self):
        self.domain_min = np.asarray(self.domain_min, dtype=float)
        self.domain_max = np.asarray(self.domain_max, dtype=float)
        self.snapshot_times = np.asarray(self.snapshot_times, dtype=float)
        self.grid_dims = tuple(int(n) for n in self.grid_dims)
        self.block_size = tuple(int(n) for n in self.block_size)
        self.block_stride = tuple(int(n) for n in self.block_stride)
        self.validate()

    def validate(self):
        if np.any(self.domain_max <= self.domain_min):
            raise ValueError("domain_max must exceed domain_min componentwise")
        if any(n < 2 for n in self.grid_dims):
            raise ValueError("grid_dims must be >= 2 per axis")
        dt = np.diff(self.snapshot_times)
        if self.snapshot_times.size < 1 or (dt.size and np.any(dt <= 0)):
            raise ValueError("snapshot_times must be nonempty and strictly increasing")
        for bs, st, n in zip(self.block_size, self.block_stride, self.grid_dims):
            if bs < 2 or st < 1:
                raise ValueError("block_size >= 2 and block_stride >= 1 required")
            if st > bs:
                raise ValueError("block_stride must not exceed block_size (overlap required)")
            if bs > n:
                raise ValueError("block_size must not exceed grid_dims")
        for box in self.obstacles:
            if not (np.all(np.asarray(box.lo) >= self.domain_min - 1e-12)
                    and np.all(np.asarray(box.hi) <= self.domain_max + 1e-12)):
                raise ValueError(f"obstacle {box} outside domain")

    @property
    def spacing(self) -> np.ndarray:
        return (self.domain_max - self.domain_min) / (np.array(self.grid_dims) - 1)

    @property
    def n_snapshots(self) -> int:
        return int(self.snapshot_times.size)

    def block_origins(self) -> tuple[list[int], list[int], list[int]]:
        """Per-axis block origin indices; consecutive blocks overlap and the
        last block always covers the final grid node (padded past the edge)."""
        axes = []
        for n, bs, st in zip(self.grid_dims, self.block_size, self.block_stride):
            origins = [0]
            while origins[-1] + bs < n:
                origins.append(origins[-1] + st)
            axes.append(origins)
        return tuple(axes)

    def block_extent(self) -> np.ndarray:
        """Physical size of one block along each axis."""
        return (np.array(self.block_size) - 1) * self.spacing

    def to_dict(self) -> dict:
        return {
            "domain_min": self.domain_min.tolist(),
            "domain_max": self.domain_max.tolist(),
            "grid_dims": list(self.grid_dims),
            "snapshot_times": self.snapshot_times.tolist(),
            "block_size": list(self.block_size),
            "block_stride": list(self.block_stride),
            "obstacles": [b.to_dict() for b in self.obstacles],
            "h": self.h,
            "u_inf": self.u_inf,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeshMeta":
        return cls(
            domain_min=d["domain_min"],
            domain_max=d["domain_max"],
            grid_dims=tuple(d["grid_dims"]),
            snapshot_times=d["snapshot_times"],
            block_size=tuple(d["block_size"]),
            block_stride=tuple(d["block_stride"]),
            obstacles=[Box.from_dict(b) for b in d.get("obstacles", [])],
            h=float(d.get("h", 1.0)),
            u_inf=float(d.get("u_inf", 1.0)),
        )

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "MeshMeta":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass
class FieldBlock:
    """One snapshot sub-volume.

    ``data`` stacks the three velocity components as float32 with shape
    (3, nz, ny, nx), C-contiguous, so the in-memory order matches the file
    order (x fastest, then y, then z).
    """

    origin_index: tuple[int, int, int]
    phys_min: np.ndarray
    phys_max: np.ndarray
    spacing: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        # scalar copies for the interpolation hot path
        self.bounds = (float(self.phys_min[0]), float(self.phys_min[1]), float(self.phys_min[2]),
                       float(self.phys_max[0]), float(self.phys_max[1]), float(self.phys_max[2]))
        self.geom = (float(self.phys_min[0]), float(self.phys_min[1]), float(self.phys_min[2]),
                     float(self.spacing[0]), float(self.spacing[1]), float(self.spacing[2]))

    @property
    def u(self) -> np.ndarray:
        return self.data[0].ravel()

    @property
    def v(self) -> np.ndarray:
        return self.data[1].ravel()

    @property
    def w(self) -> np.ndarray:
        return self.data[2].ravel()

    @property
    def shape(self) -> tuple[int, int, int]:
        # (nx, ny, nz)
        return self.data.shape[3], self.data.shape[2], self.data.shape[1]

    def contains(self, p) -> bool:
        return bool(np.all(p >= self.phys_min) and np.all(p <= self.phys_max))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.phys_min + self.phys_max)


def block_filename(snapshot: int, key: BlockKey) -> str:
    return f"t{snapshot:05d}_i{key[0]:04d}_j{key[1]:04d}_k{key[2]:04d}.ufb"


def write_block(path: str, block: FieldBlock):
    nx, ny, nz = block.shape
    header = _HEADER.pack(
        MAGIC, nx, ny, nz,
        *[int(i) for i in block.origin_index],
        *[float(c) for c in block.phys_min],
        *[float(s) for s in block.spacing],
    )
    payload = np.ascontiguousarray(block.data, dtype="<f4")
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def read_block(path: str) -> FieldBlock:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise StoreError("missing_block", f"block file not found: {path}") from None
    if len(raw) < _HEADER.size:
        raise StoreError("corrupt_block", f"truncated header: {path}")
    magic, nx, ny, nz, i0, j0, k0, x0, y0, z0, dx, dy, dz = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise StoreError("corrupt_block", f"bad magic in {path}")
    count = nx * ny * nz
    expected = _HEADER.size + 3 * 4 * count
    if len(raw) != expected:
        raise StoreError("corrupt_block", f"bad length in {path}: {len(raw)} != {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(3, nz, ny, nx)
    spacing = np.array([dx, dy, dz])
    phys_min = np.array([x0, y0, z0])
    phys_max = phys_min + (np.array([nx, ny, nz]) - 1) * spacing
    return FieldBlock(
        origin_index=(i0, j0, k0),
        phys_min=phys_min,
        phys_max=phys_max,
        spacing=spacing,
        data=data.copy(),
    )


def clamp_position(position, mesh: MeshMeta) -> np.ndarray:
    """Project a point componentwise onto [domain_min, domain_max]."""
    return np.minimum(np.maximum(np.asarray(position, dtype=float), mesh.domain_min),
                      mesh.domain_max)


def quantize_position(position, precision: int) -> tuple[float, float, float]:
    """Round each component to ``precision`` decimal digits to form a cache key."""
    return tuple(round(float(c), precision) for c in position)


def ingest(source, mesh: MeshMeta, root: str) -> "BlockStore":
    """Split raw snapshots into overlapping block files under ``root``.

    ``source`` is a callable mapping a snapshot index to three arrays
    (u, v, w), each of shape ``grid_dims`` indexed [ix, iy, iz]. Blocks that
    extend past the grid edge are padded by replicating the edge values, so
    every file has identical size. Writes ``mesh.json`` alongside the blocks
    and verifies that every grid cell is covered by at least one block.
    """
    os.makedirs(root, exist_ok=True)
    if not os.access(root, os.W_OK):
        raise StoreError("unwritable", f"output directory not writable: {root}")
    mesh.validate()
    mesh.save(os.path.join(root, "mesh.json"))

    nx, ny, nz = mesh.grid_dims
    bsx, bsy, bsz = mesh.block_size
    ox, oy, oz = mesh.block_origins()
    spacing = mesh.spacing

    covered = [np.zeros(n, dtype=bool) for n in mesh.grid_dims]
    for axis, origins in enumerate((ox, oy, oz)):
        for o in origins:
            covered[axis][o:o + mesh.block_size[axis]] = True
    if not all(c.all() for c in covered):
        raise StoreError("coverage", "block layout leaves grid cells uncovered")

    for s in range(mesh.n_snapshots):
        u, v, w = source(s)
        full = np.stack([
            np.asarray(a, dtype=np.float32).transpose(2, 1, 0)  # -> (nz, ny, nx)
            for a in (u, v, w)
        ])
        if full.shape != (3, nz, ny, nx):
            raise StoreError(
                "dimension_mismatch",
                f"snapshot {s}: expected per-component shape {mesh.grid_dims}, "
                f"got {tuple(np.asarray(u).shape)}",
            )
        if not np.isfinite(full).all():
            raise StoreError("non_finite", f"snapshot {s} contains non-finite values")
        for bi, o_i in enumerate(ox):
            xi = np.clip(np.arange(o_i, o_i + bsx), 0, nx - 1)
            for bj, o_j in enumerate(oy):
                yi = np.clip(np.arange(o_j, o_j + bsy), 0, ny - 1)
                for bk, o_k in enumerate(oz):
                    zi = np.clip(np.arange(o_k, o_k + bsz), 0, nz - 1)
                    sub = full[:, zi[:, None, None], yi[None, :, None], xi[None, None, :]]
                    phys_min = mesh.domain_min + np.array([o_i, o_j, o_k]) * spacing
                    block = FieldBlock(
                        origin_index=(o_i, o_j, o_k),
                        phys_min=phys_min,
                        phys_max=phys_min + (np.array([bsx, bsy, bsz]) - 1) * spacing,
                        spacing=spacing.copy(),
                        data=np.ascontiguousarray(sub),
                    )
                    write_block(os.path.join(root, block_filename(s, (bi, bj, bk))), block)
    return BlockStore(root)


class BlockIndex:
    """KD-tree over block centers plus the block-key -> filename map.

    The block layout is time-invariant, so one geometric tree serves every
    snapshot.
    """

    def __init__(self, mesh: MeshMeta):
        ox, oy, oz = mesh.block_origins()
        spacing = mesh.spacing
        ext = (np.array(mesh.block_size) - 1) * spacing
        keys = []
        centers = []
        bounds = []
        for bi, o_i in enumerate(ox):
            for bj, o_j in enumerate(oy):
                for bk, o_k in enumerate(oz):
                    keys.append((bi, bj, bk))
                    # same float expression as ingest/write_block so containment
                    # decisions match the stored block bounds bit for bit
                    lo = mesh.domain_min + np.array([o_i, o_j, o_k]) * spacing
                    hi = lo + ext
                    centers.append(0.5 * (lo + hi))
                    bounds.append((lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]))
        self.keys: list[BlockKey] = keys
        self.centers = np.array(centers)
        self.tree = cKDTree(self.centers)
        self.bounds = bounds  # per-ordinal (x0,y0,z0,x1,y1,z1), time-invariant

    def __len__(self) -> int:
        return len(self.keys)

    def nearest_raw(self, position, k: int) -> tuple[list[float], list[int]]:
        """Distances and block ordinals of the k nearest centers, ascending."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self.keys:
            raise StoreError("empty_index", "no blocks indexed")
        k_eff = min(k, len(self.keys))
        dists, idxs = self.tree.query(position, k=k_eff)
        if k_eff == 1:
            return [float(dists)], [int(idxs)]
        return dists.tolist(), idxs.tolist()

    def nearest(self, position, k: int) -> list[tuple[BlockKey, float]]:
        dists, idxs = self.nearest_raw(np.asarray(position, dtype=float), k)
        out = [(self.keys[i], d) for d, i in zip(dists, idxs)]
        out.sort(key=lambda kd: (kd[1], kd[0]))
        return out


class BlockCache:
    """Bounded LRU map from (snapshot, block key) to FieldBlock.

    Thread-safe; counters are monotone non-decreasing and a disk read happens
    exactly once per miss.
    """

    def __init__(self, capacity: int = 512):
        if capacity < 1:
            raise ValueError("cache capacity must be >= 1")
        self.capacity = capacity
        self.hits = 0
        self.misses = 0
        self.disk_reads = 0
        self._map: OrderedDict[tuple[int, BlockKey], FieldBlock] = OrderedDict()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._map)

    def lookup(self, ck) -> FieldBlock | None:
        with self._lock:
            blk = self._map.get(ck)
            if blk is not None:
                self.hits += 1
                self._map.move_to_end(ck)
            return blk

    def insert(self, ck, blk: FieldBlock):
        with self._lock:
            self._map[ck] = blk
            if len(self._map) > self.capacity:
                self._map.popitem(last=False)

    def get(self, ck, loader) -> FieldBlock:
        blk = self.lookup(ck)
        if blk is not None:
            return blk
        with self._lock:
            self.misses += 1
        blk = loader()  # may raise StoreError; cache is left unchanged
        with self._lock:
            self.disk_reads += 1
        self.insert(ck, blk)
        return blk

    def clear(self):
        with self._lock:
            self._map.clear()


class BlockStore:
    """Read side of a block dataset: metadata, index, and cached block loads."""

    def __init__(self, root: str, cache_capacity: int = 512):
        self.root = root
        mesh_path = os.path.join(root, "mesh.json")
        if not os.path.exists(mesh_path):
            raise StoreError("missing_mesh", f"mesh.json not found under {root}")
        self.mesh = MeshMeta.load(mesh_path)
        self.index = BlockIndex(self.mesh)
        self.cache = BlockCache(cache_capacity)
        self._ordinal = {key: i for i, key in enumerate(self.index.keys)}
        # scalar domain bounds for the query hot path
        self.dmin = tuple(float(v) for v in self.mesh.domain_min)
        self.dmax = tuple(float(v) for v in self.mesh.domain_max)
        self._verify_files()

    def _verify_files(self):
        present = {f for f in os.listdir(self.root) if f.endswith(".ufb")}
        missing = []
        for s in range(self.mesh.n_snapshots):
            for key in self.index.keys:
                name = block_filename(s, key)
                if name not in present:
                    missing.append(name)
        if missing:
            raise StoreError(
                "missing_block",
                f"{len(missing)} block files missing (first: {missing[0]})",
            )

    @property
    def n_blocks(self) -> int:
        return len(self.index)

    def nearest_blocks(self, position, snapshot: int, k: int) -> list[tuple[BlockKey, float]]:
        """The k blocks whose centers are closest to ``position``, ascending
        by distance with ties broken by block key order."""
        self._check_snapshot(snapshot)
        return self.index.nearest(position, k)

    def load_block(self, snapshot: int, key: BlockKey) -> FieldBlock:
        self._check_snapshot(snapshot)
        if key not in self._ordinal:
            raise StoreError("missing_block", f"no such block key {key}")
        return self.load_by_ordinal(snapshot, self._ordinal[key])

    def load_by_ordinal(self, snapshot: int, ordinal: int) -> FieldBlock:
        ck = (snapshot, ordinal)
        blk = self.cache.lookup(ck)
        if blk is not None:
            return blk
        key = self.index.keys[ordinal]
        return self.cache.get(
            ck, lambda: read_block(os.path.join(self.root, block_filename(snapshot, key))))

    def _check_snapshot(self, snapshot: int):
        if not 0 <= snapshot < self.mesh.n_snapshots:
            raise StoreError("bad_snapshot", f"snapshot {snapshot} out of range")

    def clamp_position(self, position) -> np.ndarray:
        return clamp_position(position, self.mesh)

    def reassemble_snapshot(self, snapshot: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rebuild the full (u, v, w) arrays of one snapshot from its blocks.

        Any covering block supplies a given cell; padded cells beyond the grid
        edge are ignored.
        """
        nx, ny, nz = self.mesh.grid_dims
        full = np.empty((3, nz, ny, nx), dtype=np.float32)
        ox, oy, oz = self.mesh.block_origins()
        bsx, bsy, bsz = self.mesh.block_size
        for bi, o_i in enumerate(ox):
            lx = min(bsx, nx - o_i)
            for bj, o_j in enumerate(oy):
                ly = min(bsy, ny - o_j)
                for bk, o_k in enumerate(oz):
                    lz = min(bsz, nz - o_k)
                    blk = self.load_block(snapshot, (bi, bj, bk))
                    full[:, o_k:o_k + lz, o_j:o_j + ly, o_i:o_i + lx] = \
                        blk.data[:, :lz, :ly, :lx]
        u, v, w = (full[c].transpose(2, 1, 0).copy() for c in range(3))
        return u, v, w
