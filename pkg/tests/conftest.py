import numpy as np
import pytest

from flownav.geometry import Box
from flownav.store import BlockStore, MeshMeta, ingest


def grid_arrays(mesh: MeshMeta):
    xs = np.linspace(mesh.domain_min[0], mesh.domain_max[0], mesh.grid_dims[0])
    ys = np.linspace(mesh.domain_min[1], mesh.domain_max[1], mesh.grid_dims[1])
    zs = np.linspace(mesh.domain_min[2], mesh.domain_max[2], mesh.grid_dims[2])
    return np.meshgrid(xs, ys, zs, indexing="ij")


def build_dataset(root, fn, *, grid=17, times=(0.0, 0.25, 0.5, 0.75),
                  block_size=None, block_stride=None, domain=((0, 0, 0), (1, 1, 1)),
                  obstacles=()):
    """Ingest the analytic field fn(x, y, z, t) -> (u, v, w) into root."""
    dims = (grid, grid, grid) if isinstance(grid, int) else tuple(grid)
    block_size = block_size or dims
    block_stride = block_stride or block_size
    mesh = MeshMeta(
        domain_min=domain[0], domain_max=domain[1], grid_dims=dims,
        snapshot_times=np.asarray(times, dtype=float),
        block_size=block_size, block_stride=block_stride,
        obstacles=list(obstacles),
    )
    x, y, z = grid_arrays(mesh)

    def source(s):
        return fn(x, y, z, float(mesh.snapshot_times[s]))

    return ingest(source, mesh, str(root))


def linear_field(x, y, z, t):
    u = 2.0 * x + 3.0 * y - z
    v = 0.5 * x - y + 2.0 * z
    w = -x + 0.25 * y + 0.75 * z
    return u, v, w


@pytest.fixture(scope="session")
def linear_store(tmp_path_factory) -> BlockStore:
    """Single-block dyadic grid carrying a linear field (exact in float32)."""
    root = tmp_path_factory.mktemp("linear")
    return build_dataset(root, linear_field)


@pytest.fixture(scope="session")
def overlap_store(tmp_path_factory) -> BlockStore:
    """Two 12-node blocks per axis with 6 nodes of overlap (grid 16)."""
    root = tmp_path_factory.mktemp("overlap")
    return build_dataset(root, linear_field, grid=16, times=(0.0, 0.5),
                         block_size=(12, 12, 12), block_stride=(6, 6, 6),
                         domain=((0, 0, 0), (1.875, 1.875, 1.875)))  # spacing 1/8


def paper_obstacles():
    return [
        Box(lo=(-0.25, 0.0, -0.25), hi=(0.25, 1.0, 0.25)),
        Box(lo=(1.25, 0.0, -0.25), hi=(1.75, 0.5, 0.25)),
    ]


@pytest.fixture(scope="session")
def still_air_store(tmp_path_factory) -> BlockStore:
    """Zero flow everywhere, paper domain and obstacles; for env/zermelo tests."""
    root = tmp_path_factory.mktemp("still")

    def zero(x, y, z, t):
        return np.zeros_like(x), np.zeros_like(x), np.zeros_like(x)

    return build_dataset(
        root, zero, grid=(29, 25, 17),
        times=tuple(0.08750 * i for i in range(4)),
        block_size=(10, 10, 10), block_stride=(8, 8, 8),
        domain=((-2.0, 0.0, -1.0), (5.0, 3.0, 1.0)),
        obstacles=paper_obstacles(),
    )


@pytest.fixture(scope="session")
def uniform_flow_store(tmp_path_factory) -> BlockStore:
    """Constant flow (1, 0, 0) on the paper domain, no obstacles."""
    root = tmp_path_factory.mktemp("uniform")

    def one_x(x, y, z, t):
        return np.ones_like(x), np.zeros_like(x), np.zeros_like(x)

    return build_dataset(
        root, one_x, grid=(29, 25, 17),
        times=tuple(0.08750 * i for i in range(4)),
        block_size=(10, 10, 10), block_stride=(8, 8, 8),
        domain=((-2.0, 0.0, -1.0), (5.0, 3.0, 1.0)),
    )
