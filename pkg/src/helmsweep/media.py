"""Synthetic velocity models and the VM2D binary container.

Models are built on a grid's interior window in velocity units and padded
into the absorbing frame by edge replication. The VM2D file carries a
row-major float64 little-endian array over the extended grid with a header
naming the unit: velocity, squared slowness, or a generic real field dump.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .grid import ComplexGrid2D, SquaredSlownessModel

__all__ = [
    "interior_coordinates",
    "homogeneous",
    "gradient",
    "rough_inclusions",
    "cavity",
    "build_medium",
    "MEDIA_NAMES",
    "VM2D_MAGIC",
    "VM2D_VERSION",
    "UNIT_VELOCITY",
    "UNIT_SLOWNESS_SQ",
    "UNIT_FIELD",
    "VM2DFile",
    "write_vm2d",
    "read_vm2d",
    "write_model",
    "ingest_model",
]


def interior_coordinates(grid: ComplexGrid2D):
    """Meshgrid (X, Z) over the interior nodes, shapes (nz, nx)."""
    x = grid.x_coords()[grid.interior_x_slice()]
    z = grid.z_coords()[grid.interior_z_slice()]
    return np.meshgrid(x, z)


def _from_velocity_interior(grid, c):
    if np.any(c <= 0):
        raise ValueError("velocity must be strictly positive")
    return SquaredSlownessModel.from_interior(1.0 / c**2, grid.n_pml)


def homogeneous(grid: ComplexGrid2D, c: float = 1.0) -> SquaredSlownessModel:
    c_arr = np.full((grid.nz, grid.nx), float(c))
    return _from_velocity_interior(grid, c_arr)


def gradient(grid: ComplexGrid2D, c0=1.0, gx=0.1, gz=0.1) -> SquaredSlownessModel:
    X, Z = interior_coordinates(grid)
    return _from_velocity_interior(grid, c0 + gx * X + gz * Z)


def rough_inclusions(
    grid: ComplexGrid2D,
    seed: int = 0,
    count: int = 12,
    r_lo: float = 0.04,
    r_hi: float = 0.12,
    c_lo: float = 0.5,
    c_hi: float = 3.0,
    smooth_passes: int = 0,
) -> SquaredSlownessModel:
    """Discontinuous disks of random speed over the gradient background.

    smooth_passes > 0 box-blurs the speed map, giving the smoothed variant.
    """
    X, Z = interior_coordinates(grid)
    c = 1.0 + 0.1 * X + 0.1 * Z
    rng = np.random.default_rng(seed)
    for _ in range(count):
        cx, cz = rng.uniform(0.1, 0.9, size=2)
        radius = rng.uniform(r_lo, r_hi)
        speed = rng.uniform(c_lo, c_hi)
        c = np.where(np.hypot(X - cx, Z - cz) <= radius, speed, c)
    for _ in range(smooth_passes):
        padded = np.pad(c, 1, mode="edge")
        c = (
            padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2]
            + padded[1:-1, 2:] + padded[1:-1, 1:-1]
        ) / 5.0
    return _from_velocity_interior(grid, c)


def cavity(
    grid: ComplexGrid2D,
    wall_c: float = 5.0,
    center=(0.5, 0.5),
    r_in: float = 0.15,
    r_out: float = 0.3,
    gap_deg: float = 45.0,
    gap_center_deg: float = 90.0,
) -> SquaredSlownessModel:
    """Open annular wave guide: a fast ring with an angular gap, over the
    gradient background, so waves enter through the gap and resonate."""
    if not 0 < r_in < r_out:
        raise ValueError("need 0 < r_in < r_out")
    X, Z = interior_coordinates(grid)
    c = 1.0 + 0.1 * X + 0.1 * Z
    dx, dz = X - center[0], Z - center[1]
    rad = np.hypot(dx, dz)
    ang = np.degrees(np.arctan2(dz, dx))
    off = np.abs((ang - gap_center_deg + 180.0) % 360.0 - 180.0)
    ring = (rad >= r_in) & (rad <= r_out) & (off > gap_deg / 2.0)
    c = np.where(ring, wall_c, c)
    return _from_velocity_interior(grid, c)


_BUILDERS = {
    "homogeneous": homogeneous,
    "gradient": gradient,
    "rough": rough_inclusions,
    "cavity": cavity,
}

MEDIA_NAMES = tuple(sorted(_BUILDERS))


def build_medium(grid: ComplexGrid2D, name: str, seed: int = 0, **params) -> SquaredSlownessModel:
    if name not in _BUILDERS:
        raise ValueError(f"unknown medium {name!r}; choose from {MEDIA_NAMES}")
    if name == "rough":
        params.setdefault("seed", seed)
    return _BUILDERS[name](grid, **params)


VM2D_MAGIC = b"VM2D"
VM2D_VERSION = 1
UNIT_VELOCITY = 0
UNIT_SLOWNESS_SQ = 1
UNIT_FIELD = 2

_HEADER = struct.Struct("<4sIQQdI")  # magic, version, nx_ext, nz_ext, h, unit


@dataclass(frozen=True)
class VM2DFile:
    version: int
    h: float
    unit: int
    values: np.ndarray  # (nz_ext, nx_ext) float64

    @property
    def nx_ext(self) -> int:
        return self.values.shape[1]

    @property
    def nz_ext(self) -> int:
        return self.values.shape[0]


def write_vm2d(path, values: np.ndarray, h: float, unit: int) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("VM2D payload must be 2D (nz_ext, nx_ext)")
    if unit not in (UNIT_VELOCITY, UNIT_SLOWNESS_SQ, UNIT_FIELD):
        raise ValueError(f"unknown unit flag {unit}")
    if not np.all(np.isfinite(values)):
        raise ValueError("VM2D payload must be finite")
    if unit != UNIT_FIELD and np.any(values <= 0):
        raise ValueError("medium values must be strictly positive")
    if h <= 0:
        raise ValueError("grid spacing must be positive")
    nz_ext, nx_ext = values.shape
    header = _HEADER.pack(VM2D_MAGIC, VM2D_VERSION, nx_ext, nz_ext, float(h), unit)
    payload = np.ascontiguousarray(values).astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_vm2d(path) -> VM2DFile:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"truncated VM2D header: {len(raw)} < {_HEADER.size} bytes")
    magic, version, nx_ext, nz_ext, h, unit = _HEADER.unpack_from(raw)
    if magic != VM2D_MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {VM2D_MAGIC!r}")
    if version != VM2D_VERSION:
        raise ValueError(f"unsupported VM2D version {version}")
    if unit not in (UNIT_VELOCITY, UNIT_SLOWNESS_SQ, UNIT_FIELD):
        raise ValueError(f"unknown unit flag {unit}")
    expected = _HEADER.size + 8 * nx_ext * nz_ext
    if len(raw) != expected:
        raise ValueError(f"VM2D payload length mismatch: expected {expected} bytes, got {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(nz_ext, nx_ext)
    if not np.all(np.isfinite(values)):
        raise ValueError("VM2D payload contains non-finite values")
    return VM2DFile(version=version, h=float(h), unit=unit, values=values.copy())


def write_model(path, model: SquaredSlownessModel, h: float) -> None:
    write_vm2d(path, model.values, h, UNIT_SLOWNESS_SQ)


def ingest_model(path) -> SquaredSlownessModel:
    """Load a medium file, converting velocity to squared slowness."""
    vm = read_vm2d(path)
    if vm.unit == UNIT_FIELD:
        raise ValueError("file holds a field dump, not a medium")
    if vm.unit == UNIT_VELOCITY:
        if np.any(vm.values <= 0):
            raise ValueError("velocity must be strictly positive")
        return SquaredSlownessModel(1.0 / vm.values**2)
    return SquaredSlownessModel(vm.values)
