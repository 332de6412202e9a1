"""Layered decomposition of the depth axis and index bookkeeping.

A partition splits the nz interior depth rows into L layers of thicknesses
n^l (each >= 2) with cumulative offsets n_c[0] = 0 <= ... <= n_c[L] = nz.
Local depth j in layer l addresses global depth q = n_c[l-1] + j, so the
interface pairs alias: u^l at j = n^l and the next layer's j = 0 name the
same global row, as do j = n^l + 1 and j = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ComplexGrid2D, SquaredSlownessModel

__all__ = [
    "LayerPartition",
    "LayerView",
    "make_partition",
    "restrict_source",
    "local_to_global_depth",
    "global_to_local_depth",
    "extend_slowness",
    "build_layer_views",
]


@dataclass(frozen=True)
class LayerPartition:
    nz: int
    n_c: tuple

    def __post_init__(self):
        n_c = tuple(int(v) for v in self.n_c)
        object.__setattr__(self, "n_c", n_c)
        if n_c[0] != 0 or n_c[-1] != self.nz:
            raise ValueError("offsets must run from 0 to nz")
        diffs = np.diff(n_c)
        if np.any(diffs < 2):
            raise ValueError("infeasible partition: every layer needs n^l >= 2")

    @property
    def L(self) -> int:
        return len(self.n_c) - 1

    def thickness(self, ell: int) -> int:
        """n^l for layer ell in [1, L]."""
        if not 1 <= ell <= self.L:
            raise IndexError(f"layer {ell} out of range 1..{self.L}")
        return self.n_c[ell] - self.n_c[ell - 1]

    def thicknesses(self) -> tuple:
        return tuple(self.thickness(ell) for ell in range(1, self.L + 1))


@dataclass(frozen=True)
class LayerView:
    """One layer's local grid, extended slowness, and (optional) source."""

    ell: int
    local_grid: ComplexGrid2D
    m_tilde: SquaredSlownessModel
    f_local: np.ndarray | None = None


def make_partition(nz, L, policy="equal", offsets=None) -> LayerPartition:
    if L < 1:
        raise ValueError("need at least one layer")
    if policy == "equal":
        if nz < 2 * L:
            raise ValueError(f"infeasible partition: nz={nz} < 2L={2 * L}")
        base, rem = divmod(nz, L)
        thick = [base + 1 if ell < rem else base for ell in range(L)]
        n_c = np.concatenate([[0], np.cumsum(thick)])
        return LayerPartition(nz=nz, n_c=tuple(n_c))
    if policy == "explicit":
        if offsets is None:
            raise ValueError("explicit policy requires offsets")
        if len(offsets) != L + 1:
            raise ValueError("offsets must have length L+1")
        return LayerPartition(nz=nz, n_c=tuple(offsets))
    raise ValueError(f"unknown policy {policy!r}")


def local_to_global_depth(part: LayerPartition, ell: int, j: int, n_pml: int | None = None) -> int:
    n_layer = part.thickness(ell)
    if n_pml is not None and not (-n_pml + 1 <= j <= n_layer + n_pml):
        raise IndexError(f"local depth {j} outside layer {ell}'s extended range")
    return part.n_c[ell - 1] + j


def global_to_local_depth(part: LayerPartition, q: int) -> tuple[int, int]:
    """Owning layer and local depth for an interior global depth q in [1, nz]."""
    if not 1 <= q <= part.nz:
        raise IndexError(f"global depth {q} outside [1, {part.nz}]")
    for ell in range(1, part.L + 1):
        if q <= part.n_c[ell]:
            return ell, q - part.n_c[ell - 1]
    raise AssertionError("unreachable")


def restrict_source(f: np.ndarray, part: LayerPartition, ell: int, n_pml: int) -> np.ndarray:
    """f^l = f restricted to layer rows, zero in the layer's z pads."""
    n_layer = part.thickness(ell)
    nxe = f.shape[1]
    if f.shape[0] != part.nz + 2 * n_pml:
        raise ValueError("source extent does not match the extended grid")
    out = np.zeros((n_layer + 2 * n_pml, nxe), dtype=np.complex128)
    lo = n_pml + part.n_c[ell - 1]
    out[n_pml : n_pml + n_layer, :] = f[lo : lo + n_layer, :]
    return out


def extend_slowness(m: SquaredSlownessModel, part: LayerPartition, ell: int, n_pml: int) -> SquaredSlownessModel:
    """m-tilde: the layer's rows with j=1 / j=n^l replicated into the z pads."""
    n_layer = part.thickness(ell)
    lo = n_pml + part.n_c[ell - 1]
    rows = m.values[lo : lo + n_layer, :]
    padded = np.pad(rows, ((n_pml, n_pml), (0, 0)), mode="edge")
    return SquaredSlownessModel(padded, provenance="normal-extended")


def build_layer_views(grid: ComplexGrid2D, part: LayerPartition, m: SquaredSlownessModel,
                      f: np.ndarray | None = None) -> list[LayerView]:
    views = []
    for ell in range(1, part.L + 1):
        local = ComplexGrid2D(nx=grid.nx, nz=part.thickness(ell), h=grid.h, n_pml=grid.n_pml)
        m_tilde = extend_slowness(m, part, ell, grid.n_pml)
        f_local = None if f is None else restrict_source(f, part, ell, grid.n_pml)
        views.append(LayerView(ell=ell, local_grid=local, m_tilde=m_tilde, f_local=f_local))
    return views
