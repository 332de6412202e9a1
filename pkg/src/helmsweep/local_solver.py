"""Per-layer direct solves: factorization, Green's blocks, Newton traces,
and volume reconstruction from interface data.

Depth tags follow the local convention: a layer with n^l rows exposes the
four interface depths {0, 1, n^l, n^l+1}; local depth j lives at array row
n_pml + j - 1. The stored Green's block G(z_j, z_k) already includes the
quadrature weight h of the trace inner product, i.e. it equals the
(row j, row k) slice of (H^l)^-1 divided by h, obtained from delta columns
scaled by 1/h^2 and a final multiplication by h.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import get_lapack_funcs

from .grid import SparseOperator

__all__ = [
    "LocalFactorization",
    "InterfaceGreens",
    "factorize",
    "extract_interface_greens",
    "newton_trace",
    "reconstruct_volume",
]

_SOLVE_CHUNK = 128  # columns per batched banded solve, keeps RHS buffers small


class LocalFactorization:
    """Direct factorization of one layer operator, reusable across solves.

    method "banded" runs LAPACK's gbtrf/gbtrs with half bandwidth nx_ext;
    method "sparse" wraps scipy's sparse LU behind the same interface.
    """

    def __init__(self, op: SparseOperator, method: str = "banded", label: str = ""):
        self.shape2d = op.shape2d
        self.dim = op.dim
        self.method = method
        self.label = label or f"{op.shape2d[0]}x{op.shape2d[1]}"
        if method == "banded":
            kl = ku = op.bandwidth
            ab = np.zeros((2 * kl + ku + 1, self.dim), dtype=np.complex128, order="F")
            ab[kl + ku + op.rows - op.cols, op.cols] = op.vals
            gbtrf, gbtrs = get_lapack_funcs(("gbtrf", "gbtrs"), (ab,))
            lu, ipiv, info = gbtrf(ab, kl, ku, overwrite_ab=True)
            if info != 0:
                raise RuntimeError(
                    f"banded factorization failed on layer {self.label}: "
                    f"zero pivot at index {info} (unsuitable omega/m/PML combination?)"
                )
            self._lu, self._ipiv, self._kl, self._ku = lu, ipiv, kl, ku
            self._gbtrs = gbtrs
        elif method == "sparse":
            csc = sp.csc_matrix(op.to_csr())
            self._splu = spla.splu(csc)
        else:
            raise ValueError(f"unknown factorization method {method!r}")

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve H x = b for b of shape (dim,) or (dim, k)."""
        single = b.ndim == 1
        rhs = b.reshape(self.dim, -1)
        out = np.empty_like(rhs, dtype=np.complex128)
        for lo in range(0, rhs.shape[1], _SOLVE_CHUNK):
            chunk = np.asfortranarray(rhs[:, lo : lo + _SOLVE_CHUNK], dtype=np.complex128)
            if self.method == "banded":
                x, info = self._gbtrs(self._lu, self._kl, self._ku, chunk, self._ipiv)
                if info != 0:
                    raise RuntimeError(f"banded solve failed on layer {self.label}: info={info}")
            else:
                x = self._splu.solve(np.ascontiguousarray(chunk))
            out[:, lo : lo + _SOLVE_CHUNK] = x.reshape(self.dim, -1)
        return out[:, 0] if single else out


def factorize(op: SparseOperator, method: str = "banded", label: str = "") -> LocalFactorization:
    return LocalFactorization(op, method=method, label=label)


@dataclass
class InterfaceGreens:
    """Stored interface blocks G(z_j, z_k), keyed by local depths."""

    n_layer: int
    n_pml: int
    h: float
    blocks: dict = field(default_factory=dict)

    @property
    def depths(self) -> tuple:
        n = self.n_layer
        return (0, 1, n, n + 1)

    def row_of(self, depth: int) -> int:
        return self.n_pml + depth - 1

    def block(self, j: int, k: int) -> np.ndarray:
        return self.blocks[(j, k)]


def _depth_row(n_pml: int, depth: int) -> int:
    return n_pml + depth - 1


def extract_interface_greens(
    fact: LocalFactorization,
    n_layer: int,
    n_pml: int,
    h: float,
    source_depths=None,
) -> InterfaceGreens:
    """One batched multi-RHS solve per source depth; slices all target depths."""
    nze, nxe = fact.shape2d
    if nze != n_layer + 2 * n_pml:
        raise ValueError("factorization does not match the layer geometry")
    greens = InterfaceGreens(n_layer=n_layer, n_pml=n_pml, h=h)
    targets = greens.depths
    if source_depths is None:
        source_depths = targets
    for k in source_depths:
        row_k = _depth_row(n_pml, k)
        rhs = np.zeros((fact.dim, nxe), dtype=np.complex128)
        rhs[row_k * nxe + np.arange(nxe), np.arange(nxe)] = 1.0 / h**2
        x = fact.solve(rhs)
        for j in targets:
            row_j = _depth_row(n_pml, j)
            greens.blocks[(j, k)] = x[row_j * nxe : (row_j + 1) * nxe, :] * h
    return greens


def newton_trace(fact: LocalFactorization, f_local: np.ndarray, n_layer: int, n_pml: int) -> dict:
    """Interface values of the local solve: one solve, four row slices."""
    nze, nxe = fact.shape2d
    if f_local.shape != (nze, nxe):
        raise ValueError("local source extent mismatch")
    w = fact.solve(f_local.astype(np.complex128, copy=False).ravel()).reshape(nze, nxe)
    return {k: w[_depth_row(n_pml, k), :].copy() for k in (0, 1, n_layer, n_layer + 1)}


def reconstruct_volume(
    fact: LocalFactorization,
    f_local: np.ndarray,
    u0,
    u1,
    un,
    un1,
    n_layer: int,
    n_pml: int,
    h: float,
) -> np.ndarray:
    """Solve with interface forcings; returns the field on layer rows 1..n^l.

    The forcing is f + (1/h^2)(e_{row 1} u_0 - e_{row 0} u_1
    - e_{row n+1} u_n + e_{row n} u_{n+1}); passing None for a trace pair
    (top layer has no rows above, bottom none below) drops those terms.
    """
    nze, nxe = fact.shape2d
    g = f_local.astype(np.complex128, copy=True)
    w = 1.0 / h**2
    if u0 is not None:
        g[_depth_row(n_pml, 1), :] += w * u0
    if u1 is not None:
        g[_depth_row(n_pml, 0), :] -= w * u1
    if un is not None:
        g[_depth_row(n_pml, n_layer + 1), :] -= w * un
    if un1 is not None:
        g[_depth_row(n_pml, n_layer), :] += w * un1
    v = fact.solve(g.ravel()).reshape(nze, nxe)
    return v[n_pml : n_pml + n_layer, :]
