"""Independent 1D oracles for validating the 2D interface machinery.

Everything here is deliberately small, slow, and self-contained: tridiagonal
minor recurrences (theta/phi), the closed-form tridiagonal inverse, and the
one-dimensional discrete Green's representation formula. Tests and the
``oracle-check`` CLI command use this module; the solver pipeline never does.

Conventions. A tridiagonal matrix of dimension n is stored 0-indexed as
``diag[0..n-1]``, ``sub[0..n-2]`` (entry (k+1, k)) and ``sup[0..n-2]``
(entry (k, k+1)). The minor sequences are

    theta[i] = det of the leading i-by-i block,   theta[0] = 1,
    phi[i]   = det of the trailing block starting at row i,   phi[n] = 1,

computed by determinant expansion:

    theta[i] = diag[i-1]*theta[i-1] - sub[i-2]*sup[i-2]*theta[i-2]
    phi[i]   = diag[i]*phi[i+1]   - sub[i]*sup[i]*phi[i+2]

Minors of Helmholtz-sized entries overflow double precision quickly, so the
recurrences run with a power-of-two scaling guard (triggered at 1e150); the
inverse formula combines the scaled factors so only the final, O(1)-sized
entry is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tridiag1D",
    "assemble_1d",
    "theta_phi",
    "inverse_entry",
    "inverse_dense",
    "grf_1d",
]

# Renormalization threshold for the minor recurrences.
_SCALE_LIMIT = 1e150


@dataclass(frozen=True)
class Tridiag1D:
    """Tridiagonal operator; symmetric (sub == sup) for assembled Helmholtz."""

    diag: np.ndarray
    sub: np.ndarray
    sup: np.ndarray

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=np.complex128)
        sub = np.asarray(self.sub, dtype=np.complex128)
        sup = np.asarray(self.sup, dtype=np.complex128)
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "sub", sub)
        object.__setattr__(self, "sup", sup)
        n = diag.size
        if n < 1:
            raise ValueError("empty tridiagonal")
        if sub.size != n - 1 or sup.size != n - 1:
            raise ValueError("off-diagonal lengths must be n-1")

    @property
    def n(self) -> int:
        return self.diag.size

    @classmethod
    def symmetric(cls, diag, off) -> "Tridiag1D":
        off = np.asarray(off, dtype=np.complex128)
        return cls(np.asarray(diag, dtype=np.complex128), off, off.copy())

    def to_dense(self) -> np.ndarray:
        dense = np.diag(self.diag)
        idx = np.arange(self.n - 1)
        dense[idx + 1, idx] = self.sub
        dense[idx, idx + 1] = self.sup
        return dense

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[1:] += self.sub * x[:-1]
        y[:-1] += self.sup * x[1:]
        return y


def assemble_1d(nx, h, n_pml, omega, m, pml_c=None):
    """1D Helmholtz operator with PML on both ends, symmetric form.

    The grid carries ``nx`` interior points plus ``n_pml`` points per side,
    at coordinates x_p = p*h for p in [-n_pml+1, nx+n_pml]; the physical
    interval is [0, (nx+1)*h] and the damping profile is zero there. Rows
    are scaled by 1/alpha so sub == sup exactly. ``m`` may be a scalar or an
    array over the extended grid.
    """
    from . import grid as _grid

    if pml_c is None:
        pml_c = _grid.DEFAULT_PML_C
    n_ext = nx + 2 * n_pml
    m_arr = np.broadcast_to(np.asarray(m, dtype=np.float64), (n_ext,))
    length = (nx + 1) * h
    profile = _grid.PMLProfile(C=pml_c, delta=n_pml * h, omega=omega)
    # node and midpoint coordinates, p running from -n_pml+1
    p = np.arange(-n_pml + 1, nx + n_pml + 1, dtype=np.float64)
    a_node = _grid.alpha(p * h, length, profile)
    a_mid = _grid.alpha((p[:-1] + 0.5) * h, length, profile)
    a_lo = _grid.alpha((p - 0.5) * h, length, profile)
    a_hi = _grid.alpha((p + 0.5) * h, length, profile)
    diag = (a_lo + a_hi) / h**2 - omega**2 * m_arr / a_node
    off = -a_mid / h**2
    return Tridiag1D(diag, off.copy(), off.copy())


def _scaled_theta(tri: Tridiag1D):
    """Leading minors as (mantissa, exponent-of-2) pairs, length n+1."""
    n = tri.n
    mant = np.empty(n + 1, dtype=np.complex128)
    ex = np.zeros(n + 1, dtype=np.int64)
    mant[0] = 1.0
    prev2, prev1 = 0.0 + 0j, 1.0 + 0j  # theta_{-1}, theta_0 at current scale
    e2, e1 = 0, 0
    for i in range(1, n + 1):
        b = tri.diag[i - 1]
        if i >= 2:
            coupling = tri.sub[i - 2] * tri.sup[i - 2]
        else:
            coupling = 0.0
        # align prev2 to prev1's scale before combining
        cur = b * prev1 - coupling * prev2 * 2.0 ** float(e2 - e1)
        ecur = e1
        mag = abs(cur)
        if mag > _SCALE_LIMIT:
            shift = int(np.ceil(np.log2(mag / _SCALE_LIMIT)))
            cur *= 2.0 ** float(-shift)
            ecur += shift
        mant[i] = cur
        ex[i] = ecur
        prev2, e2 = prev1, e1
        prev1, e1 = cur, ecur
    return mant, ex


def _scaled_phi(tri: Tridiag1D):
    """Trailing minors as (mantissa, exponent-of-2) pairs, length n+1."""
    n = tri.n
    mant = np.empty(n + 1, dtype=np.complex128)
    ex = np.zeros(n + 1, dtype=np.int64)
    mant[n] = 1.0
    prev2, prev1 = 0.0 + 0j, 1.0 + 0j  # phi_{n+1}, phi_n
    e2, e1 = 0, 0
    for i in range(n - 1, -1, -1):
        b = tri.diag[i]
        if i <= n - 2:
            coupling = tri.sub[i] * tri.sup[i]
        else:
            coupling = 0.0
        cur = b * prev1 - coupling * prev2 * 2.0 ** float(e2 - e1)
        ecur = e1
        mag = abs(cur)
        if mag > _SCALE_LIMIT:
            shift = int(np.ceil(np.log2(mag / _SCALE_LIMIT)))
            cur *= 2.0 ** float(-shift)
            ecur += shift
        mant[i] = cur
        ex[i] = ecur
        prev2, e2 = prev1, e1
        prev1, e1 = cur, ecur
    return mant, ex


def theta_phi(tri: Tridiag1D):
    """Minor sequences (theta[0..n], phi[0..n]); overflow guard folded back.

    theta[i] is the determinant of the leading i-by-i block (theta[0] = 1)
    and phi[i] the determinant of the trailing block starting at row i
    (phi[n] = 1). Values that exceeded the scaling guard come back as inf;
    use inverse_entry for ratios, which combines the scaled factors safely.
    """
    tm, te = _scaled_theta(tri)
    pm, pe = _scaled_phi(tri)
    with np.errstate(over="ignore"):
        theta = tm * np.exp2(te.astype(np.float64))
        phi = pm * np.exp2(pe.astype(np.float64))
    return theta, phi


def inverse_entry(tri: Tridiag1D, i: int, j: int) -> complex:
    """Entry (i, j) of the tridiagonal inverse via the minor product formula.

    For i <= j (0-indexed):

        (H^-1)[i, j] = (-1)^(i+j) * (prod_{k=i}^{j-1} sup[k]) * theta[i] * phi[j+1] / theta[n]

    and the mirrored formula with sub products for i > j. Raises on a
    singular matrix (theta[n] == 0).
    """
    n = tri.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError("inverse_entry indices out of range")
    tm, te = _scaled_theta(tri)
    pm, pe = _scaled_phi(tri)
    if tm[n] == 0:
        raise ValueError("singular tridiagonal (theta_n = 0)")
    if i <= j:
        factors = tri.sup[i:j]
        left_m, left_e = tm[i], te[i]
        right_m, right_e = pm[j + 1], pe[j + 1]
    else:
        factors = tri.sub[j:i]
        left_m, left_e = tm[j], te[j]
        right_m, right_e = pm[i + 1], pe[i + 1]
    mant = left_m * right_m
    ex = int(left_e + right_e - te[n])
    for c in factors:
        mant *= c
        mag = abs(mant)
        if mag > _SCALE_LIMIT:
            shift = int(np.ceil(np.log2(mag / _SCALE_LIMIT)))
            mant *= 2.0 ** float(-shift)
            ex += shift
    sign = -1.0 if (i + j) % 2 else 1.0
    return complex(sign * (mant / tm[n]) * 2.0 ** float(ex))


def inverse_dense(tri: Tridiag1D) -> np.ndarray:
    """Full inverse from inverse_entry; n is expected to stay <= 64."""
    n = tri.n
    if n > 64:
        raise ValueError("oracle inverse restricted to n <= 64")
    out = np.empty((n, n), dtype=np.complex128)
    for i in range(n):
        for j in range(n):
            out[i, j] = inverse_entry(tri, i, j)
    return out


def grf_1d(tri: Tridiag1D, f, u0, u1, un, un1, *, lo: int = 1, hi: int | None = None):
    """1D discrete Green's representation formula over rows [lo, hi].

    ``tri`` is the extended local operator; rows lo..hi (0-indexed, inclusive)
    play the role of the layer rows 1..n, so rows lo-1 and hi+1 must exist.
    ``f`` is given over the full extended line and is used only on [lo, hi].
    The trace values (u0, u1, un, un1) are the reference solution at rows
    lo-1, lo, hi, hi+1. Returns the GRF evaluated on the full line: equal to
    the solution on [lo, hi] and zero outside when the traces are exact.
    """
    n = tri.n
    if hi is None:
        hi = n - 2
    if not (1 <= lo <= hi <= n - 2):
        raise ValueError("GRF window must leave one row on each side")
    f = np.asarray(f, dtype=np.complex128)
    if f.size != n:
        raise ValueError("f must cover the extended line")
    g = np.zeros(n, dtype=np.complex128)
    g[lo : hi + 1] = f[lo : hi + 1]
    # boundary forcings: the zero-extended restriction of u satisfies
    # (H u~)_lo = f_lo - H[lo,lo-1] u0, (H u~)_{lo-1} = H[lo-1,lo] u1, etc.
    g[lo] -= tri.sub[lo - 1] * u0
    g[lo - 1] += tri.sup[lo - 1] * u1
    g[hi] -= tri.sup[hi] * un1
    g[hi + 1] += tri.sub[hi] * un
    return np.linalg.solve(tri.to_dense(), g)
