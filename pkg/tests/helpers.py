"""Problem builders shared by the integration-leaning tests."""

import numpy as np

from helmsweep.grid import (
    ComplexGrid2D,
    SquaredSlownessModel,
    assemble_global,
    assemble_local,
)
from helmsweep.local_solver import extract_interface_greens, factorize, newton_trace
from helmsweep.partition import extend_slowness, restrict_source


def unit_grid(n, n_pml=10, nz=None):
    """Unit-width domain with n interior points across; nz defaults to n."""
    h = 1.0 / (n + 1)
    return ComplexGrid2D(nx=n, nz=(n if nz is None else nz), h=h, n_pml=n_pml)


def model_from_velocity_fn(grid, c_fn):
    x = grid.x_coords()[grid.interior_x_slice()]
    z = grid.z_coords()[grid.interior_z_slice()]
    X, Z = np.meshgrid(x, z)
    return SquaredSlownessModel.from_interior(1.0 / c_fn(X, Z) ** 2, grid.n_pml)


def gradient_model(grid):
    return model_from_velocity_fn(grid, lambda x, z: 1.0 + 0.1 * x + 0.1 * z)


def homogeneous_model(grid, c=1.0):
    vals = np.full((grid.nz_ext, grid.nx_ext), 1.0 / c**2)
    return SquaredSlownessModel(vals)


def point_source(grid, fx=0.5, fz=0.25, amp=1.0):
    """Discrete delta amp/h^2 at the interior node nearest (fx*Lx, fz*Lz)."""
    f = np.zeros((grid.nz_ext, grid.nx_ext), dtype=np.complex128)
    px = min(max(int(round(fx * (grid.nx + 1))), 1), grid.nx)
    qz = min(max(int(round(fz * (grid.nz + 1))), 1), grid.nz)
    f[grid.n_pml + qz - 1, grid.n_pml + px - 1] = amp / grid.h**2
    return f


def interior_random_source(grid, rng, scale=1.0):
    """Complex source supported on the interior depth rows 1..nz only."""
    f = np.zeros((grid.nz_ext, grid.nx_ext), dtype=np.complex128)
    shape = (grid.nz, grid.nx_ext)
    f[grid.interior_z_slice(), :] = scale * (
        rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    )
    return f


def global_field(grid, m, omega, f, form="unsymmetric"):
    op = assemble_global(grid, m, omega, form=form)
    fact = factorize(op, method="sparse")
    return fact.solve(f.ravel()).reshape(grid.nz_ext, grid.nx_ext)


def layer_operator(grid, part, m, omega, ell, form="unsymmetric"):
    m_tilde = extend_slowness(m, part, ell, grid.n_pml)
    return assemble_local(grid, m_tilde, part.thickness(ell), omega, form=form)


def layer_greens_newtons(grid, part, m, omega, f=None, form="unsymmetric", method="banded"):
    """Per-layer factorizations, Green's blocks, and (given f) Newton traces."""
    greens, newtons, facts = [], [], []
    for ell in range(1, part.L + 1):
        op = layer_operator(grid, part, m, omega, ell, form=form)
        fact = factorize(op, method=method)
        n_layer = part.thickness(ell)
        greens.append(extract_interface_greens(fact, n_layer, grid.n_pml, grid.h))
        if f is not None:
            f_loc = restrict_source(f, part, ell, grid.n_pml)
            newtons.append(newton_trace(fact, f_loc, n_layer, grid.n_pml))
        facts.append(fact)
    return greens, (newtons if f is not None else None), facts


def layer_trace_rows(u, part, ell, n_pml):
    """Rows of a global field at layer ell's local depths 0, 1, n^l, n^l+1."""
    n_layer = part.thickness(ell)
    out = {}
    for j in (0, 1, n_layer, n_layer + 1):
        q = part.n_c[ell - 1] + j
        out[j] = u[n_pml + q - 1, :].copy()
    return out
