"""End-to-end acceptance gates at pinned tolerances.

Each test here is a scaled-down rehearsal of the headline behavior: field
equivalence with a direct solve, the interface identities behind the trace
system, the preconditioned spectrum, iteration flatness over layer counts,
low-rank compression quality and scaling, and the cavity stress case.
"""

import sys

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from helmsweep import media
from helmsweep.grid import assemble_local
from helmsweep.local_solver import extract_interface_greens, factorize
from helmsweep.partition import extend_slowness, make_partition
from helmsweep.plr import compress, default_epsilon, default_r_max, to_sparse_form
from helmsweep.oracle import assemble_1d, inverse_dense, inverse_entry
from helmsweep.solver import (
    GmresConfig,
    offline_assemble,
    reflection_mu,
    solve_helmholtz,
    spectrum_dump,
)
from helmsweep.trace_system import (
    extrapolator,
    incomplete_green_down,
    incomplete_green_up,
    interface_traces,
)

from helpers import (
    global_field,
    gradient_model,
    homogeneous_model,
    layer_greens_newtons,
    point_source,
    unit_grid,
)

GRID_SIZES = (40, 60, 80)
LAYER_COUNTS = (2, 3, 4, 8)
MEDIA = ("homogeneous", "gradient")


def build_model(grid, medium):
    return homogeneous_model(grid) if medium == "homogeneous" else gradient_model(grid)


def case_omega(n):
    return float(np.pi * np.sqrt(n))


@pytest.mark.parametrize("medium", MEDIA)
@pytest.mark.parametrize("n", GRID_SIZES)
def test_field_matches_direct_solve(n, medium):
    """Solver output equals the direct solution, rel L2 <= 1e-5 at tol 1e-7."""
    grid = unit_grid(n)
    model = build_model(grid, medium)
    omega = case_omega(n)
    f = point_source(grid)
    direct = global_field(grid, model, omega, f)
    rows = slice(grid.n_pml, grid.n_pml + grid.nz)
    ref = direct[rows, :]
    scale = np.linalg.norm(ref)
    for L in LAYER_COUNTS:
        part = make_partition(n, L)
        state = offline_assemble(grid, model, part, omega, factor_method="sparse")
        report = solve_helmholtz(
            model, grid, part, f, state=state, gmres=GmresConfig(rel_tol=1e-7)
        )
        assert report.converged, f"L={L} did not converge"
        err = np.linalg.norm(report.u - ref) / scale
        assert err <= 1e-5, f"L={L}: rel error {err:.2e}"
        hist = report.residual_history
        assert all(
            hist[i + 1] <= hist[i] * (1 + 1e-12) + 1e-15 for i in range(len(hist) - 1)
        )


@pytest.mark.parametrize("medium", MEDIA)
@pytest.mark.parametrize("n", GRID_SIZES)
def test_interface_identities(n, medium):
    """Representation and one-sided annihilation residuals <= 1e-9 relative."""
    grid = unit_grid(n)
    model = build_model(grid, medium)
    omega = case_omega(n)
    f = point_source(grid)
    u = global_field(grid, model, omega, f)
    n_pml = grid.n_pml
    for L in LAYER_COUNTS:
        part = make_partition(n, L)
        greens, newtons, facts = layer_greens_newtons(
            grid, part, model, omega, f, method="sparse"
        )
        mid = 2 if L >= 3 else 1
        g, fact = greens[mid - 1], facts[mid - 1]
        nl = part.thickness(mid)
        tr = interface_traces(u, part, n_pml)

        # the field inside a layer is its local solve plus incoming radiation
        for j in (1, nl):
            total = newtons[mid - 1][j].astype(np.complex128).copy()
            if mid >= 2:
                top = 2 * (mid - 2)
                total += incomplete_green_down(g, j, tr.blocks[top], tr.blocks[top + 1])
            if mid <= part.L - 1:
                bot = 2 * (mid - 1)
                total += incomplete_green_up(g, j, tr.blocks[bot], tr.blocks[bot + 1])
            ref = u[n_pml + part.n_c[mid - 1] + j - 1, :]
            assert np.abs(total - ref).max() <= 1e-9 * np.abs(u).max(), (
                f"L={L} layer {mid} depth {j}"
            )

        # one-sided radiation is invisible to the opposite incomplete integral
        rng = np.random.default_rng(1000 * n + L)
        shape = (nl + 2 * n_pml, grid.nx_ext)
        f_above = np.zeros(shape, dtype=np.complex128)
        f_above[n_pml + 1 : n_pml + nl, :] = rng.standard_normal((nl - 1, grid.nx_ext))
        w = fact.solve(f_above.ravel()).reshape(shape)
        v0, v1 = w[n_pml - 1, :], w[n_pml, :]
        scale_dn = max(np.abs(v0).max(), np.abs(v1).max()) / grid.h
        f_below = np.zeros(shape, dtype=np.complex128)
        f_below[n_pml : n_pml + nl - 1, :] = rng.standard_normal((nl - 1, grid.nx_ext))
        wb = fact.solve(f_below.ravel()).reshape(shape)
        vn, vn1 = wb[n_pml + nl - 1, :], wb[n_pml + nl, :]
        scale_up = max(np.abs(vn).max(), np.abs(vn1).max()) / grid.h
        for j in (1, nl):
            assert np.abs(incomplete_green_down(g, j, v0, v1)).max() <= 1e-9 * scale_dn
            assert np.abs(incomplete_green_up(g, j, vn, vn1)).max() <= 1e-9 * scale_up


def test_extrapolator_suite():
    """Trace steppers reproduce outgoing kernels and satisfy the jump
    relation <= 1e-10; the 1D minor-recurrence inverse matches dense <= 1e-12."""
    grid = unit_grid(24, n_pml=8)
    part = make_partition(24, 3)
    model = gradient_model(grid)
    omega = case_omega(24)
    greens, _, _ = layer_greens_newtons(grid, part, model, omega)
    h = grid.h
    for g, nl in ((greens[1], part.thickness(2)),):
        e_up = extrapolator(g, "up")
        e_dn = extrapolator(g, "down")
        scale = max(np.abs(g.block(j, k)).max() for j in g.depths for k in g.depths)
        for k in (1, nl, nl + 1):
            assert np.abs(e_up @ g.block(1, k) - g.block(0, k)).max() <= 1e-10 * scale
        for k in (0, 1, nl):
            assert np.abs(e_dn @ g.block(nl, k) - g.block(nl + 1, k)).max() <= 1e-10 * scale
        jump_up = g.block(0, 0) - e_up @ g.block(1, 0) - h * e_up
        jump_dn = g.block(nl + 1, nl + 1) - e_dn @ g.block(nl, nl + 1) - h * e_dn
        e_scale = max(np.abs(e_up).max(), np.abs(e_dn).max()) * h
        assert np.abs(jump_up).max() <= 1e-10 * e_scale
        assert np.abs(jump_dn).max() <= 1e-10 * e_scale

    rng = np.random.default_rng(17)
    nx = 32
    m_1d = 1.0 + 0.2 * rng.random(nx + 2 * 8)
    tri = assemble_1d(nx, 1.0 / (nx + 1), 8, 9.0, m_1d)
    dense = inverse_dense(tri)
    dim = dense.shape[0]
    idx = rng.integers(0, dim, size=(40, 2))
    worst = max(
        abs(inverse_entry(tri, i, j) - dense[i, j]) for i, j in idx
    )
    assert worst <= 1e-12 * np.abs(dense).max()


def test_preconditioned_spectrum_structure():
    """Half the eigenvalues sit at 1; the rest pair with the double-reflection
    map as 1 +- sqrt(mu), both to 1e-8, on a 528-dimensional trace system."""
    n, L = 24, 4
    grid = unit_grid(n)
    part = make_partition(n, L)
    state = offline_assemble(grid, gradient_model(grid), part, case_omega(n))
    evals = spectrum_dump(state.d, state.r, state.perm, state.pol)
    dim = evals.size
    assert dim <= 3000
    dist = np.abs(evals - 1.0)
    assert np.count_nonzero(dist <= 1e-8) >= dim // 2

    roots = np.sqrt(reflection_mu(state.d, state.r))
    predicted = np.concatenate([1.0 + roots, 1.0 - roots])
    remaining = evals[dist > 1e-8]
    cost = np.abs(remaining[:, None] - predicted[None, :])
    rows, cols = linear_sum_assignment(cost)
    assert cost[rows, cols].max() <= 1e-8


def _iteration_table(medium_name, sizes, layer_counts, seed=0):
    table = {}
    for n in sizes:
        grid = unit_grid(n)
        model = media.build_medium(grid, medium_name, seed=seed)
        omega = case_omega(n)
        f = point_source(grid)
        for L in layer_counts:
            part = make_partition(n, L)
            state = offline_assemble(grid, model, part, omega, factor_method="sparse")
            report = solve_helmholtz(
                model, grid, part, f, state=state, gmres=GmresConfig(rel_tol=1e-7)
            )
            assert report.converged, f"{medium_name} n={n} L={L} did not converge"
            table[(n, L)] = report.iterations
    return table


def test_iteration_flatness_smooth():
    """Smooth medium: <= 8 iterations to 1e-7, spread over layer counts <= 2."""
    table = _iteration_table("gradient", (100, 200), (2, 4, 8))
    for n in (100, 200):
        counts = [table[(n, L)] for L in (2, 4, 8)]
        assert max(counts) <= 8, f"n={n}: {counts}"
        assert max(counts) - min(counts) <= 2, f"n={n}: {counts}"


def test_iteration_flatness_rough():
    """Discontinuous inclusions: <= 12 iterations, growth over layers <= 3."""
    table = _iteration_table("rough", (100, 200), (2, 4, 8))
    for n in (100, 200):
        counts = [table[(n, L)] for L in (2, 4, 8)]
        assert max(counts) <= 12, f"n={n}: {counts}"
        assert max(counts) - min(counts) <= 3, f"n={n}: {counts}"


def _oscillatory_block(m, k, omega, separation=0.25):
    x = np.linspace(0.0, 1.0, m)[:, None]
    y = np.linspace(0.0, 1.0, k)[None, :]
    d = np.hypot(x - y, separation)
    return np.exp(1j * omega * d) / np.sqrt(d)


def test_plr_correctness():
    """Tree vs sparse <= 1e-14; vs dense <= 1e-6 at eps=1e-9; every leaf's
    next singular value is below eps."""
    n = 256
    block = _oscillatory_block(n, n, 40.0)
    eps, r_max = 1e-9, int(np.ceil(np.sqrt(n)))
    plr = compress(block, r_max=r_max, epsilon=eps)
    sparse = to_sparse_form(plr)
    rng = np.random.default_rng(3)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    tree_y = plr.matvec(x)
    assert np.abs(tree_y - sparse.matvec(x)).max() <= 1e-14 * np.abs(tree_y).max()
    dense_y = block @ x
    assert np.linalg.norm(tree_y - dense_y) <= 1e-6 * np.linalg.norm(x)
    for row_off, col_off, leaf, _depth in plr.leaves():
        rows, cols = leaf.shape
        piece = block[row_off : row_off + rows, col_off : col_off + cols]
        sigma = np.linalg.svd(piece, compute_uv=False)
        if leaf.rank < min(rows, cols):
            assert sigma[leaf.rank] < eps


def _remote_block_storage(n):
    grid = unit_grid(n)
    part = make_partition(n, 2)
    model = homogeneous_model(grid)
    omega = float(np.sqrt(n))
    nl = part.thickness(1)
    m_tilde = extend_slowness(model, part, 1, grid.n_pml)
    op = assemble_local(grid, m_tilde, nl, omega)
    fact = factorize(op, method="sparse")
    greens = extract_interface_greens(
        fact, nl, grid.n_pml, grid.h, source_depths=[nl]
    )
    eps = default_epsilon(2)
    r_max = default_r_max(grid.nx_ext)
    return sum(
        compress(greens.block(tgt, nl), r_max=r_max, epsilon=eps).stored_entries()
        for tgt in (0, 1)
    )


def test_compression_scaling():
    """Stored entries of far-interface kernels grow with exponent < 2."""
    sizes = np.array([64, 128, 256, 512])
    stored = np.array([_remote_block_storage(int(n)) for n in sizes], dtype=float)
    slope = np.polyfit(np.log(sizes), np.log(stored), 1)[0]
    assert slope < 2.0, f"stored entries {stored} give exponent {slope:.3f}"


def test_cavity_degradation():
    """Raising the frequency in the open-ring medium strictly spreads the
    spectrum, and the solver needs strictly more iterations than on the
    smooth medium of the same size."""
    n, L = 60, 4
    grid = unit_grid(n)
    part = make_partition(n, L)
    f = point_source(grid)
    smooth = media.build_medium(grid, "gradient")
    ring = media.build_medium(grid, "cavity")

    outside = {}
    iters = {}
    for name, model in (("gradient", smooth), ("cavity", ring)):
        for omega in (8.0, 16.0):
            state = offline_assemble(grid, model, part, omega)
            evals = spectrum_dump(state.d, state.r, state.perm, state.pol)
            outside[(name, omega)] = int(np.count_nonzero(np.abs(evals - 1.0) > 0.2))
            report = solve_helmholtz(model, grid, part, f, state=state)
            assert report.converged
            iters[(name, omega)] = report.iterations

    assert outside[("cavity", 16.0)] > outside[("cavity", 8.0)]
    for omega in (8.0, 16.0):
        assert iters[("cavity", omega)] > iters[("gradient", omega)]


def test_primary_suite_standalone():
    """Nothing in the solver package reaches for the plotting component."""
    import helmsweep  # noqa: F401

    assert not any(name.startswith("frontend") for name in sys.modules)
