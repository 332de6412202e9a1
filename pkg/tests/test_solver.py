"""Sweeps, the GMRES driver, the full solve pipeline, and the spectrum."""

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from helmsweep.partition import make_partition
from helmsweep.solver import (
    CompressionConfig,
    GmresConfig,
    OfflineState,
    PreconditionerConfig,
    gmres_solve,
    gs_sweep,
    offline_assemble,
    preconditioner_apply,
    reflection_mu,
    solve_helmholtz,
    spectrum_dump,
)
from helmsweep.trace_system import BlockInterfaceMatrix, SplitR

from helpers import (
    global_field,
    gradient_model,
    homogeneous_model,
    point_source,
    unit_grid,
)


def small_state(n=8, nz=9, L=3, n_pml=3, omega=4.0):
    grid = unit_grid(n, n_pml=n_pml, nz=nz)
    part = make_partition(nz, L)
    model = gradient_model(grid)
    return grid, part, offline_assemble(grid, model, part, omega)


@pytest.fixture(scope="module")
def tiny():
    grid, part, state = small_state()
    rng = np.random.default_rng(7)
    dim = 2 * state.n_traces * state.block_size
    rhs = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return {"grid": grid, "part": part, "state": state, "rhs": rhs}


def permuted_rhs_halves(rhs, perm, m):
    nt = perm.size // 2
    two_d = rhs.reshape(2 * nt, m)[perm]
    return two_d[:nt].ravel(), two_d[nt:].ravel()


def test_sweep_solves_exactly_when_r_vanishes(tiny):
    state = tiny["state"]
    nt, m = state.n_traces, state.block_size
    rng = np.random.default_rng(3)
    x_true = rng.standard_normal(2 * nt * m) + 1j * rng.standard_normal(2 * nt * m)
    lhs = np.concatenate(
        [state.d.down.matvec(x_true[: nt * m]), state.d.up.matvec(x_true[nt * m :])]
    )
    rhs_nat = np.empty_like(lhs).reshape(2 * nt, m)
    rhs_nat[state.perm] = lhs.reshape(2 * nt, m)
    empty_r = SplitR(
        upper=BlockInterfaceMatrix(nt, nt, m), lower=BlockInterfaceMatrix(nt, nt, m)
    )
    u_in = rng.standard_normal(2 * nt * m) + 0j
    out = gs_sweep(state.d, empty_r, state.perm, rhs_nat.ravel(), u_in)
    assert np.abs(out - x_true).max() <= 1e-12 * np.abs(x_true).max()


def test_sweep_fixed_point_is_system_solution(tiny):
    state, rhs = tiny["state"], tiny["rhs"]
    x_star = np.linalg.solve(state.pol.to_dense(), rhs)
    out = gs_sweep(state.d, state.r, state.perm, rhs, x_star)
    assert np.abs(out - x_star).max() <= 1e-12 * np.abs(x_star).max()


def test_sweep_from_zero_is_triangular_solve(tiny):
    state, rhs = tiny["state"], tiny["rhs"]
    nt, m = state.n_traces, state.block_size
    down_rhs, up_rhs = permuted_rhs_halves(rhs, state.perm, m)
    expect = np.concatenate(
        [
            np.linalg.solve(state.d.down.to_dense(), down_rhs),
            np.linalg.solve(state.d.up.to_dense(), up_rhs),
        ]
    )
    out = gs_sweep(state.d, state.r, state.perm, rhs, np.zeros(2 * nt * m, complex))
    assert np.abs(out - expect).max() <= 1e-12 * np.abs(expect).max()


def test_preconditioner_is_linear_and_repeatable(tiny):
    state = tiny["state"]
    cfg = PreconditionerConfig()
    dim = 2 * state.n_traces * state.block_size
    rng = np.random.default_rng(11)
    x = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    y = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    a, b = 0.3 - 1.1j, -2.0 + 0.4j

    def apply(v):
        return preconditioner_apply(cfg, state.d, state.r, state.perm, v)

    combo = apply(a * x + b * y)
    split = a * apply(x) + b * apply(y)
    assert np.abs(combo - split).max() <= 1e-13 * np.abs(combo).max()
    assert np.array_equal(apply(x), apply(x))


def test_preconditioner_single_sweep_matches_gs(tiny):
    state, rhs = tiny["state"], tiny["rhs"]
    one = preconditioner_apply(
        PreconditionerConfig(n_it=1), state.d, state.r, state.perm, rhs
    )
    direct = gs_sweep(state.d, state.r, state.perm, rhs, np.zeros_like(one))
    assert np.array_equal(one, direct)


def test_config_validation():
    with pytest.raises(ValueError):
        PreconditionerConfig(n_it=0)
    with pytest.raises(ValueError):
        PreconditionerConfig(variant="sideways")
    with pytest.raises(ValueError):
        GmresConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        GmresConfig(max_iter=0)


def test_gmres_identity_breaks_down_converged():
    rng = np.random.default_rng(0)
    b = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    x, rep = gmres_solve(lambda v: v, lambda v: v, b, GmresConfig())
    assert rep.converged
    assert rep.flag == "breakdown"
    assert rep.iterations == 1
    assert np.abs(x - b).max() <= 1e-13 * np.abs(b).max()
    assert rep.true_residual <= 1e-13


def test_gmres_matches_dense_solve():
    a = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]]) + 0.5j * np.eye(3)
    b = np.array([1.0, -2.0, 0.5]) + 1j * np.array([0.0, 1.0, -0.5])
    x, rep = gmres_solve(lambda v: a @ v, lambda v: v, b, GmresConfig(rel_tol=1e-12))
    assert rep.converged
    assert rep.iterations <= 3
    expect = np.linalg.solve(a, b)
    assert np.abs(x - expect).max() <= 1e-12 * np.abs(expect).max()
    hist = rep.residual_history
    assert all(hist[i + 1] <= hist[i] * (1 + 1e-12) + 1e-15 for i in range(len(hist) - 1))
    assert rep.true_residual <= 1e-12


def test_gmres_zero_rhs():
    x, rep = gmres_solve(lambda v: v, lambda v: v, np.zeros(5, complex), GmresConfig())
    assert rep.converged and rep.iterations == 0
    assert np.all(x == 0)


def test_gmres_stagnation_flag():
    # a cyclic shift makes no least-squares progress until the final step
    x, rep = gmres_solve(
        lambda v: np.roll(v, 1),
        lambda v: v,
        np.eye(50, dtype=complex)[:, 0],
        GmresConfig(rel_tol=1e-12, max_iter=40),
    )
    assert rep.flag == "stagnation"
    assert not rep.converged
    assert len(rep.residual_history) >= 11


def test_gmres_nan_aborts():
    with pytest.raises(RuntimeError, match="non-finite"):
        gmres_solve(
            lambda v: np.full_like(v, np.nan),
            lambda v: v,
            np.ones(4, complex),
            GmresConfig(),
        )


def test_gmres_maxiter_flag():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((30, 30)) + 1j * rng.standard_normal((30, 30))
    b = rng.standard_normal(30) + 0j
    x, rep = gmres_solve(lambda v: a @ v, lambda v: v, b, GmresConfig(rel_tol=1e-14, max_iter=5))
    assert rep.flag == "maxiter"
    assert not rep.converged
    assert rep.iterations == 5


def test_pipeline_matches_global_solve():
    grid = unit_grid(60)
    part = make_partition(60, 3)
    model = gradient_model(grid)
    omega = 12.0
    f = point_source(grid)
    report = solve_helmholtz(model, grid, part, f, omega=omega)
    assert report.converged
    direct = global_field(grid, model, omega, f)
    rows = slice(grid.n_pml, grid.n_pml + grid.nz)
    err = np.linalg.norm(report.u - direct[rows, :]) / np.linalg.norm(direct[rows, :])
    assert err <= 1e-5
    hist = report.residual_history
    assert all(hist[i + 1] <= hist[i] * (1 + 1e-12) + 1e-15 for i in range(len(hist) - 1))
    assert {"restrict", "newton", "rhs", "gmres", "reconstruct"} <= set(report.stage_seconds)
    assert report.u.shape == (grid.nz, grid.nx_ext)
    assert len(report.layer_fields) == 3


def test_pipeline_iteration_count_smooth():
    n = 40
    grid = unit_grid(n)
    part = make_partition(n, 4)
    model = gradient_model(grid)
    omega = float(np.sqrt(n))
    report = solve_helmholtz(model, grid, part, point_source(grid), omega=omega)
    assert report.converged
    assert report.iterations <= 8


def test_pipeline_extrapolation_variant():
    grid = unit_grid(30)
    part = make_partition(30, 3)
    model = homogeneous_model(grid)
    omega = 9.0
    f = point_source(grid, fx=0.4, fz=0.6)
    report = solve_helmholtz(
        model, grid, part, f, omega=omega,
        precond=PreconditionerConfig(variant="extrapolation"),
    )
    assert report.converged
    direct = global_field(grid, model, omega, f)
    rows = slice(grid.n_pml, grid.n_pml + grid.nz)
    err = np.linalg.norm(report.u - direct[rows, :]) / np.linalg.norm(direct[rows, :])
    assert err <= 1e-5


def test_pipeline_zero_source():
    grid = unit_grid(16)
    part = make_partition(16, 2)
    model = homogeneous_model(grid)
    report = solve_helmholtz(
        model, grid, part, np.zeros((grid.nz_ext, grid.nx_ext), complex), omega=5.0
    )
    assert report.converged
    assert report.iterations == 0
    assert report.residual_history == []
    assert np.all(report.u == 0)


def test_pipeline_reuses_offline_state_and_is_linear():
    grid = unit_grid(24)
    part = make_partition(24, 2)
    model = gradient_model(grid)
    omega = 7.0
    state = offline_assemble(grid, model, part, omega)
    f1 = point_source(grid, fx=0.3, fz=0.3)
    f2 = point_source(grid, fx=0.7, fz=0.6)
    r1 = solve_helmholtz(model, grid, part, f1, state=state)
    r2 = solve_helmholtz(model, grid, part, f2, state=state)
    r3 = solve_helmholtz(model, grid, part, f1 + 2.0 * f2, state=state)
    assert "offline" not in r1.stage_seconds
    combo = r1.u + 2.0 * r2.u
    assert np.linalg.norm(r3.u - combo) <= 1e-6 * np.linalg.norm(combo)
    again = solve_helmholtz(model, grid, part, f1, state=state)
    assert np.array_equal(r1.u, again.u)


def test_pipeline_variant_mismatch_raises():
    grid, part, state = small_state()
    model = gradient_model(grid)
    with pytest.raises(ValueError, match="variant"):
        solve_helmholtz(
            model, grid, part,
            np.zeros((grid.nz_ext, grid.nx_ext), complex),
            state=state,
            precond=PreconditionerConfig(variant="extrapolation"),
        )


def test_pipeline_oracle_error_field():
    grid = unit_grid(24)
    part = make_partition(24, 2)
    model = homogeneous_model(grid)
    omega = 6.0
    f = point_source(grid)
    direct = global_field(grid, model, omega, f)
    rows = slice(grid.n_pml, grid.n_pml + grid.nz)
    report = solve_helmholtz(model, grid, part, f, omega=omega, oracle=direct[rows, :])
    assert report.oracle_rel_error is not None
    assert report.oracle_rel_error <= 1e-5


def test_compressed_kernels_still_solve():
    grid = unit_grid(32)
    part = make_partition(32, 2)
    model = gradient_model(grid)
    omega = 8.0
    f = point_source(grid)
    plain = solve_helmholtz(model, grid, part, f, omega=omega)
    packed = solve_helmholtz(
        model, grid, part, f, omega=omega, compression=CompressionConfig()
    )
    assert packed.converged
    assert np.linalg.norm(packed.u - plain.u) <= 1e-5 * np.linalg.norm(plain.u)


def test_spectrum_clusters_at_one(tiny):
    state = tiny["state"]
    evals = spectrum_dump(state.d, state.r, state.perm, state.pol)
    dim = evals.size
    assert dim == 2 * state.n_traces * state.block_size
    n_one = int(np.count_nonzero(np.abs(evals - 1.0) <= 1e-8))
    assert n_one >= dim // 2

    # eigenvalues not pinned at one must each match a distinct 1 +- sqrt(mu)
    mus = reflection_mu(state.d, state.r)
    roots = np.sqrt(mus)
    predicted = np.concatenate([1.0 + roots, 1.0 - roots])
    remaining = evals[np.abs(evals - 1.0) > 1e-8]
    cost = np.abs(remaining[:, None] - predicted[None, :])
    rows, cols = linear_sum_assignment(cost)
    assert cost[rows, cols].max() <= 1e-8

    radius = np.abs(roots).max()
    assert np.abs(evals - 1.0).max() <= radius + 1e-10


def test_spectrum_dimension_guard():
    from helmsweep.trace_system import SplitD

    m = 2000
    d = SplitD(BlockInterfaceMatrix(2, 2, m), BlockInterfaceMatrix(2, 2, m))
    r = SplitR(BlockInterfaceMatrix(2, 2, m), BlockInterfaceMatrix(2, 2, m))
    pol = BlockInterfaceMatrix(4, 4, m)
    with pytest.raises(ValueError, match="6000"):
        spectrum_dump(d, r, np.arange(4), pol)
