"""Online solve pipeline: sweeps, preconditioner, GMRES, and reconstruction.

Layout conventions. A polarized unknown vector is flat complex of length
2*(2L-2)*m: the down trace blocks of every interface first, then the up
blocks, each block of interface width m. Right-hand sides live in natural
row order (consistency rows, then completion rows); the sweep applies the
row permutation internally. One sweep is the literal stationary step

    u_next = D^{-1} (P rhs - R u),

with both triangular halves reading the previous iterate, so the sweep is a
fixed linear map of (rhs, u) and the n_it-sweep preconditioner is a fixed
linear operator, valid inside GMRES.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .local_solver import (
    extract_interface_greens,
    factorize,
    newton_trace,
    reconstruct_volume,
)
from .grid import assemble_local
from .partition import LayerPartition, extend_slowness, restrict_source
from .plr import compress, default_epsilon, default_r_max, to_sparse_form
from .trace_system import (
    TraceVector,
    assemble_polarized,
    polarized_rhs,
    solve_block_triangular,
    split_DR,
)

__all__ = [
    "PreconditionerConfig",
    "GmresConfig",
    "CompressionConfig",
    "SolveReport",
    "OfflineState",
    "offline_assemble",
    "gs_sweep",
    "preconditioner_apply",
    "gmres_solve",
    "solve_helmholtz",
    "spectrum_dump",
    "reflection_mu",
]

STAGNATION_WINDOW = 10
STAGNATION_IMPROVEMENT = 1e-3


@dataclass
class PreconditionerConfig:
    n_it: int = 2
    variant: str = "jump"

    def __post_init__(self):
        if self.n_it < 1:
            raise ValueError("n_it must be at least 1")
        if self.variant not in ("jump", "extrapolation"):
            raise ValueError(f"unknown preconditioner variant {self.variant!r}")


@dataclass
class GmresConfig:
    rel_tol: float = 1e-7
    max_iter: int = 100

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError("rel_tol must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class CompressionConfig:
    """Switches stored interface kernels to partitioned-low-rank sparse form."""

    epsilon: float | None = None
    r_max: int | None = None

    def resolve(self, n_layers: int, block_side: int):
        eps = default_epsilon(n_layers) if self.epsilon is None else self.epsilon
        r_max = default_r_max(block_side) if self.r_max is None else self.r_max
        return eps, r_max


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    flag: str = "converged"
    true_residual: float | None = None
    traces: np.ndarray | None = None
    layer_fields: list | None = None
    u: np.ndarray | None = None
    stage_seconds: dict = field(default_factory=dict)
    oracle_rel_error: float | None = None


@dataclass
class OfflineState:
    """Everything reusable across right-hand sides for one (model, omega)."""

    grid: object
    part: LayerPartition
    omega: float
    variant: str
    facts: list
    greens: list
    pol: object
    perm: np.ndarray
    d: object
    r: object
    block_size: int
    stage_seconds: dict = field(default_factory=dict)

    @property
    def n_traces(self) -> int:
        return 2 * self.part.L - 2


def offline_assemble(
    grid,
    model,
    part: LayerPartition,
    omega: float,
    *,
    variant: str = "jump",
    factor_method: str = "banded",
    compression: CompressionConfig | None = None,
    profile=None,
) -> OfflineState:
    """Per-layer factorizations, interface Green's blocks, and the polarized
    system with its permuted triangular split."""
    timings = {}
    facts, greens = [], []
    tick = time.perf_counter()
    for ell in range(1, part.L + 1):
        m_tilde = extend_slowness(model, part, ell, grid.n_pml)
        op = assemble_local(
            grid, m_tilde, part.thickness(ell), omega, profile=profile
        )
        facts.append(factorize(op, method=factor_method, label=f"layer {ell}"))
    timings["factor"] = time.perf_counter() - tick

    tick = time.perf_counter()
    for ell in range(1, part.L + 1):
        greens.append(
            extract_interface_greens(
                facts[ell - 1], part.thickness(ell), grid.n_pml, grid.h
            )
        )
    timings["greens"] = time.perf_counter() - tick

    transform = None
    timings["compress"] = 0.0
    if compression is not None:
        eps, r_max = compression.resolve(part.L, grid.nx_ext)

        def transform(ell, j, k, raw):
            start = time.perf_counter()
            packed = to_sparse_form(compress(raw, r_max=r_max, epsilon=eps))
            timings["compress"] += time.perf_counter() - start
            return packed

    tick = time.perf_counter()
    pol, perm = assemble_polarized(variant, greens, part, kernel_transform=transform)
    d, r = split_DR(pol, perm)
    timings["assemble"] = time.perf_counter() - tick - timings["compress"]
    return OfflineState(
        grid=grid,
        part=part,
        omega=omega,
        variant=variant,
        facts=facts,
        greens=greens,
        pol=pol,
        perm=perm,
        d=d,
        r=r,
        block_size=grid.nx_ext,
        stage_seconds=timings,
    )


def _split_halves(x, nt, m):
    expect = 2 * nt * m
    if x.shape[0] != expect:
        raise ValueError(f"polarized vector has length {x.shape[0]}, expected {expect}")
    return x[: nt * m], x[nt * m :]


def gs_sweep(d, r, perm, rhs, u_in):
    """One stationary step u_next = D^-1 (P rhs - R u_in).

    rhs is in natural row order; u_in and the result are flat polarized
    vectors (down half, then up half).
    """
    nt = d.down.n_block_rows
    m = d.down.m
    rhs_perm = np.asarray(rhs).reshape(2 * nt, m)[perm]
    down_rhs = rhs_perm[:nt].ravel()
    up_rhs = rhs_perm[nt:].ravel()
    u_down, u_up = _split_halves(np.asarray(u_in), nt, m)

    g_down = down_rhs - r.upper.matvec(u_up)
    g_up = up_rhs - r.lower.matvec(u_down)
    next_down = solve_block_triangular(d.down, g_down, kind="lower")
    next_up = solve_block_triangular(d.up, g_up, kind="upper")
    return np.concatenate([next_down, next_up])


def preconditioner_apply(config: PreconditionerConfig, d, r, perm, residual):
    """n_it sweeps from zero; a fixed linear operator in the residual."""
    u = np.zeros_like(np.asarray(residual, dtype=np.complex128))
    for _ in range(config.n_it):
        u = gs_sweep(d, r, perm, residual, u)
    return u


def gmres_solve(apply_A, apply_Minv, b, config: GmresConfig):
    """Left-preconditioned GMRES with modified Gram-Schmidt, no restart."""
    b = np.asarray(b, dtype=np.complex128)
    report = SolveReport()
    mb = apply_Minv(b)
    beta = np.linalg.norm(mb)
    n = b.shape[0]
    x = np.zeros(n, dtype=np.complex128)
    if beta == 0.0:
        report.converged = True
        report.true_residual = 0.0
        return x, report

    max_iter = config.max_iter
    basis = np.zeros((n, max_iter + 1), dtype=np.complex128)
    basis[:, 0] = mb / beta
    hess = np.zeros((max_iter + 1, max_iter), dtype=np.complex128)
    e1 = np.zeros(max_iter + 1, dtype=np.complex128)
    e1[0] = beta

    y = np.zeros(0)
    k = 0
    for j in range(max_iter):
        w = apply_Minv(apply_A(basis[:, j]))
        if not np.all(np.isfinite(w)):
            raise RuntimeError(
                f"non-finite values in preconditioned matvec at iteration {j + 1}"
            )
        for i in range(j + 1):
            hess[i, j] = np.vdot(basis[:, i], w)
            w = w - hess[i, j] * basis[:, i]
        hnorm = np.linalg.norm(w)
        hess[j + 1, j] = hnorm
        k = j + 1
        breakdown = hnorm <= 1e-14 * beta
        if not breakdown:
            basis[:, j + 1] = w / hnorm

        y, res, _rank, _sv = np.linalg.lstsq(
            hess[: k + 1, :k], e1[: k + 1], rcond=None
        )
        rel = np.linalg.norm(e1[: k + 1] - hess[: k + 1, :k] @ y) / beta
        report.residual_history.append(float(rel))
        report.iterations = k
        if breakdown:
            report.converged = True
            report.flag = "breakdown"
            break
        if rel <= config.rel_tol:
            report.converged = True
            break
        window = STAGNATION_WINDOW
        if len(report.residual_history) > window:
            old = report.residual_history[-window - 1]
            if old > 0 and 1.0 - rel / old < STAGNATION_IMPROVEMENT:
                report.flag = "stagnation"
                break
    else:
        report.flag = "maxiter"

    x = basis[:, :k] @ y
    true_res = np.linalg.norm(b - apply_A(x))
    scale = np.linalg.norm(b)
    report.true_residual = float(true_res / scale) if scale > 0 else float(true_res)
    return x, report


def _stage(report, name, fn):
    start = time.perf_counter()
    try:
        out = fn()
    except Exception as exc:
        raise RuntimeError(f"stage {name!r} failed: {exc}") from exc
    report.stage_seconds[name] = time.perf_counter() - start
    return out


def solve_helmholtz(
    model,
    grid,
    part: LayerPartition,
    f: np.ndarray,
    *,
    omega: float | None = None,
    state: OfflineState | None = None,
    precond: PreconditionerConfig | None = None,
    gmres: GmresConfig | None = None,
    factor_method: str = "banded",
    compression: CompressionConfig | None = None,
    oracle: np.ndarray | None = None,
) -> SolveReport:
    """Restrict the source, solve locally, run preconditioned GMRES on the
    polarized trace system, recombine, and rebuild the volume field.

    The returned field covers the nz interior depth rows over the full
    extended x width. Pass a prebuilt state to amortize the offline stage;
    otherwise omega is required and the state is built here.
    """
    precond = precond or PreconditionerConfig()
    gmres = gmres or GmresConfig()
    report = SolveReport()

    if state is None:
        if omega is None:
            raise ValueError("omega is required when no offline state is given")
        state = _stage(
            report,
            "offline",
            lambda: offline_assemble(
                grid,
                model,
                part,
                omega,
                variant=precond.variant,
                factor_method=factor_method,
                compression=compression,
            ),
        )
    elif state.variant != precond.variant:
        raise ValueError(
            f"offline state was assembled for variant {state.variant!r}, "
            f"preconditioner wants {precond.variant!r}"
        )

    n_pml = grid.n_pml
    f_locals = _stage(
        report,
        "restrict",
        lambda: [
            restrict_source(f, part, ell, n_pml) for ell in range(1, part.L + 1)
        ],
    )
    newtons = _stage(
        report,
        "newton",
        lambda: [
            newton_trace(state.facts[ell - 1], f_locals[ell - 1],
                         part.thickness(ell), n_pml)
            for ell in range(1, part.L + 1)
        ],
    )
    rhs = _stage(
        report, "rhs", lambda: polarized_rhs(newtons, part, state.variant)
    )

    nt = state.n_traces
    m = state.block_size
    if np.all(rhs == 0):
        x = np.zeros(2 * nt * m, dtype=np.complex128)
        report.converged = True
    else:
        def run_gmres():
            return gmres_solve(
                state.pol.matvec,
                lambda res: preconditioner_apply(
                    precond, state.d, state.r, state.perm, res
                ),
                rhs,
                gmres,
            )

        x, inner = _stage(report, "gmres", run_gmres)
        report.iterations = inner.iterations
        report.residual_history = inner.residual_history
        report.converged = inner.converged
        report.flag = inner.flag
        report.true_residual = inner.true_residual

    down, up_half = _split_halves(x, nt, m)
    traces = TraceVector.from_flat(down + up_half, m)
    report.traces = traces.stack()

    def rebuild():
        fields = []
        for ell in range(1, part.L + 1):
            n_layer = part.thickness(ell)
            top = 2 * (ell - 2)
            bot = 2 * (ell - 1)
            u0 = traces.blocks[top] if ell >= 2 else None
            u1 = traces.blocks[top + 1] if ell >= 2 else None
            un = traces.blocks[bot] if ell <= part.L - 1 else None
            un1 = traces.blocks[bot + 1] if ell <= part.L - 1 else None
            fields.append(
                reconstruct_volume(
                    state.facts[ell - 1],
                    f_locals[ell - 1],
                    u0,
                    u1,
                    un,
                    un1,
                    n_layer,
                    n_pml,
                    grid.h,
                )
            )
        return fields

    report.layer_fields = _stage(report, "reconstruct", rebuild)
    report.u = np.concatenate(report.layer_fields, axis=0)

    if oracle is not None:
        scale = np.linalg.norm(oracle)
        err = np.linalg.norm(report.u - oracle)
        report.oracle_rel_error = float(err / scale) if scale > 0 else float(err)
    return report


SPECTRUM_DIM_LIMIT = 6000


def _dense_preconditioned(d, r, perm, pol):
    m = d.down.m
    nt = d.down.n_block_rows
    dim = 2 * nt * m
    if dim > SPECTRUM_DIM_LIMIT:
        raise ValueError(
            f"polarized system dimension {dim} exceeds the dense spectrum "
            f"guard {SPECTRUM_DIM_LIMIT}"
        )
    m_dense = pol.to_dense()
    row_idx = (perm[:, None] * m + np.arange(m)[None, :]).ravel()
    permuted = m_dense[row_idx, :]
    d_dense = np.zeros((dim, dim), dtype=np.complex128)
    d_dense[: dim // 2, : dim // 2] = d.down.to_dense()
    d_dense[dim // 2 :, dim // 2 :] = d.up.to_dense()
    return np.linalg.solve(d_dense, permuted)


def spectrum_dump(d, r, perm, pol) -> np.ndarray:
    """Dense eigenvalues of the one-sweep preconditioned operator."""
    return np.linalg.eigvals(_dense_preconditioned(d, r, perm, pol))


def reflection_mu(d, r) -> np.ndarray:
    """Eigenvalues of the double-reflection map (up-solve of the lower
    coupling composed with down-solve of the upper coupling); the
    preconditioned spectrum is 1 and 1 +- sqrt(mu)."""
    down_inv_u = np.linalg.solve(d.down.to_dense(), r.upper.to_dense())
    up_inv_l = np.linalg.solve(d.up.to_dense(), r.lower.to_dense())
    return np.linalg.eigvals(up_inv_l @ down_inv_u)
