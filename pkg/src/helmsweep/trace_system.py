"""Interface trace systems built from per-layer Green's blocks.

This module turns the stored blocks G(z_j, z_k) of each layer into the
operators that live purely on interface traces: the one-sided incomplete
integrals, the square self-consistency system and its companion evaluated
just outside each layer, one-sided extrapolators, and the doubled systems
over split (down-going, up-going) traces. It also produces the row
permutation under which the doubled system separates into a block-triangular
part plus an off-diagonal remainder, which is what the sweeping
preconditioner inverts.

Every stored dense block carries a 1/h factor on use, and the interface
identity absorbs the matching weight h, so diagonal blocks of the doubled
systems are exactly -1 times the identity: triangular substitution then
needs no divisions at all.

Trace layout: an L-layer split has L-1 interfaces; interface i contributes
two blocks (a_i, b_i) = (u at global depth n_c[i], u at n_c[i]+1). A block
column index is 2*(i-1) + slot with slot 0 for a, 1 for b. The doubled
systems order unknowns as (all down blocks, then all up blocks) and rows as
(all inside-depth rows T_1..T_{2L-2}, then all outside-depth rows
B_1..B_{2L-2}); T_{2i-1}/B_{2i-1} come from layer i at depths n^i and
n^i + 1, while T_{2i}/B_{2i} come from layer i+1 at depths 1 and 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .local_solver import InterfaceGreens
from .partition import LayerPartition

__all__ = [
    "TraceVector",
    "PolarizedTraceVector",
    "BlockEntry",
    "BlockInterfaceMatrix",
    "incomplete_green_up",
    "incomplete_green_down",
    "interface_traces",
    "assemble_M",
    "assemble_M0",
    "assemble_rhs",
    "extrapolator",
    "assemble_polarized",
    "polarized_rhs",
    "sweep_permutation",
    "split_DR",
    "solve_block_triangular",
]

EXTRAPOLATOR_COND_LIMIT = 1e12


@dataclass
class TraceVector:
    """Interface data as 2(L-1) ordered blocks (a_1, b_1, ..., a_{L-1}, b_{L-1})."""

    blocks: list

    def __post_init__(self):
        blocks = [np.asarray(b, dtype=np.complex128) for b in self.blocks]
        if len(blocks) < 2 or len(blocks) % 2:
            raise ValueError("need an even number (>= 2) of trace blocks")
        if len({b.shape for b in blocks}) != 1 or blocks[0].ndim != 1:
            raise ValueError("trace blocks must be 1D and equally sized")
        self.blocks = blocks

    @property
    def L(self) -> int:
        return len(self.blocks) // 2 + 1

    @property
    def block_size(self) -> int:
        return self.blocks[0].size

    def stack(self) -> np.ndarray:
        return np.concatenate(self.blocks)

    @classmethod
    def from_flat(cls, flat, block_size) -> "TraceVector":
        flat = np.asarray(flat, dtype=np.complex128)
        if flat.size % block_size:
            raise ValueError("flat trace length is not a multiple of the block size")
        return cls(list(flat.reshape(-1, block_size)))

    def __add__(self, other: "TraceVector") -> "TraceVector":
        return TraceVector([a + b for a, b in zip(self.blocks, other.blocks)])


@dataclass
class PolarizedTraceVector:
    down: TraceVector
    up: TraceVector

    def recombine(self) -> TraceVector:
        return self.down + self.up


def interface_traces(u: np.ndarray, part: LayerPartition, n_pml: int) -> TraceVector:
    """Restrict a field on the extended grid to the interface rows."""
    blocks = []
    for i in range(1, part.L):
        q = part.n_c[i]
        blocks.append(u[n_pml + q - 1, :].copy())
        blocks.append(u[n_pml + q, :].copy())
    return TraceVector(blocks)


def incomplete_green_up(greens: InterfaceGreens, j, v_n, v_n1, form="matrix"):
    """Contribution at depth j of an up-radiating trace pair at the layer bottom."""
    n, h = greens.n_layer, greens.h
    v_n = np.asarray(v_n, dtype=np.complex128)
    v_n1 = np.asarray(v_n1, dtype=np.complex128)
    b_out = greens.block(j, n + 1)
    b_in = greens.block(j, n)
    if v_n.shape != (b_out.shape[1],) or v_n1.shape != (b_out.shape[1],):
        raise ValueError("trace length does not match the Green's blocks")
    if form == "matrix":
        return (-(b_out @ v_n) + b_in @ v_n1) / h
    if form == "difference":
        return b_out @ ((v_n1 - v_n) / h) - ((b_out - b_in) / h) @ v_n1
    raise ValueError(f"unknown form {form!r}")


def incomplete_green_down(greens: InterfaceGreens, j, v_0, v_1, form="matrix"):
    """Contribution at depth j of a down-radiating trace pair at the layer top."""
    h = greens.h
    v_0 = np.asarray(v_0, dtype=np.complex128)
    v_1 = np.asarray(v_1, dtype=np.complex128)
    b_out = greens.block(j, 0)
    b_in = greens.block(j, 1)
    if v_0.shape != (b_out.shape[1],) or v_1.shape != (b_out.shape[1],):
        raise ValueError("trace length does not match the Green's blocks")
    if form == "matrix":
        return (b_in @ v_0 - b_out @ v_1) / h
    if form == "difference":
        return -(b_out @ ((v_1 - v_0) / h)) - ((b_out - b_in) / h) @ v_0
    raise ValueError(f"unknown form {form!r}")


class BlockEntry:
    """One block: scale * kernel + eye * I, with the identity kept exact.

    kernel is None, a dense array, or any object with matvec/to_dense
    (the compressed representation satisfies this).
    """

    __slots__ = ("kernel", "scale", "eye")

    def __init__(self, kernel=None, scale=1.0, eye=0.0):
        self.kernel = kernel
        self.scale = complex(scale)
        self.eye = complex(eye)

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kernel is None:
            y = np.zeros_like(x, dtype=np.complex128)
        elif isinstance(self.kernel, np.ndarray):
            y = self.scale * (self.kernel @ x)
        else:
            y = self.scale * self.kernel.matvec(x)
        if self.eye != 0:
            y = y + self.eye * x
        return y

    def dense(self, m: int) -> np.ndarray:
        out = np.zeros((m, m), dtype=np.complex128)
        if self.kernel is not None:
            k = self.kernel if isinstance(self.kernel, np.ndarray) else self.kernel.to_dense()
            out += self.scale * k
        if self.eye != 0:
            out[np.diag_indices(m)] += self.eye
        return out

    def is_pure_identity(self) -> bool:
        return self.kernel is None


class BlockInterfaceMatrix:
    """Sparse collection of interface blocks addressed by (block row, block col)."""

    def __init__(self, n_block_rows: int, n_block_cols: int, m: int):
        self.n_block_rows = n_block_rows
        self.n_block_cols = n_block_cols
        self.m = m
        self.entries: dict = {}

    @property
    def shape(self):
        return (self.n_block_rows * self.m, self.n_block_cols * self.m)

    def add(self, i, j, kernel=None, scale=1.0, eye=0.0):
        if not (0 <= i < self.n_block_rows and 0 <= j < self.n_block_cols):
            raise IndexError(f"block ({i},{j}) outside {self.n_block_rows}x{self.n_block_cols}")
        cur = self.entries.get((i, j))
        if cur is None:
            self.entries[(i, j)] = BlockEntry(kernel, scale, eye)
            return
        if kernel is not None:
            if cur.kernel is not None:
                raise ValueError(f"block ({i},{j}) assigned two kernels")
            cur.kernel, cur.scale = kernel, complex(scale)
        cur.eye += complex(eye)

    def entry(self, i, j):
        return self.entries.get((i, j))

    def rows(self) -> list:
        """Per-block-row list of (col, entry), cols ascending."""
        out = [[] for _ in range(self.n_block_rows)]
        for (i, j), e in sorted(self.entries.items()):
            out[i].append((j, e))
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        m = self.m
        if x.shape != (self.n_block_cols * m,):
            raise ValueError("vector length does not match the block layout")
        y = np.zeros(self.n_block_rows * m, dtype=np.complex128)
        for (i, j), e in self.entries.items():
            y[i * m : (i + 1) * m] += e.apply(x[j * m : (j + 1) * m])
        return y

    def to_dense(self) -> np.ndarray:
        m = self.m
        out = np.zeros(self.shape, dtype=np.complex128)
        for (i, j), e in self.entries.items():
            out[i * m : (i + 1) * m, j * m : (j + 1) * m] = e.dense(m)
        return out

    def block_mask(self) -> np.ndarray:
        mask = np.zeros((self.n_block_rows, self.n_block_cols), dtype=bool)
        for (i, j) in self.entries:
            mask[i, j] = True
        return mask


def _check_layers(greens_list, part: LayerPartition):
    if part.L < 2:
        raise ValueError("interface system needs at least two layers")
    if len(greens_list) != part.L:
        raise ValueError(f"expected {part.L} Green's block sets, got {len(greens_list)}")
    for ell, g in enumerate(greens_list, start=1):
        if g.n_layer != part.thickness(ell):
            raise ValueError(f"layer {ell} Green's blocks built for a different thickness")


def _block(greens, j, k):
    try:
        return greens.blocks[(j, k)]
    except KeyError:
        raise ValueError(f"missing Green's block (target {j}, source {k})") from None


def assemble_M(greens_list, part: LayerPartition) -> BlockInterfaceMatrix:
    """Square system on interface traces: inside-depth self-consistency rows."""
    _check_layers(greens_list, part)
    L = part.L
    h = greens_list[0].h
    m = next(iter(greens_list[0].blocks.values())).shape[0]
    M = BlockInterfaceMatrix(2 * L - 2, 2 * L - 2, m)
    col = lambda i, slot: 2 * (i - 1) + slot
    for i in range(1, L):
        g, n = greens_list[i - 1], part.thickness(i)
        r_top = 2 * (i - 1)  # layer i at depth n^i
        if i >= 2:
            M.add(r_top, col(i - 1, 0), _block(g, n, 1), 1 / h)
            M.add(r_top, col(i - 1, 1), _block(g, n, 0), -1 / h)
        M.add(r_top, col(i, 0), _block(g, n, n + 1), -1 / h, eye=-1)
        M.add(r_top, col(i, 1), _block(g, n, n), 1 / h)
        gr, nr = greens_list[i], part.thickness(i + 1)
        r_bot = 2 * i - 1  # layer i+1 at depth 1
        M.add(r_bot, col(i, 0), _block(gr, 1, 1), 1 / h)
        M.add(r_bot, col(i, 1), _block(gr, 1, 0), -1 / h, eye=-1)
        if i + 1 <= L - 1:
            M.add(r_bot, col(i + 1, 0), _block(gr, 1, nr + 1), -1 / h)
            M.add(r_bot, col(i + 1, 1), _block(gr, 1, nr), 1 / h)
    return M


def assemble_M0(greens_list, part: LayerPartition) -> BlockInterfaceMatrix:
    """Companion system evaluated just outside each layer; no identity blocks."""
    _check_layers(greens_list, part)
    L = part.L
    h = greens_list[0].h
    m = next(iter(greens_list[0].blocks.values())).shape[0]
    M0 = BlockInterfaceMatrix(2 * L - 2, 2 * L - 2, m)
    col = lambda i, slot: 2 * (i - 1) + slot
    for i in range(1, L):
        g, n = greens_list[i - 1], part.thickness(i)
        r_top = 2 * (i - 1)  # layer i at depth n^i + 1
        if i >= 2:
            M0.add(r_top, col(i - 1, 0), _block(g, n + 1, 1), 1 / h)
            M0.add(r_top, col(i - 1, 1), _block(g, n + 1, 0), -1 / h)
        M0.add(r_top, col(i, 0), _block(g, n + 1, n + 1), -1 / h)
        M0.add(r_top, col(i, 1), _block(g, n + 1, n), 1 / h)
        gr, nr = greens_list[i], part.thickness(i + 1)
        r_bot = 2 * i - 1  # layer i+1 at depth 0
        M0.add(r_bot, col(i, 0), _block(gr, 0, 1), 1 / h)
        M0.add(r_bot, col(i, 1), _block(gr, 0, 0), -1 / h)
        if i + 1 <= L - 1:
            M0.add(r_bot, col(i + 1, 0), _block(gr, 0, nr + 1), -1 / h)
            M0.add(r_bot, col(i + 1, 1), _block(gr, 0, nr), 1 / h)
    return M0


def assemble_rhs(newton_list, part: LayerPartition, variant="M") -> TraceVector:
    """Stack per-layer Newton traces in interface row order (not negated)."""
    if len(newton_list) != part.L:
        raise ValueError("need one Newton trace set per layer")
    blocks = []
    for i in range(1, part.L):
        n = part.thickness(i)
        if variant == "M":
            blocks.append(newton_list[i - 1][n])
            blocks.append(newton_list[i][1])
        elif variant == "M0":
            blocks.append(newton_list[i - 1][n + 1])
            blocks.append(newton_list[i][0])
        else:
            raise ValueError(f"unknown rhs variant {variant!r}")
    return TraceVector(blocks)


def extrapolator(greens: InterfaceGreens, direction: str) -> np.ndarray:
    """One-sided trace stepper: maps the inner interface value to the outer one.

    up: E with E @ G(z_1, z_k) = G(z_0, z_k) for k >= 1 (receiving layer below
    the interface); down: E @ G(z_n, z_k) = G(z_{n+1}, z_k) for k <= n.
    Computed by a partially pivoted dense solve, never explicit inversion.
    """
    n = greens.n_layer
    if direction == "up":
        num, den = _block(greens, 0, 1), _block(greens, 1, 1)
    elif direction == "down":
        num, den = _block(greens, n + 1, n), _block(greens, n, n)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    cond = np.linalg.cond(den)
    if not np.isfinite(cond) or cond > EXTRAPOLATOR_COND_LIMIT:
        warnings.warn(
            f"extrapolator diagonal block is ill conditioned (cond ~ {cond:.2e})",
            RuntimeWarning,
            stacklevel=2,
        )
    return np.linalg.solve(den.T, num.T).T


def sweep_permutation(L: int) -> np.ndarray:
    """Row order that makes the doubled system triangular-plus-remainder.

    Returns natural block-row indices: first the down-sweep rows
    (T_{2i-1}, B_{2i-1} per interface, top to bottom), then the up-sweep rows
    (B_{2i}, T_{2i} per interface).
    """
    nt = 2 * L - 2
    down, up = [], []
    for i in range(1, L):
        down += [2 * i - 2, nt + 2 * i - 2]
        up += [nt + 2 * i - 1, 2 * i - 1]
    return np.array(down + up, dtype=np.intp)


def assemble_polarized(variant, greens_list, part: LayerPartition, kernel_transform=None):
    """Doubled system over (down, up) traces; returns (matrix, row permutation).

    variant "jump" completes the consistency rows with outside-depth relations,
    "extrapolation" with one-sided trace steppers, and "annihilator" (testing
    only) with the radiation conditions themselves. The permutation is the
    sweep order for the first two variants and None for the annihilator.
    kernel_transform(layer, target_depth, source_depth, block) may wrap stored
    blocks (e.g. compress them); each distinct block is transformed once and
    shared across every entry that references it.
    """
    if variant not in ("jump", "extrapolation", "annihilator"):
        raise ValueError(f"unknown polarized variant {variant!r}")
    _check_layers(greens_list, part)
    L = part.L
    h = greens_list[0].h
    m = next(iter(greens_list[0].blocks.values())).shape[0]
    nt = 2 * L - 2
    pol = BlockInterfaceMatrix(2 * nt, 2 * nt, m)

    cache: dict = {}

    def S(ell, j, k):
        key = (ell, j, k)
        if key not in cache:
            raw = _block(greens_list[ell - 1], j, k)
            cache[key] = raw if kernel_transform is None else kernel_transform(ell, j, k, raw)
        return cache[key]

    dn = lambda i, slot: 2 * (i - 1) + slot
    up = lambda i, slot: nt + 2 * (i - 1) + slot

    for i in range(1, L):
        n, nr = part.thickness(i), part.thickness(i + 1)
        t1, t2 = 2 * (i - 1), 2 * i - 1
        b1, b2 = nt + 2 * (i - 1), nt + 2 * i - 1

        # Row T_{2i-1}: layer i consistency at depth n^i.
        if variant == "annihilator":
            for half in (dn, up):
                if i >= 2:
                    pol.add(t1, half(i - 1, 0), S(i, n, 1), 1 / h)
                    pol.add(t1, half(i - 1, 1), S(i, n, 0), -1 / h)
                pol.add(t1, half(i, 0), S(i, n, n + 1), -1 / h, eye=-1)
                pol.add(t1, half(i, 1), S(i, n, n), 1 / h)
        else:
            if i >= 2:
                pol.add(t1, dn(i - 1, 0), S(i, n, 1), 1 / h)
                pol.add(t1, dn(i - 1, 1), S(i, n, 0), -1 / h)
                pol.add(t1, up(i - 1, 0), S(i, n, 1), 1 / h)
                pol.add(t1, up(i - 1, 1), S(i, n, 0), -1 / h)
            pol.add(t1, dn(i, 0), eye=-1)
            pol.add(t1, up(i, 0), S(i, n, n + 1), -1 / h, eye=-1)
            pol.add(t1, up(i, 1), S(i, n, n), 1 / h)

        # Row T_{2i}: layer i+1 consistency at depth 1.
        if variant == "annihilator":
            for half in (dn, up):
                pol.add(t2, half(i, 0), S(i + 1, 1, 1), 1 / h)
                pol.add(t2, half(i, 1), S(i + 1, 1, 0), -1 / h, eye=-1)
                if i + 1 <= L - 1:
                    pol.add(t2, half(i + 1, 0), S(i + 1, 1, nr + 1), -1 / h)
                    pol.add(t2, half(i + 1, 1), S(i + 1, 1, nr), 1 / h)
        else:
            pol.add(t2, dn(i, 0), S(i + 1, 1, 1), 1 / h)
            pol.add(t2, dn(i, 1), S(i + 1, 1, 0), -1 / h, eye=-1)
            pol.add(t2, up(i, 1), eye=-1)
            if i + 1 <= L - 1:
                pol.add(t2, dn(i + 1, 0), S(i + 1, 1, nr + 1), -1 / h)
                pol.add(t2, dn(i + 1, 1), S(i + 1, 1, nr), 1 / h)
                pol.add(t2, up(i + 1, 0), S(i + 1, 1, nr + 1), -1 / h)
                pol.add(t2, up(i + 1, 1), S(i + 1, 1, nr), 1 / h)

        # Rows B_{2i-1}, B_{2i}: variant-specific completion.
        if variant == "jump":
            if i >= 2:
                pol.add(b1, dn(i - 1, 0), S(i, n + 1, 1), 1 / h)
                pol.add(b1, dn(i - 1, 1), S(i, n + 1, 0), -1 / h)
                pol.add(b1, up(i - 1, 0), S(i, n + 1, 1), 1 / h)
                pol.add(b1, up(i - 1, 1), S(i, n + 1, 0), -1 / h)
            pol.add(b1, dn(i, 1), eye=-1)
            pol.add(b1, up(i, 0), S(i, n + 1, n + 1), -1 / h)
            pol.add(b1, up(i, 1), S(i, n + 1, n), 1 / h)

            pol.add(b2, dn(i, 0), S(i + 1, 0, 1), 1 / h)
            pol.add(b2, dn(i, 1), S(i + 1, 0, 0), -1 / h)
            pol.add(b2, up(i, 0), eye=-1)
            if i + 1 <= L - 1:
                pol.add(b2, dn(i + 1, 0), S(i + 1, 0, nr + 1), -1 / h)
                pol.add(b2, dn(i + 1, 1), S(i + 1, 0, nr), 1 / h)
                pol.add(b2, up(i + 1, 0), S(i + 1, 0, nr + 1), -1 / h)
                pol.add(b2, up(i + 1, 1), S(i + 1, 0, nr), 1 / h)
        elif variant == "extrapolation":
            pol.add(b1, dn(i, 0), extrapolator(greens_list[i - 1], "down"), 1.0)
            pol.add(b1, dn(i, 1), eye=-1)
            pol.add(b2, up(i, 0), eye=-1)
            pol.add(b2, up(i, 1), extrapolator(greens_list[i], "up"), 1.0)
        else:  # annihilator
            pol.add(b1, dn(i, 0), S(i, n, n + 1), -1 / h)
            pol.add(b1, dn(i, 1), S(i, n, n), 1 / h)
            pol.add(b2, up(i, 0), S(i + 1, 1, 1), 1 / h)
            pol.add(b2, up(i, 1), S(i + 1, 1, 0), -1 / h)

    perm = None if variant == "annihilator" else sweep_permutation(L)
    return pol, perm


def polarized_rhs(newton_list, part: LayerPartition, variant) -> np.ndarray:
    """Right-hand side of the doubled system, in natural row order."""
    top = -assemble_rhs(newton_list, part, "M").stack()
    if variant == "jump":
        bottom = -assemble_rhs(newton_list, part, "M0").stack()
    elif variant in ("extrapolation", "annihilator"):
        bottom = np.zeros_like(top)
    else:
        raise ValueError(f"unknown polarized variant {variant!r}")
    return np.concatenate([top, bottom])


@dataclass
class SplitD:
    down: BlockInterfaceMatrix  # block lower triangular over down columns
    up: BlockInterfaceMatrix  # block upper triangular over up columns


@dataclass
class SplitR:
    upper: BlockInterfaceMatrix  # down-sweep rows acting on up columns
    lower: BlockInterfaceMatrix  # up-sweep rows acting on down columns


def split_DR(pol: BlockInterfaceMatrix, perm: np.ndarray):
    """Split the permuted doubled system into triangular D and remainder R.

    Entries are shared with the input matrix, not copied, so
    dense(D) + dense(R) equals the row-permuted dense input exactly.
    """
    if pol.n_block_rows != pol.n_block_cols or pol.n_block_rows % 2:
        raise ValueError("polarized matrix must be square with an even block count")
    nt = pol.n_block_rows // 2
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    d = SplitD(
        down=BlockInterfaceMatrix(nt, nt, pol.m), up=BlockInterfaceMatrix(nt, nt, pol.m)
    )
    r = SplitR(
        upper=BlockInterfaceMatrix(nt, nt, pol.m), lower=BlockInterfaceMatrix(nt, nt, pol.m)
    )
    for (i, j), e in pol.entries.items():
        pos = inv[i]
        if pos < nt:
            target = d.down if j < nt else r.upper
            target.entries[(pos, j % nt)] = e
        else:
            target = r.lower if j < nt else d.up
            target.entries[(pos - nt, j % nt)] = e
    return d, r


def solve_block_triangular(tri: BlockInterfaceMatrix, rhs: np.ndarray, kind: str) -> np.ndarray:
    """Substitution for triangular blocks whose diagonal is exactly -I.

    Row i reads sum_{j != i} A_ij x_j - x_i = c_i, so x_i is accumulated as
    sum_j A_ij x_j - c_i with no divisions.
    """
    m, nb = tri.m, tri.n_block_rows
    if rhs.shape != (nb * m,):
        raise ValueError("rhs length does not match the block layout")
    order = range(nb) if kind == "lower" else range(nb - 1, -1, -1)
    rows = tri.rows()
    x = np.zeros(nb * m, dtype=np.complex128)
    for i in order:
        acc = -rhs[i * m : (i + 1) * m]
        for j, e in rows[i]:
            if j == i:
                if not (e.is_pure_identity() and e.eye == -1):
                    raise ValueError(f"diagonal block {i} is not exactly -I")
            else:
                acc = acc + e.apply(x[j * m : (j + 1) * m])
        x[i * m : (i + 1) * m] = acc
    return x
