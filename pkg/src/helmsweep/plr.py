"""Adaptive partitioned-low-rank compression of dense interface blocks.

A dense block is recursively quartered until every leaf passes the
epsilon-rank acceptance test (the (r_max+1)-th singular value falls below
epsilon); accepted leaves store the truncated SVD factor pair (U*Sigma, Vt).
The resulting quadtree supports a recursive matvec and can be flattened into
two sparse factors so repeated applications ride on sparse BLAS instead of
Python recursion.

Sub-blocks whose smaller dimension is at most 2*r_max are stored directly as
exact truncated-SVD leaves (rank = number of singular values >= epsilon):
recursing further could not shrink them, and the acceptance test is moot.
Odd sizes split floor-first, so the tree handles arbitrary rectangular
shapes, not just powers of two.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "PLRLeaf",
    "PLRBranch",
    "PLRMatrix",
    "PLRSparseForm",
    "compress",
    "to_sparse_form",
    "compression_report",
    "default_epsilon",
    "default_r_max",
    "dump_plr",
    "load_plr",
]

PLR_MAGIC = b"PLR1"


def default_epsilon(n_layers: int) -> float:
    """Truncation tolerance 1e-9 / L, tightening with the layer count."""
    if n_layers < 1:
        raise ValueError("layer count must be at least 1")
    return 1e-9 / n_layers


def default_r_max(block_side: int) -> int:
    """Maximum leaf rank ceil(sqrt(side)) for an interface of that width."""
    if block_side < 1:
        raise ValueError("block side must be positive")
    return int(math.ceil(math.sqrt(block_side)))


@dataclass
class PLRLeaf:
    """Factor pair: u carries U*Sigma (m x r), vt is r x k."""

    u: np.ndarray
    vt: np.ndarray

    @property
    def shape(self):
        return (self.u.shape[0], self.vt.shape[1])

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    def stored_entries(self) -> int:
        m, k = self.shape
        return self.rank * (m + k)


@dataclass
class PLRBranch:
    """Quadrant children in (top-left, top-right, bottom-left, bottom-right)
    order; row/col splits are floor(m/2), floor(k/2)."""

    children: list
    shape: tuple

    @property
    def row_split(self) -> int:
        return self.shape[0] // 2

    @property
    def col_split(self) -> int:
        return self.shape[1] // 2


class PLRMatrix:
    """Quadtree-compressed block with recursive and adjoint matvec."""

    def __init__(self, root, shape, epsilon, r_max):
        self.root = root
        self.shape = tuple(shape)
        self.epsilon = float(epsilon)
        self.r_max = int(r_max)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.shape[1]:
            raise ValueError(
                f"dimension mismatch: block is {self.shape}, input has leading "
                f"dimension {x.shape[0]}"
            )
        return _apply(self.root, np.asarray(x))

    def matvec_adjoint(self, y: np.ndarray) -> np.ndarray:
        if y.shape[0] != self.shape[0]:
            raise ValueError(
                f"dimension mismatch: adjoint of {self.shape} block, input has "
                f"leading dimension {y.shape[0]}"
            )
        return _apply_adjoint(self.root, np.asarray(y))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.complex128)
        for row_off, col_off, leaf, _depth in self.leaves():
            m, k = leaf.shape
            out[row_off : row_off + m, col_off : col_off + k] = leaf.u @ leaf.vt
        return out

    def leaves(self):
        """Yield (row_offset, col_offset, leaf, depth) in preorder."""
        yield from _walk_leaves(self.root, 0, 0, 0)

    def branches(self):
        """Yield (row_offset, col_offset, branch, depth) in preorder."""
        yield from _walk_branches(self.root, 0, 0, 0)

    def stored_entries(self) -> int:
        return sum(leaf.stored_entries() for _, _, leaf, _ in self.leaves())

    def node_count(self) -> int:
        return _count_nodes(self.root)


def _apply(node, x):
    if isinstance(node, PLRLeaf):
        if node.rank == 0:
            shape = (node.shape[0],) + x.shape[1:]
            return np.zeros(shape, dtype=np.result_type(x.dtype, np.complex128))
        return node.u @ (node.vt @ x)
    cs = node.col_split
    tl, tr, bl, br = node.children
    x_lo, x_hi = x[:cs], x[cs:]
    top = _apply(tl, x_lo) + _apply(tr, x_hi)
    bot = _apply(bl, x_lo) + _apply(br, x_hi)
    return np.concatenate([top, bot], axis=0)


def _apply_adjoint(node, y):
    if isinstance(node, PLRLeaf):
        if node.rank == 0:
            shape = (node.shape[1],) + y.shape[1:]
            return np.zeros(shape, dtype=np.result_type(y.dtype, np.complex128))
        return node.vt.conj().T @ (node.u.conj().T @ y)
    rs = node.row_split
    tl, tr, bl, br = node.children
    y_lo, y_hi = y[:rs], y[rs:]
    left = _apply_adjoint(tl, y_lo) + _apply_adjoint(bl, y_hi)
    right = _apply_adjoint(tr, y_lo) + _apply_adjoint(br, y_hi)
    return np.concatenate([left, right], axis=0)


def _walk_leaves(node, row_off, col_off, depth):
    if isinstance(node, PLRLeaf):
        yield row_off, col_off, node, depth
        return
    rs, cs = node.row_split, node.col_split
    tl, tr, bl, br = node.children
    yield from _walk_leaves(tl, row_off, col_off, depth + 1)
    yield from _walk_leaves(tr, row_off, col_off + cs, depth + 1)
    yield from _walk_leaves(bl, row_off + rs, col_off, depth + 1)
    yield from _walk_leaves(br, row_off + rs, col_off + cs, depth + 1)


def _walk_branches(node, row_off, col_off, depth):
    if isinstance(node, PLRLeaf):
        return
    yield row_off, col_off, node, depth
    rs, cs = node.row_split, node.col_split
    tl, tr, bl, br = node.children
    yield from _walk_branches(tl, row_off, col_off, depth + 1)
    yield from _walk_branches(tr, row_off, col_off + cs, depth + 1)
    yield from _walk_branches(bl, row_off + rs, col_off, depth + 1)
    yield from _walk_branches(br, row_off + rs, col_off + cs, depth + 1)


def _count_nodes(node) -> int:
    if isinstance(node, PLRLeaf):
        return 1
    return 1 + sum(_count_nodes(c) for c in node.children)


def _truncated_leaf(block, sigma_cut):
    u, s, vt = np.linalg.svd(block, full_matrices=False)
    rank = int(np.count_nonzero(s >= sigma_cut))
    return PLRLeaf(
        u=np.ascontiguousarray(u[:, :rank] * s[:rank]),
        vt=np.ascontiguousarray(vt[:rank, :]),
    )


def _compress_node(block, r_max, epsilon):
    m, k = block.shape
    if min(m, k) <= 2 * r_max:
        return _truncated_leaf(block, epsilon)
    s = np.linalg.svd(block, compute_uv=False)
    if s[r_max] < epsilon:
        return _truncated_leaf(block, epsilon)
    rs, cs = m // 2, k // 2
    children = [
        _compress_node(block[:rs, :cs], r_max, epsilon),
        _compress_node(block[:rs, cs:], r_max, epsilon),
        _compress_node(block[rs:, :cs], r_max, epsilon),
        _compress_node(block[rs:, cs:], r_max, epsilon),
    ]
    return PLRBranch(children=children, shape=(m, k))


def compress(block: np.ndarray, r_max: int, epsilon: float) -> PLRMatrix:
    """Smallest admissible partition within the recursive dyadic quadtree."""
    block = np.asarray(block, dtype=np.complex128)
    if block.ndim != 2 or block.size == 0:
        raise ValueError("block must be a nonempty 2D array")
    if r_max < 1:
        raise ValueError("r_max must be at least 1")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    root = _compress_node(block, int(r_max), float(epsilon))
    return PLRMatrix(root, block.shape, epsilon, r_max)


class PLRSparseForm:
    """Flattened two-factor layout: apply = left @ (right @ x).

    right stacks every leaf's vt into rows of a (total_rank x cols) sparse
    matrix; left scatters each leaf's u into a (rows x total_rank) sparse
    matrix. Explicit zeros inside the factors are kept so the stored-entry
    count matches the tree exactly.
    """

    def __init__(self, left, right, shape):
        self.left = left
        self.right = right
        self.shape = tuple(shape)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.shape[1]:
            raise ValueError(
                f"dimension mismatch: block is {self.shape}, input has leading "
                f"dimension {x.shape[0]}"
            )
        return self.left @ (self.right @ x)

    def to_dense(self) -> np.ndarray:
        return (self.left @ self.right).toarray()

    def stored_entries(self) -> int:
        return self.left.nnz + self.right.nnz


def to_sparse_form(plr: PLRMatrix) -> PLRSparseForm:
    rows, cols = plr.shape
    u_rows, u_cols, u_vals = [], [], []
    v_rows, v_cols, v_vals = [], [], []
    slot = 0
    for row_off, col_off, leaf, _depth in plr.leaves():
        r = leaf.rank
        if r == 0:
            continue
        m, k = leaf.shape
        ui, uj = np.mgrid[0:m, 0:r]
        u_rows.append((ui + row_off).ravel())
        u_cols.append((uj + slot).ravel())
        u_vals.append(leaf.u.ravel())
        vi, vj = np.mgrid[0:r, 0:k]
        v_rows.append((vi + slot).ravel())
        v_cols.append((vj + col_off).ravel())
        v_vals.append(leaf.vt.ravel())
        slot += r
    def build(shape, ri, ci, vv):
        if not ri:
            return sp.csr_matrix(shape, dtype=np.complex128)
        return sp.csr_matrix(
            (np.concatenate(vv), (np.concatenate(ri), np.concatenate(ci))),
            shape=shape,
            dtype=np.complex128,
        )
    left = build((rows, slot), u_rows, u_cols, u_vals)
    right = build((slot, cols), v_rows, v_cols, v_vals)
    return PLRSparseForm(left, right, plr.shape)


def compression_report(plr: PLRMatrix) -> dict:
    rank_hist: dict = {}
    depth_hist: dict = {}
    stored = 0
    for _, _, leaf, depth in plr.leaves():
        rank_hist[leaf.rank] = rank_hist.get(leaf.rank, 0) + 1
        depth_hist[depth] = depth_hist.get(depth, 0) + 1
        stored += leaf.stored_entries()
    dense = plr.shape[0] * plr.shape[1]
    return {
        "stored_entries": stored,
        "dense_entries": dense,
        "ratio": stored / dense,
        "rank_histogram": rank_hist,
        "depth_histogram": depth_hist,
        "leaf_count": sum(depth_hist.values()),
        "node_count": plr.node_count(),
    }


_HEADER = struct.Struct("<4sQQdQQ")


def dump_plr(plr: PLRMatrix, path) -> None:
    """Binary dump: header (magic, shape, epsilon, r_max, node count) plus
    preorder node records; shapes are reconstructed from the split rule."""
    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(
            PLR_MAGIC,
            plr.shape[0],
            plr.shape[1],
            plr.epsilon,
            plr.r_max,
            plr.node_count(),
        )
    )
    _dump_node(plr.root, buf)
    data = buf.getvalue()
    if hasattr(path, "write"):
        path.write(data)
    else:
        with open(path, "wb") as fh:
            fh.write(data)


def _dump_node(node, buf) -> None:
    if isinstance(node, PLRLeaf):
        buf.write(b"c")
        buf.write(struct.pack("<Q", node.rank))
        buf.write(np.ascontiguousarray(node.u, dtype="<c16").tobytes())
        buf.write(np.ascontiguousarray(node.vt, dtype="<c16").tobytes())
    else:
        buf.write(b"h")
        for child in node.children:
            _dump_node(child, buf)


def load_plr(path) -> PLRMatrix:
    if hasattr(path, "read"):
        data = path.read()
    else:
        with open(path, "rb") as fh:
            data = fh.read()
    if len(data) < _HEADER.size:
        raise ValueError("truncated PLR dump")
    magic, rows, cols, epsilon, r_max, n_nodes = _HEADER.unpack_from(data, 0)
    if magic != PLR_MAGIC:
        raise ValueError(f"not a PLR dump (magic {magic!r})")
    buf = io.BytesIO(data[_HEADER.size :])
    root, seen = _load_node(buf, int(rows), int(cols))
    if seen != n_nodes:
        raise ValueError(f"node count mismatch: header {n_nodes}, read {seen}")
    if buf.read(1):
        raise ValueError("trailing bytes after last node record")
    return PLRMatrix(root, (rows, cols), epsilon, r_max)


def _load_node(buf, m, k):
    kind = buf.read(1)
    if kind == b"c":
        (rank,) = struct.unpack("<Q", _read_exact(buf, 8))
        u = np.frombuffer(_read_exact(buf, 16 * m * rank), dtype="<c16")
        vt = np.frombuffer(_read_exact(buf, 16 * rank * k), dtype="<c16")
        leaf = PLRLeaf(
            u=u.reshape(m, rank).astype(np.complex128),
            vt=vt.reshape(rank, k).astype(np.complex128),
        )
        return leaf, 1
    if kind != b"h":
        raise ValueError(f"corrupt node record kind {kind!r}")
    rs, cs = m // 2, k // 2
    sizes = [(rs, cs), (rs, k - cs), (m - rs, cs), (m - rs, k - cs)]
    children, seen = [], 1
    for cm, ck in sizes:
        child, used = _load_node(buf, cm, ck)
        children.append(child)
        seen += used
    return PLRBranch(children=children, shape=(m, k)), seen


def _read_exact(buf, count: int) -> bytes:
    data = buf.read(count)
    if len(data) != count:
        raise ValueError("truncated PLR dump")
    return data
