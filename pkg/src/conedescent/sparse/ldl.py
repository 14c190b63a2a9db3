"""Symbolic and numeric LDL' factorization with a serializable elimination program.

The symbolic phase runs once per sparsity pattern: it permutes the pattern,
builds the elimination tree, the column pattern of L, and two flat operand
programs (per-row update lists plus the input-scatter map).  The numeric phase
replays those programs with no pattern queries and no allocation, applying
dynamic diagonal regularization; iterative refinement against the original
matrix recovers the unregularized solution.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .matrix import SparseMat

__all__ = [
    "SymbolicFactorization",
    "NumericFactorization",
    "RegularizationSettings",
    "RefinementDivergence",
    "SerializationError",
    "symbolic_ldl",
    "numeric_ldl",
    "solve_refined",
    "serialize_symbolic",
    "deserialize_symbolic",
]

_MAGIC = b"FSYM"
_VERSION = 1


class RefinementDivergence(RuntimeError):
    """Iterative refinement residual grew twice in a row."""


class SerializationError(ValueError):
    """Corrupt, truncated, or incompatible symbolic factorization stream."""


@dataclass
class SymbolicFactorization:
    """Reusable elimination program for one sparsity pattern and permutation."""

    n: int
    perm: np.ndarray
    pattern_indptr: np.ndarray
    pattern_indices: np.ndarray
    parent: np.ndarray
    Lp: np.ndarray          # strictly-lower column pointers of L (permuted frame)
    Li: np.ndarray
    row_start: np.ndarray   # per-row update program: columns to consume per row
    row_cols: np.ndarray
    a_start: np.ndarray     # scatter program: input data position -> accumulator row
    a_srcpos: np.ndarray
    a_dstrow: np.ndarray
    version: int = _VERSION

    @property
    def nnz_l(self) -> int:
        """Stored nonzeros of L including the unit diagonal."""
        return int(self.Lp[-1]) + self.n

    def matches(self, mat: SparseMat) -> bool:
        return (
            mat.n_rows == self.n
            and mat.n_cols == self.n
            and np.array_equal(mat.indptr, self.pattern_indptr)
            and np.array_equal(mat.indices, self.pattern_indices)
        )

    def __eq__(self, other):
        if not isinstance(other, SymbolicFactorization):
            return NotImplemented
        return self.n == other.n and self.version == other.version and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("perm", "pattern_indptr", "pattern_indices", "parent", "Lp",
                      "Li", "row_start", "row_cols", "a_start", "a_srcpos", "a_dstrow")
        )


@dataclass
class RegularizationSettings:
    """Dynamic regularization policy for the numeric factorization.

    ``signs`` (original index frame) gives the expected pivot sign per row:
    +1/-1 enforce the sign, 0 guards magnitude only.  Omitted means all zeros.
    """

    delta: float = 1e-8
    signs: np.ndarray | None = None


@dataclass
class NumericFactorization:
    symbolic: SymbolicFactorization
    Lx: np.ndarray
    D: np.ndarray
    reg: np.ndarray          # applied diagonal shift per permuted pivot
    delta: float
    _lnz: np.ndarray = field(repr=False, default=None)
    _Y: np.ndarray = field(repr=False, default=None)
    _signs_perm: np.ndarray = field(repr=False, default=None)

    @property
    def total_regularization(self) -> float:
        return float(np.abs(self.reg).sum())


def _etree_upper(n, indptr, indices):
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(indptr[k], indptr[k + 1]):
            i = indices[p]
            while i != -1 and i < k:
                nxt = ancestor[i]
                ancestor[i] = k
                if nxt == -1:
                    parent[i] = k
                i = nxt
    return parent


def symbolic_ldl(pattern: SparseMat, perm: np.ndarray | None = None) -> SymbolicFactorization:
    """Analyze an upper-triangular symmetric pattern under a permutation.

    The result is bound to the exact canonical CSC pattern passed in: the
    scatter program addresses positions of ``pattern.data``.
    """
    if not pattern.upper:
        raise ValueError("symbolic_ldl expects upper-triangle storage")
    n = pattern.n_rows
    if perm is None:
        perm = np.arange(n, dtype=np.int64)
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError("perm must be a permutation of 0..n-1")
    iperm = np.empty(n, dtype=np.int64)
    iperm[perm] = np.arange(n, dtype=np.int64)

    # permuted upper triplets with positions into the original data array
    src = np.arange(pattern.nnz, dtype=np.int64)
    orig_cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(pattern.indptr))
    pi = iperm[pattern.indices]
    pj = iperm[orig_cols]
    rows = np.minimum(pi, pj)
    cols = np.maximum(pi, pj)
    order = np.lexsort((rows, cols))
    rows, cols, src = rows[order], cols[order], src[order]
    up_ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(up_ptr, cols + 1, 1)
    np.cumsum(up_ptr, out=up_ptr)

    parent = _etree_upper(n, up_ptr, rows)

    # row patterns via elimination-tree reach; row lists kept sorted ascending
    mark = np.full(n, -1, dtype=np.int64)
    row_lists: list[np.ndarray] = []
    col_counts = np.zeros(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    for k in range(n):
        mark[k] = k
        hits = []
        for p in range(up_ptr[k], up_ptr[k + 1]):
            i = rows[p]
            depth = 0
            while mark[i] != k:
                stack[depth] = i
                depth += 1
                mark[i] = k
                i = parent[i]
            for t in range(depth):
                hits.append(stack[t])
        hits_arr = np.array(sorted(hits), dtype=np.int64)
        row_lists.append(hits_arr)
        col_counts[hits_arr] += 1

    Lp = np.concatenate(([0], np.cumsum(col_counts))).astype(np.int64)
    Li = np.empty(int(Lp[-1]), dtype=np.int64)
    fill = Lp[:-1].copy()
    for k in range(n):
        for j in row_lists[k]:
            Li[fill[j]] = k
            fill[j] += 1

    row_start = np.concatenate(([0], np.cumsum([r.size for r in row_lists]))).astype(np.int64)
    if row_lists and int(row_start[-1]):
        row_cols = np.concatenate(row_lists).astype(np.int64)
    else:
        row_cols = np.zeros(0, np.int64)

    return SymbolicFactorization(
        n=n,
        perm=perm,
        pattern_indptr=pattern.indptr.copy(),
        pattern_indices=pattern.indices.copy(),
        parent=parent,
        Lp=Lp,
        Li=Li,
        row_start=row_start,
        row_cols=row_cols,
        a_start=up_ptr,
        a_srcpos=src,
        a_dstrow=rows.copy(),
    )


def numeric_ldl(matrix: SparseMat, symbolic: SymbolicFactorization,
                reg: RegularizationSettings | None = None,
                out: NumericFactorization | None = None,
                check_pattern: bool = True) -> NumericFactorization:
    """Factor P (A + E) P' = L D L' by replaying the symbolic program.

    ``out`` recycles the buffers of a previous factorization of the same
    pattern; passing it keeps the numeric phase allocation-free.
    """
    reg = reg or RegularizationSettings()
    if check_pattern and not symbolic.matches(matrix):
        raise ValueError("matrix pattern differs from the analyzed pattern")
    n = symbolic.n
    if out is None:
        signs_perm = np.zeros(n, dtype=np.int8)
        if reg.signs is not None:
            signs_perm[:] = np.asarray(reg.signs, dtype=np.int8)[symbolic.perm]
        out = NumericFactorization(
            symbolic=symbolic,
            Lx=np.zeros(int(symbolic.Lp[-1])),
            D=np.zeros(n),
            reg=np.zeros(n),
            delta=reg.delta,
            _lnz=np.zeros(n, dtype=np.int64),
            _Y=np.zeros(n),
            _signs_perm=signs_perm,
        )
    else:
        out.delta = reg.delta
        if reg.signs is not None:
            out._signs_perm[:] = np.asarray(reg.signs, dtype=np.int8)[symbolic.perm]
    kernels.ldl_factor_program(
        n, symbolic.Lp, symbolic.Li, symbolic.row_start, symbolic.row_cols,
        symbolic.a_start, symbolic.a_srcpos, symbolic.a_dstrow, matrix.data,
        out.delta, out._signs_perm, out.Lx, out.D, out._Y, out._lnz, out.reg,
    )
    return out


def ldl_solve_inplace(fact: NumericFactorization, x: np.ndarray, work: np.ndarray) -> None:
    """x <- (LDL')^{-1} x using the permutation bound to the factorization."""
    sym = fact.symbolic
    work[:] = x[sym.perm]
    kernels.lower_solve(sym.n, sym.Lp, sym.Li, fact.Lx, work)
    kernels.diag_solve(sym.n, fact.D, work)
    kernels.lower_t_solve(sym.n, sym.Lp, sym.Li, fact.Lx, work)
    x[sym.perm] = work


def solve_refined(fact: NumericFactorization, matrix: SparseMat, rhs: np.ndarray,
                  max_refine: int = 3, tol: float = 1e-11,
                  out: np.ndarray | None = None,
                  work: np.ndarray | None = None,
                  raise_on_divergence: bool = True) -> np.ndarray:
    """Solve the original system, polishing away the regularization.

    Back/forward substitution gives a solution of the perturbed system; up to
    ``max_refine`` refinement sweeps against the unregularized matrix push the
    residual below ``tol * (1 + |rhs|_inf)``.  A residual that grows on two
    consecutive sweeps raises :class:`RefinementDivergence` unless
    ``raise_on_divergence`` is off, in which case the current iterate is
    returned for the caller to judge.
    """
    n = fact.symbolic.n
    if rhs.shape != (n,):
        raise ValueError("right-hand side length mismatch")
    x = out if out is not None else np.empty(n)
    if work is None:
        work = np.empty(3 * n)
    wp = work[:n]
    r = work[n: 2 * n]
    mv = work[2 * n: 3 * n]

    x[:] = rhs
    ldl_solve_inplace(fact, x, wp)
    rhs_scale = 1.0 + (float(np.max(np.abs(rhs))) if rhs.size else 0.0)
    target = tol * rhs_scale
    prev = np.inf
    best = np.inf
    grew = 0
    for _ in range(max_refine):
        kernels.sym_upper_matvec(n, matrix.indptr, matrix.indices, matrix.data, x, mv)
        np.subtract(rhs, mv, out=r)
        res = float(np.max(np.abs(r))) if n else 0.0
        if res <= target:
            return x
        best = min(best, res)
        if res >= prev:
            grew += 1
            # oscillation at an already-tiny residual is roundoff, not failure
            if grew >= 2 and best > 1e-9 * rhs_scale and raise_on_divergence:
                raise RefinementDivergence(
                    f"refinement residual grew twice (last {res:.3e})")
            if grew >= 2:
                return x
        else:
            grew = 0
        prev = res
        ldl_solve_inplace(fact, r, wp)
        x += r
    return x


def _pack_arrays(*arrays: np.ndarray) -> bytes:
    chunks = []
    for a in arrays:
        chunks.append(np.ascontiguousarray(a, dtype="<i8").tobytes())
    return b"".join(chunks)


def serialize_symbolic(sym: SymbolicFactorization) -> bytes:
    """Little-endian stream: magic, version, dims, index arrays, CRC32."""
    header = _MAGIC + struct.pack(
        "<IQQQ", _VERSION, sym.n, int(sym.pattern_indptr[-1]), int(sym.Lp[-1])
    )
    body = _pack_arrays(
        sym.perm, sym.pattern_indptr, sym.pattern_indices, sym.parent,
        sym.Lp, sym.Li, sym.row_start, sym.row_cols,
        sym.a_start, sym.a_srcpos, sym.a_dstrow,
    )
    payload = header + body
    return payload + struct.pack("<I", zlib.crc32(payload))


def deserialize_symbolic(data: bytes) -> SymbolicFactorization:
    if len(data) < 32 or data[:4] != _MAGIC:
        raise SerializationError("bad magic or truncated header")
    if zlib.crc32(data[:-4]) != struct.unpack("<I", data[-4:])[0]:
        raise SerializationError("checksum failure")
    version, n, nnz_p, nnz_l = struct.unpack("<IQQQ", data[4:32])
    if version != _VERSION:
        raise SerializationError(f"unsupported version {version}")
    sizes = [n, n + 1, nnz_p, n, n + 1, nnz_l, n + 1, nnz_l, n + 1, nnz_p, nnz_p]
    need = 32 + 8 * sum(sizes) + 4
    if len(data) != need:
        raise SerializationError(f"stream length {len(data)}, expected {need}")
    off = 32
    arrays = []
    for size in sizes:
        arrays.append(np.frombuffer(data, dtype="<i8", count=size, offset=off).astype(np.int64))
        off += 8 * size
    perm, pptr, pidx, parent, Lp, Li, row_start, row_cols, a_start, a_src, a_dst = arrays
    return SymbolicFactorization(
        n=int(n), perm=perm, pattern_indptr=pptr, pattern_indices=pidx, parent=parent,
        Lp=Lp, Li=Li, row_start=row_start, row_cols=row_cols,
        a_start=a_start, a_srcpos=a_src, a_dstrow=a_dst, version=int(version),
    )
