"""Compressed sparse column matrices and the plain-text coordinate fixture format."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["SparseMat", "read_coordinate", "write_coordinate"]


@dataclass
class SparseMat:
    """CSC matrix; symmetric matrices are stored as the upper triangle.

    Row indices are strictly increasing within each column and duplicates are
    summed at construction, so the representation is canonical.
    """

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    upper: bool = False

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @classmethod
    def from_triplets(cls, n_rows, n_cols, rows, cols, vals, upper=False) -> "SparseMat":
        mat, _ = cls.from_triplets_with_map(n_rows, n_cols, rows, cols, vals, upper=upper)
        return mat

    @classmethod
    def from_triplets_with_map(cls, n_rows, n_cols, rows, cols, vals, upper=False):
        """Build a canonical CSC matrix and the position of every input triplet.

        Returns ``(mat, pos)`` where ``mat.data[pos[t]]`` is the slot triplet
        ``t`` was accumulated into; duplicate coordinates share a slot.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("triplet arrays must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
            raise ValueError("triplet index out of range")
        if upper:
            if n_rows != n_cols:
                raise ValueError("upper storage requires a square matrix")
            if np.any(rows > cols):
                raise ValueError("upper storage admits entries with row <= col only")
        if rows.size == 0:
            return (
                cls(n_rows, n_cols, np.zeros(n_cols + 1, np.int64), np.zeros(0, np.int64),
                    np.zeros(0), upper),
                np.zeros(0, np.int64),
            )
        order = np.lexsort((rows, cols))
        r, c = rows[order], cols[order]
        first = np.empty(r.size, dtype=bool)
        first[0] = True
        first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
        gid = np.cumsum(first) - 1
        data = np.zeros(int(gid[-1]) + 1)
        np.add.at(data, gid, vals[order])
        indices = r[first]
        indptr = np.zeros(n_cols + 1, np.int64)
        np.add.at(indptr, c[first] + 1, 1)
        np.cumsum(indptr, out=indptr)
        pos = np.empty(rows.size, dtype=np.int64)
        pos[order] = gid
        return cls(n_rows, n_cols, indptr, indices, data, upper), pos

    def position_of(self, row: int, col: int) -> int:
        """Data index of entry (row, col); raises KeyError if not stored."""
        lo, hi = int(self.indptr[col]), int(self.indptr[col + 1])
        k = lo + int(np.searchsorted(self.indices[lo:hi], row))
        if k < hi and self.indices[k] == row:
            return k
        raise KeyError((row, col))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        for j in range(self.n_cols):
            rr = self.indices[self.indptr[j]: self.indptr[j + 1]]
            vv = self.data[self.indptr[j]: self.indptr[j + 1]]
            out[rr, j] = vv
            if self.upper:
                below = rr != j
                out[j, rr[below]] = vv[below]
        return out

    def full_nnz(self) -> int:
        """Nonzero count of the full matrix (mirroring upper storage if set)."""
        if not self.upper:
            return self.nnz
        cols = np.repeat(np.arange(self.n_cols), np.diff(self.indptr))
        n_diag = int(np.count_nonzero(self.indices == cols))
        return 2 * self.nnz - n_diag

    def copy(self) -> "SparseMat":
        return SparseMat(self.n_rows, self.n_cols, self.indptr.copy(),
                         self.indices.copy(), self.data.copy(), self.upper)

    def same_pattern(self, other: "SparseMat") -> bool:
        return (
            self.shape == other.shape
            and self.upper == other.upper
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )


def write_coordinate(mat: SparseMat, path) -> None:
    """Write a square matrix as 'dim nnz' then 0-based 'row col value' lines."""
    if mat.n_rows != mat.n_cols:
        raise ValueError("coordinate fixture format is for square matrices")
    lines = [f"{mat.n_rows} {mat.nnz}"]
    for j in range(mat.n_cols):
        for k in range(mat.indptr[j], mat.indptr[j + 1]):
            lines.append(f"{mat.indices[k]} {j} {float(mat.data[k])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_coordinate(path, upper: bool = False) -> SparseMat:
    text = Path(path).read_text().split("\n")
    header = text[0].split()
    if len(header) != 2:
        raise ValueError("coordinate header must be 'dim nnz'")
    dim, nnz = int(header[0]), int(header[1])
    rows, cols, vals = [], [], []
    for line in text[1:]:
        line = line.strip()
        if not line:
            continue
        r, c, v = line.split()
        rows.append(int(r))
        cols.append(int(c))
        vals.append(float(v))
    if len(rows) != nnz:
        raise ValueError(f"header promised {nnz} entries, file has {len(rows)}")
    return SparseMat.from_triplets(dim, dim, rows, cols, vals, upper=upper)
