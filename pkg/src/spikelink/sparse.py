"""Row-compressed sparse matrices for graph propagation operators.

The propagation operator of the encoder is a symmetric, normalized
adjacency matrix. It is stored in CSR form (row offsets, column indices,
values) and multiplied against dense spike/feature matrices. scipy's
compiled CSR kernels back the products; construction and validation are
done here so the invariants hold independently of the backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class SparseFormatError(ValueError):
    """Raised when CSR arrays violate the structural invariants."""


@dataclass
class CsrMatrix:
    """Compressed sparse row matrix.

    Invariants (checked by :meth:`validate`):
      * ``row_offsets`` has ``num_rows + 1`` entries, is non-decreasing,
        starts at 0 and ends at ``nnz``.
      * ``col_indices`` lie in ``[0, num_cols)`` and are strictly
        increasing within each row (no duplicate entries).
      * ``values`` has one entry per stored element.
    """

    num_rows: int
    num_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _scipy_cache: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.row_offsets = np.asarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(self.col_indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.validate()

    # -- construction -------------------------------------------------

    @classmethod
    def from_coo(
        cls,
        rows: np.ndarray,
        cols: np.ndarray,
        vals: np.ndarray,
        num_rows: int,
        num_cols: int,
    ) -> "CsrMatrix":
        """Build from coordinate triplets. Duplicate coordinates are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape):
            raise SparseFormatError("coordinate arrays must have equal length")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            keep = np.ones(rows.size, dtype=bool)
            keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            if not keep.all():
                group = np.cumsum(keep) - 1
                summed = np.zeros(int(group[-1]) + 1, dtype=np.float64)
                np.add.at(summed, group, vals)
                rows, cols, vals = rows[keep], cols[keep], summed
        offsets = np.zeros(num_rows + 1, dtype=np.int64)
        np.add.at(offsets, rows + 1, 1)
        np.cumsum(offsets, out=offsets)
        return cls(num_rows, num_cols, offsets, cols, vals)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "CsrMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        rows, cols = np.nonzero(dense)
        return cls.from_coo(rows, cols, dense[rows, cols], dense.shape[0], dense.shape[1])

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    # -- invariants ----------------------------------------------------

    def validate(self) -> None:
        if self.num_rows < 0 or self.num_cols < 0:
            raise SparseFormatError("negative dimensions")
        if self.row_offsets.shape != (self.num_rows + 1,):
            raise SparseFormatError("row_offsets must have num_rows + 1 entries")
        if self.row_offsets[0] != 0:
            raise SparseFormatError("row_offsets must start at 0")
        if np.any(np.diff(self.row_offsets) < 0):
            raise SparseFormatError("row_offsets must be non-decreasing")
        nnz = int(self.row_offsets[-1])
        if self.col_indices.shape != (nnz,) or self.values.shape != (nnz,):
            raise SparseFormatError("col_indices/values inconsistent with row_offsets")
        if nnz and (self.col_indices.min() < 0 or self.col_indices.max() >= self.num_cols):
            raise SparseFormatError("column index out of range")
        for r in range(self.num_rows):
            lo, hi = self.row_offsets[r], self.row_offsets[r + 1]
            row_cols = self.col_indices[lo:hi]
            if row_cols.size > 1 and np.any(np.diff(row_cols) <= 0):
                raise SparseFormatError(f"columns not strictly increasing in row {r}")

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_rows, self.num_cols)

    def row_nnz(self) -> np.ndarray:
        """Number of stored entries per row (degree for adjacency-like operators)."""
        return np.diff(self.row_offsets)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        if self.num_rows != self.num_cols:
            return False
        m = self._scipy()
        diff = m - m.T
        if diff.nnz == 0:
            return True
        return bool(np.abs(diff.data).max() <= tol)

    # -- products ------------------------------------------------------

    def scipy_csr(self) -> sp.csr_matrix:
        """Shared scipy view of the same arrays (do not mutate)."""
        if self._scipy_cache is None:
            self._scipy_cache = sp.csr_matrix(
                (self.values, self.col_indices, self.row_offsets),
                shape=(self.num_rows, self.num_cols),
            )
        return self._scipy_cache

    _scipy = scipy_csr

    def matmul(self, dense: np.ndarray) -> np.ndarray:
        """Product against a dense matrix or vector."""
        dense = np.asarray(dense)
        if dense.shape[0] != self.num_cols:
            raise SparseFormatError(
                f"dimension mismatch: {self.shape} @ {dense.shape}"
            )
        out = self._scipy() @ dense
        return np.asarray(out)

    def __matmul__(self, dense: np.ndarray) -> np.ndarray:
        return self.matmul(dense)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.num_rows, self.num_cols))
        for r in range(self.num_rows):
            lo, hi = self.row_offsets[r], self.row_offsets[r + 1]
            out[r, self.col_indices[lo:hi]] = self.values[lo:hi]
        return out
