"""
Sparse matrices for ark_toolkit.

CsrMatrix is a plain compressed-sparse-row matrix. BlockCsrMatrix is a
block-diagonal matrix whose G square blocks share one sparsity pattern: the
index arrays are stored once, the values once per block.

Every row is accumulated in ascending column order, so a block matrix and its
assembled CSR equivalent produce identical products.
"""

import logging
from typing import Optional, Union

import numpy as np

from .errors import DimensionMismatch, IndexOutOfRange, MissingDiagonal
from .memory import MemoryArbiter, MemoryBlock, MemorySpace, get_default_arbiter
from .nvector import NodeLocalVector

logger = logging.getLogger(__name__)


def _side(space: MemorySpace) -> MemorySpace:
    return MemorySpace.DEVICE if space.is_device_side else MemorySpace.HOST


def _as_array(x, side: MemorySpace) -> np.ndarray:
    if isinstance(x, NodeLocalVector):
        return x.arbiter.view(x.block, side)
    return np.asarray(x, dtype=np.float64)


def _validate_pattern(rows: int, cols: int, row_offsets: np.ndarray, col_indices: np.ndarray) -> None:
    if row_offsets.shape != (rows + 1,):
        raise DimensionMismatch(f"row_offsets must have length {rows + 1}, got {row_offsets.shape[0]}")
    if row_offsets[0] != 0 or np.any(np.diff(row_offsets) < 0):
        raise ValueError("row_offsets must start at 0 and be non-decreasing")
    if row_offsets[-1] != col_indices.shape[0]:
        raise DimensionMismatch(f"last row offset {row_offsets[-1]} != nnz {col_indices.shape[0]}")
    if col_indices.size and (col_indices.min() < 0 or col_indices.max() >= cols):
        raise IndexOutOfRange(f"column index outside [0, {cols})")
    for r in range(rows):
        segment = col_indices[row_offsets[r]:row_offsets[r + 1]]
        if np.any(np.diff(segment) <= 0):
            raise ValueError(f"column indices of row {r} are not strictly increasing")


def _diagonal_positions(rows: int, row_offsets: np.ndarray, col_indices: np.ndarray) -> np.ndarray:
    positions = np.empty(rows, dtype=np.int64)
    for r in range(rows):
        segment = col_indices[row_offsets[r]:row_offsets[r + 1]]
        hit = np.nonzero(segment == r)[0]
        if hit.size == 0:
            raise MissingDiagonal(f"row {r} has no diagonal entry")
        positions[r] = row_offsets[r] + hit[0]
    return positions


def _row_products(row_offsets: np.ndarray, col_indices: np.ndarray, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """
    Row-by-row products over a batch.

    ``values`` has shape (batch, nnz) and ``x`` shape (batch, cols); the
    result has shape (batch, rows). Terms are added in ascending position
    within each row.
    """
    rows = row_offsets.shape[0] - 1
    lengths = np.diff(row_offsets)
    y = np.zeros((values.shape[0], rows), dtype=np.float64)
    longest = int(lengths.max()) if rows else 0
    for k in range(longest):
        active = np.nonzero(lengths > k)[0]
        positions = row_offsets[active] + k
        y[:, active] += values[:, positions] * x[:, col_indices[positions]]
    return y


def _dense_grid(dense: np.ndarray, precision: int) -> str:
    return "\n".join(" ".join(f"{value:.{precision}g}" for value in row) for row in dense)


class CsrMatrix:
    """Compressed-sparse-row matrix with arbiter-owned storage."""

    def __init__(
        self,
        rows: int,
        cols: int,
        row_offsets,
        col_indices,
        values=None,
        arbiter: Optional[MemoryArbiter] = None,
        space: MemorySpace = MemorySpace.HOST,
    ):
        """
        Initialize CsrMatrix.

        Args:
            rows: Row count
            cols: Column count
            row_offsets: Row start offsets (length rows + 1)
            col_indices: Column index per stored entry, ascending within a row
            values: Entry values (zeros if None)
            arbiter: Memory arbiter owning the storage
            space: Memory space of the value array
        """
        self.rows = rows
        self.cols = cols
        self.arbiter = arbiter or get_default_arbiter()
        self.space = MemorySpace(space)
        offsets = np.asarray(row_offsets, dtype=np.int64)
        indices = np.asarray(col_indices, dtype=np.int64)
        _validate_pattern(rows, cols, offsets, indices)
        self.nnz = indices.shape[0]

        self._offsets_block = self.arbiter.alloc(MemorySpace.HOST, rows + 1, 8, dtype=np.int64)
        self._indices_block = self.arbiter.alloc(MemorySpace.HOST, self.nnz, 8, dtype=np.int64)
        self._values_block = self.arbiter.alloc(self.space, self.nnz, 8)
        self.arbiter.view(self._offsets_block, MemorySpace.HOST, writable=True)[:] = offsets
        self.arbiter.view(self._indices_block, MemorySpace.HOST, writable=True)[:] = indices
        if values is not None:
            values = np.asarray(values, dtype=np.float64)
            if values.shape != (self.nnz,):
                raise DimensionMismatch(f"expected {self.nnz} values, got {values.shape}")
            self.values[:] = values

    @classmethod
    def from_dense(cls, dense, arbiter: Optional[MemoryArbiter] = None, keep_diagonal: bool = True) -> "CsrMatrix":
        """Build a CSR matrix from the nonzeros of a dense array (diagonal kept when square)."""
        dense = np.asarray(dense, dtype=np.float64)
        rows, cols = dense.shape
        mask = dense != 0.0
        if keep_diagonal and rows == cols:
            mask |= np.eye(rows, dtype=bool)
        row_offsets = np.concatenate([[0], np.cumsum(mask.sum(axis=1))])
        col_indices = np.nonzero(mask)[1]
        return cls(rows, cols, row_offsets, col_indices, dense[mask], arbiter=arbiter)

    @property
    def row_offsets(self) -> np.ndarray:
        return self.arbiter.view(self._offsets_block, MemorySpace.HOST)

    @property
    def col_indices(self) -> np.ndarray:
        return self.arbiter.view(self._indices_block, MemorySpace.HOST)

    @property
    def values(self) -> np.ndarray:
        """Writable value array, accessed from the side the values live on."""
        return self.arbiter.view(self._values_block, _side(self.space), writable=True)

    def matvec(self, x) -> np.ndarray:
        """
        Compute y = A x.

        Raises:
            DimensionMismatch: If x does not have ``cols`` entries
        """
        x = _as_array(x, _side(self.space))
        if x.shape != (self.cols,):
            raise DimensionMismatch(f"matrix has {self.cols} columns, vector has {x.shape[0]} entries")
        return _row_products(self.row_offsets, self.col_indices, self.values[np.newaxis, :], x[np.newaxis, :])[0]

    def scale_add_identity(self, c: float) -> None:
        """A <- c A + I."""
        if self.rows != self.cols:
            raise DimensionMismatch("scale_add_identity needs a square matrix")
        diagonal = _diagonal_positions(self.rows, self.row_offsets, self.col_indices)
        values = self.values
        values *= c
        values[diagonal] += 1.0

    def zero(self) -> None:
        self.values[:] = 0.0

    def copy(self) -> "CsrMatrix":
        """Deep copy with its own storage."""
        return CsrMatrix(
            self.rows, self.cols, self.row_offsets, self.col_indices, self.values,
            arbiter=self.arbiter, space=self.space,
        )

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.rows, self.cols))
        offsets, indices, values = self.row_offsets, self.col_indices, self.values
        for r in range(self.rows):
            lo, hi = offsets[r], offsets[r + 1]
            dense[r, indices[lo:hi]] = values[lo:hi]
        return dense

    def dump_dense(self, precision: int = 6) -> str:
        """Dense text grid, one line per row."""
        return _dense_grid(self.to_dense(), precision)

    def destroy(self) -> None:
        for block in (self._offsets_block, self._indices_block, self._values_block):
            if not block.released:
                self.arbiter.release(block)


class BlockCsrMatrix:
    """
    Block-diagonal matrix of G square m x m blocks sharing one CSR pattern.
    """

    def __init__(
        self,
        nblocks: int,
        block_dim: int,
        row_offsets,
        col_indices,
        values=None,
        arbiter: Optional[MemoryArbiter] = None,
        space: MemorySpace = MemorySpace.HOST,
    ):
        """
        Initialize BlockCsrMatrix.

        Args:
            nblocks: Number of blocks G >= 1
            block_dim: Block dimension m
            row_offsets: Pattern row offsets of the generic block (length m + 1)
            col_indices: Pattern column indices of the generic block
            values: Values, shape (G, block_nnz) or flat (zeros if None)
            arbiter: Memory arbiter owning the storage
            space: Memory space of the value array
        """
        if nblocks < 1:
            raise ValueError(f"nblocks must be >= 1, got {nblocks}")
        self.nblocks = nblocks
        self.block_dim = block_dim
        self.arbiter = arbiter or get_default_arbiter()
        self.space = MemorySpace(space)
        offsets = np.asarray(row_offsets, dtype=np.int64)
        indices = np.asarray(col_indices, dtype=np.int64)
        _validate_pattern(block_dim, block_dim, offsets, indices)
        self.block_nnz = indices.shape[0]

        self._offsets_block = self.arbiter.alloc(MemorySpace.HOST, block_dim + 1, 8, dtype=np.int64)
        self._indices_block = self.arbiter.alloc(MemorySpace.HOST, self.block_nnz, 8, dtype=np.int64)
        self._values_block = self.arbiter.alloc(self.space, nblocks * self.block_nnz, 8)
        self.arbiter.view(self._offsets_block, MemorySpace.HOST, writable=True)[:] = offsets
        self.arbiter.view(self._indices_block, MemorySpace.HOST, writable=True)[:] = indices
        self._diagonal: Optional[np.ndarray] = None
        if values is not None:
            self.values[:] = np.asarray(values, dtype=np.float64).reshape(nblocks, self.block_nnz)

    @classmethod
    def full_pattern(cls, nblocks: int, block_dim: int, arbiter: Optional[MemoryArbiter] = None,
                     space: MemorySpace = MemorySpace.HOST) -> "BlockCsrMatrix":
        """Zero matrix whose blocks store every m x m entry."""
        row_offsets = np.arange(block_dim + 1) * block_dim
        col_indices = np.tile(np.arange(block_dim), block_dim)
        return cls(nblocks, block_dim, row_offsets, col_indices, arbiter=arbiter, space=space)

    @classmethod
    def from_dense_blocks(cls, blocks, arbiter: Optional[MemoryArbiter] = None) -> "BlockCsrMatrix":
        """
        Build from dense blocks of shape (G, m, m).

        The shared pattern is the union of nonzeros over all blocks plus the diagonal.
        """
        blocks = np.asarray(blocks, dtype=np.float64)
        nblocks, m, _ = blocks.shape
        mask = np.any(blocks != 0.0, axis=0) | np.eye(m, dtype=bool)
        row_offsets = np.concatenate([[0], np.cumsum(mask.sum(axis=1))])
        col_indices = np.nonzero(mask)[1]
        return cls(nblocks, m, row_offsets, col_indices, blocks[:, mask], arbiter=arbiter)

    @property
    def shape(self):
        n = self.nblocks * self.block_dim
        return (n, n)

    @property
    def row_offsets(self) -> np.ndarray:
        return self.arbiter.view(self._offsets_block, MemorySpace.HOST)

    @property
    def col_indices(self) -> np.ndarray:
        return self.arbiter.view(self._indices_block, MemorySpace.HOST)

    @property
    def values(self) -> np.ndarray:
        """Writable values, shape (G, block_nnz)."""
        flat = self.arbiter.view(self._values_block, _side(self.space), writable=True)
        return flat.reshape(self.nblocks, self.block_nnz)

    @property
    def index_nbytes(self) -> int:
        return self._offsets_block.nbytes + self._indices_block.nbytes

    @property
    def value_nbytes(self) -> int:
        return self._values_block.nbytes

    @property
    def diagonal_positions(self) -> np.ndarray:
        """Position of each diagonal entry inside a block's values."""
        if self._diagonal is None:
            self._diagonal = _diagonal_positions(self.block_dim, self.row_offsets, self.col_indices)
        return self._diagonal

    def block_values(self, j: int) -> np.ndarray:
        """
        Writable values of block j.

        Raises:
            IndexOutOfRange: If j is outside [0, G)
        """
        if not 0 <= j < self.nblocks:
            raise IndexOutOfRange(f"block {j} outside [0, {self.nblocks})")
        return self.values[j]

    def matvec(self, x) -> np.ndarray:
        """
        Per-block products y_j = A_j x_j.

        Raises:
            DimensionMismatch: If x does not have G*m entries
        """
        x = _as_array(x, _side(self.space))
        n = self.nblocks * self.block_dim
        if x.shape != (n,):
            raise DimensionMismatch(f"matrix has {n} columns, vector has {x.shape[0]} entries")
        xb = x.reshape(self.nblocks, self.block_dim)
        return _row_products(self.row_offsets, self.col_indices, self.values, xb).reshape(n)

    def scale_add_identity(self, c: float) -> None:
        """A_j <- c A_j + I for every block."""
        diagonal = self.diagonal_positions
        values = self.values
        values *= c
        values[:, diagonal] += 1.0

    def zero(self) -> None:
        self.values[:] = 0.0

    def copy(self) -> "BlockCsrMatrix":
        """Deep copy with its own storage."""
        return BlockCsrMatrix(
            self.nblocks, self.block_dim, self.row_offsets, self.col_indices, self.values,
            arbiter=self.arbiter, space=self.space,
        )

    def dense_blocks(self) -> np.ndarray:
        """Blocks as a dense (G, m, m) array."""
        m = self.block_dim
        dense = np.zeros((self.nblocks, m, m))
        offsets, indices, values = self.row_offsets, self.col_indices, self.values
        for r in range(m):
            lo, hi = offsets[r], offsets[r + 1]
            dense[:, r, indices[lo:hi]] = values[:, lo:hi]
        return dense

    def to_dense(self) -> np.ndarray:
        n, m = self.shape[0], self.block_dim
        dense = np.zeros((n, n))
        for j, block in enumerate(self.dense_blocks()):
            dense[j * m:(j + 1) * m, j * m:(j + 1) * m] = block
        return dense

    def assemble_csr(self) -> CsrMatrix:
        """Explicit block-diagonal CSR with the same per-row entry order."""
        m, g, bnnz = self.block_dim, self.nblocks, self.block_nnz
        offsets, indices = self.row_offsets, self.col_indices
        row_offsets = (np.arange(g)[:, None] * bnnz + offsets[None, :-1]).reshape(-1)
        row_offsets = np.concatenate([row_offsets, [g * bnnz]])
        col_indices = (np.arange(g)[:, None] * m + indices[None, :]).reshape(-1)
        return CsrMatrix(g * m, g * m, row_offsets, col_indices, self.values.reshape(-1).copy(), arbiter=self.arbiter)

    def dump_dense(self, precision: int = 6) -> str:
        return _dense_grid(self.to_dense(), precision)

    def destroy(self) -> None:
        for block in (self._offsets_block, self._indices_block, self._values_block):
            if not block.released:
                self.arbiter.release(block)


Matrix = Union[CsrMatrix, BlockCsrMatrix]


def spmv_csr(matrix: CsrMatrix, x) -> np.ndarray:
    """y = A x for a CSR matrix."""
    return matrix.matvec(x)


def spmv_blockcsr(matrix: BlockCsrMatrix, x) -> np.ndarray:
    """y = A x for a shared-pattern block-diagonal matrix."""
    return matrix.matvec(x)
