"""Matrix storage, block-column partitioning and the products every other
   module is built on.

   Dense matrices are two dimensional float64 numpy arrays.  Sparse matrices
   are scipy compressed sparse column matrices, since coded blocks are
   combinations of block-columns and the job is always A^T x, a dot product
   per column."""

import logging
import numpy as np
import scipy.io
import scipy.sparse as sp

from errors import DimensionError, EncodingError, ExpansionError, PartitionError

logger = logging.getLogger(__name__)

def is_sparse(matrix):
    return sp.issparse(matrix)

def as_dense(matrix):
    if is_sparse(matrix):
        return matrix.toarray()
    return np.asarray(matrix, dtype=np.float64)

def as_sparse(matrix):
    """Return a canonical CSC copy of matrix with explicit zeros removed."""

    result = sp.csc_matrix(matrix, dtype=np.float64)
    result.eliminate_zeros()
    result.sort_indices()
    return result

def dense(rows, cols, entries):
    """Build a dense matrix from row-major entries."""

    if rows < 1 or cols < 1:
        raise DimensionError("a matrix needs at least one row and one column")
    entries = np.asarray(entries, dtype=np.float64)
    if entries.size != rows * cols:
        raise DimensionError("%d entries cannot fill a %dx%d matrix" %
                             (entries.size, rows, cols))
    return entries.reshape(rows, cols)

def nnz(matrix):
    """Number of stored nonzeros.  For dense input, entries that are not 0."""

    if is_sparse(matrix):
        return int(matrix.nnz)
    return int(np.count_nonzero(matrix))

def shape(matrix):
    return tuple(int(n) for n in matrix.shape)

class PartitionedMatrix(object):
    """A matrix held as an ordered list of disjoint block-columns.

    All blocks share the same row count and the same representation (dense
    or sparse).  block_cols is the common width when every block has the
    same width, and None otherwise.
    """

    def __init__(self, blocks):
        if not blocks:
            raise PartitionError("a partitioned matrix needs at least one block")
        blocks = list(blocks)
        sparse = is_sparse(blocks[0])
        rows = blocks[0].shape[0]
        for index, block in enumerate(blocks):
            if is_sparse(block) != sparse:
                raise PartitionError("block %d mixes dense and sparse storage" % index)
            if block.shape[0] != rows:
                raise PartitionError("block %d has %d rows, expected %d" %
                                     (index, block.shape[0], rows))
        self.blocks = blocks
        self.rows = int(rows)
        self.sparse = sparse
        self.widths = [int(block.shape[1]) for block in blocks]
        self.total_cols = sum(self.widths)
        if len(set(self.widths)) == 1:
            self.block_cols = self.widths[0]
        else:
            self.block_cols = None

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, index):
        return self.blocks[index]

    def __iter__(self):
        return iter(self.blocks)

    def __repr__(self):
        return "PartitionedMatrix(%d x %s, %s)" % \
               (self.rows, self.widths, "sparse" if self.sparse else "dense")

    def offsets(self):
        """First column index of every block within the full matrix."""

        return [int(n) for n in np.cumsum([0] + self.widths[:-1])]

    def concat(self):
        if self.sparse:
            return sp.hstack(self.blocks, format="csc")
        return np.hstack(self.blocks)

    def nnz(self):
        return sum(nnz(block) for block in self.blocks)

def partition(matrix, widths):
    """Split matrix into consecutive block-columns of the given widths."""

    widths = [int(w) for w in widths]
    if not widths or any(w < 1 for w in widths):
        raise PartitionError("every block width must be at least 1: %s" % widths)
    cols = matrix.shape[1]
    if sum(widths) != cols:
        raise PartitionError("widths %s add up to %d, the matrix has %d columns" %
                             (widths, sum(widths), cols))

    if is_sparse(matrix):
        matrix = as_sparse(matrix)
    else:
        matrix = as_dense(matrix)

    blocks = []
    start = 0
    for width in widths:
        blocks.append(matrix[:, start:start + width])
        start += width
    return PartitionedMatrix(blocks)

def equal_partition(matrix, count):
    """Split matrix into count blocks of equal width."""

    cols = matrix.shape[1]
    if count < 1 or cols % count:
        raise PartitionError("%d columns do not split into %d equal blocks" %
                             (cols, count))
    return partition(matrix, [cols // count] * count)

def subpartition(partitioned, multipliers, alpha=None):
    """Split block k into multipliers[k] blocks of width alpha each.

    alpha defaults to the width implied by the first block.  Column order is
    preserved, so the result concatenates to the same matrix.
    """

    multipliers = [int(c) for c in multipliers]
    if len(multipliers) != len(partitioned):
        raise ExpansionError("%d multipliers for %d blocks" %
                             (len(multipliers), len(partitioned)))
    if any(c < 1 for c in multipliers):
        raise ExpansionError("multipliers must be positive: %s" % multipliers)
    if alpha is None:
        alpha, rest = divmod(partitioned.widths[0], multipliers[0])
        if rest:
            raise ExpansionError("block 0 of width %d does not split into %d pieces" %
                                 (partitioned.widths[0], multipliers[0]))

    blocks = []
    for index, (block, multiplier) in enumerate(zip(partitioned, multipliers)):
        width = block.shape[1]
        if width != multiplier * alpha:
            raise ExpansionError("block %d has width %d, expected %d x %d" %
                                 (index, width, multiplier, alpha))
        for piece in range(multiplier):
            blocks.append(block[:, piece * alpha:(piece + 1) * alpha])
    return PartitionedMatrix(blocks)

def matvec_T(matrix, x):
    """Return matrix^T x as a flat vector."""

    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != matrix.shape[0]:
        raise DimensionError("vector of length %d against a matrix with %d rows" %
                             (x.shape[0], matrix.shape[0]))
    return np.asarray(matrix.T @ x, dtype=np.float64).ravel()

def linear_combination(blocks, coeffs):
    """Entrywise sum of coeffs[q] * blocks[q].

    Sparse results keep the union of the input patterns, an exact zero
    produced by cancellation stays stored.
    """

    blocks = list(blocks)
    coeffs = [float(c) for c in coeffs]
    if not blocks:
        raise EncodingError("cannot combine an empty list of blocks")
    if len(blocks) != len(coeffs):
        raise EncodingError("%d coefficients for %d blocks" % (len(coeffs), len(blocks)))
    first = shape(blocks[0])
    for index, block in enumerate(blocks):
        if shape(block) != first:
            raise DimensionError("block %d is %s, expected %s" %
                                 (index, shape(block), first))

    if is_sparse(blocks[0]):
        parts = [sp.coo_matrix(block) for block in blocks]
        rows = np.concatenate([part.row for part in parts])
        cols = np.concatenate([part.col for part in parts])
        data = np.concatenate([coeff * part.data for part, coeff in zip(parts, coeffs)])
        # coo -> csc sums the duplicates without pruning zeros
        result = sp.coo_matrix((data, (rows, cols)), shape=first).tocsc()
        result.sort_indices()
        return result

    result = np.zeros(first, dtype=np.float64)
    for block, coeff in zip(blocks, coeffs):
        result += coeff * as_dense(block)
    return result

def random_dense(rows, cols, rng):
    return rng.standard_normal((rows, cols))

def random_sparse(rows, cols, density_zeros, rng):
    """A random CSC matrix in which a fraction density_zeros of the entries
    is zero.  Nonzero values are standard normal."""

    if not 0.0 <= density_zeros <= 1.0:
        raise DimensionError("fraction of zeros must lie in [0, 1], got %r" % density_zeros)
    matrix = sp.random(rows, cols, density=1.0 - density_zeros, format="csc",
                       dtype=np.float64, random_state=rng,
                       data_rvs=rng.standard_normal)
    return as_sparse(matrix)

def load_matrix(path):
    """Read a Matrix Market file (sparse) or a headered CSV file (dense).

    The CSV header is one line naming the columns; it is skipped.
    """

    lower = path.lower()
    if lower.endswith((".mtx", ".mm", ".mtx.gz")):
        logger.debug("reading Matrix Market file %s", path)
        return as_sparse(scipy.io.mmread(path))
    logger.debug("reading CSV file %s", path)
    entries = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    return entries

def save_matrix(path, matrix):
    if is_sparse(matrix):
        scipy.io.mmwrite(path, matrix)
    else:
        header = ",".join("c%d" % i for i in range(matrix.shape[1]))
        np.savetxt(path, matrix, delimiter=",", header=header, comments="")
