#!/usr/bin/env python

import unittest
import sys
import os
import tempfile

basedir = os.path.dirname(os.path.abspath(os.path.dirname(__file__)))
sys.path[0:0] = [os.path.join(basedir, "lib")]

import numpy as np
import numpy.testing as npt
import scipy.sparse as sp

import matrixcore
from errors import DimensionError, EncodingError, ExpansionError, PartitionError

class TestMatrix(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(7)

    def assertSameMatrix(self, actual, expected):
        npt.assert_array_equal(matrixcore.as_dense(actual), matrixcore.as_dense(expected))

    def assertRelClose(self, actual, expected, tolerance):
        actual, expected = np.asarray(actual), np.asarray(expected)
        scale = max(np.linalg.norm(expected), 1e-300)
        self.assertLessEqual(np.linalg.norm(actual - expected) / scale, tolerance)

class TestPartition(TestMatrix):
    def test_two_way_split(self):
        A = self.rng.standard_normal((4, 12))
        P = matrixcore.partition(A, [6, 6])
        self.assertEqual(len(P), 2)
        self.assertEqual(P.widths, [6, 6])
        self.assertEqual(P.block_cols, 6)
        self.assertSameMatrix(P.concat(), A)

    def test_equal_widths(self):
        A = np.zeros((3, 180))
        P = matrixcore.equal_partition(A, 18)
        self.assertEqual(len(P), 18)
        self.assertEqual(set(P.widths), set([10]))
        self.assertEqual(P.offsets()[:3], [0, 10, 20])

    def test_generation_widths(self):
        alpha = 3
        A = self.rng.standard_normal((5, 7 * alpha))
        P = matrixcore.partition(A, [2 * alpha, 2 * alpha, alpha, alpha, alpha])
        self.assertEqual(P.widths, [6, 6, 3, 3, 3])
        self.assertIsNone(P.block_cols)
        self.assertSameMatrix(P.concat(), A)

    def test_width_mismatch(self):
        A = np.zeros((2, 10))
        self.assertRaises(PartitionError, matrixcore.partition, A, [5, 4])
        self.assertRaises(PartitionError, matrixcore.partition, A, [10, 0])
        self.assertRaises(PartitionError, matrixcore.equal_partition, A, 3)

    def test_sparse_round_trip(self):
        A = matrixcore.random_sparse(20, 12, 0.8, self.rng)
        P = matrixcore.partition(A, [4, 4, 4])
        self.assertTrue(P.sparse)
        self.assertTrue(all(sp.issparse(block) for block in P))
        self.assertSameMatrix(P.concat(), A)
        self.assertEqual(P.nnz(), A.nnz)

    def test_mixed_storage(self):
        blocks = [np.zeros((2, 2)), sp.csc_matrix((2, 2))]
        self.assertRaises(PartitionError, matrixcore.PartitionedMatrix, blocks)
        self.assertRaises(PartitionError, matrixcore.PartitionedMatrix,
                          [np.zeros((2, 2)), np.zeros((3, 2))])

class TestSubpartition(TestMatrix):
    def test_generation_expansion(self):
        alpha = 2
        A = self.rng.standard_normal((4, 7 * alpha))
        P = matrixcore.partition(A, [4, 4, 2, 2, 2])
        expanded = matrixcore.subpartition(P, [2, 2, 1, 1, 1])
        self.assertEqual(len(expanded), 7)
        self.assertEqual(expanded.block_cols, alpha)
        self.assertSameMatrix(expanded.concat(), A)

    def test_identity(self):
        A = self.rng.standard_normal((3, 6))
        P = matrixcore.equal_partition(A, 3)
        expanded = matrixcore.subpartition(P, [1, 1, 1])
        self.assertEqual(expanded.widths, P.widths)
        self.assertSameMatrix(expanded.concat(), A)

    def test_uneven_pair(self):
        A = self.rng.standard_normal((3, 6))
        P = matrixcore.partition(A, [4, 2])
        expanded = matrixcore.subpartition(P, [2, 1], alpha=2)
        self.assertEqual(expanded.widths, [2, 2, 2])
        self.assertSameMatrix(expanded[1], A[:, 2:4])

    def test_not_divisible(self):
        P = matrixcore.partition(np.zeros((2, 8)), [5, 3])
        self.assertRaises(ExpansionError, matrixcore.subpartition, P, [2, 1])
        self.assertRaises(ExpansionError, matrixcore.subpartition, P, [1])
        P = matrixcore.partition(np.zeros((2, 6)), [4, 2])
        self.assertRaises(ExpansionError, matrixcore.subpartition, P, [2, 2], alpha=2)

class TestProducts(TestMatrix):
    def test_identity(self):
        npt.assert_array_equal(matrixcore.matvec_T(np.eye(3), [1, 2, 3]), [1, 2, 3])

    def test_single_entry(self):
        M = np.zeros((4, 3))
        M[0, 2] = 5.0
        npt.assert_array_equal(matrixcore.matvec_T(M, [2, 0, 0, 0]), [0, 0, 10])

    def test_sparse_matches_dense(self):
        M = matrixcore.random_sparse(50, 20, 0.9, self.rng)
        x = self.rng.standard_normal(50)
        self.assertRelClose(matrixcore.matvec_T(M, x), M.toarray().T @ x, 1e-12)

    def test_dimension_mismatch(self):
        self.assertRaises(DimensionError, matrixcore.matvec_T, np.eye(3), [1, 2])

    def test_sum_of_two(self):
        A0, A1 = self.rng.standard_normal((2, 5, 3))
        self.assertSameMatrix(matrixcore.linear_combination([A0, A1], [1, 1]), A0 + A1)

    def test_single_block(self):
        A0 = self.rng.standard_normal((5, 3))
        self.assertSameMatrix(matrixcore.linear_combination([A0], [1]), A0)

    def test_sparse_pattern_union(self):
        blocks = [matrixcore.random_sparse(30, 10, 0.85, self.rng) for _ in range(3)]
        coeffs = self.rng.uniform(-1, 1, 3)
        combined = matrixcore.linear_combination(blocks, coeffs)
        self.assertTrue(sp.issparse(combined))
        self.assertLessEqual(combined.nnz, sum(b.nnz for b in blocks))
        expected = sum(c * b.toarray() for c, b in zip(coeffs, blocks))
        npt.assert_allclose(combined.toarray(), expected, rtol=1e-12, atol=1e-14)

    def test_cancellation_kept(self):
        block = sp.csc_matrix(np.array([[1.0, 0.0], [0.0, 2.0]]))
        combined = matrixcore.linear_combination([block, block], [1.0, -1.0])
        self.assertEqual(combined.nnz, 2)
        self.assertEqual(matrixcore.nnz(combined.toarray()), 0)

    def test_linearity(self):
        blocks = list(self.rng.standard_normal((4, 12, 5)))
        coeffs = self.rng.uniform(-1, 1, 4)
        x = self.rng.standard_normal(12)
        combined = matrixcore.matvec_T(matrixcore.linear_combination(blocks, coeffs), x)
        separate = sum(c * matrixcore.matvec_T(b, x) for c, b in zip(coeffs, blocks))
        self.assertRelClose(combined, separate, 1e-10)

    def test_combination_errors(self):
        A = np.zeros((2, 2))
        self.assertRaises(EncodingError, matrixcore.linear_combination, [], [])
        self.assertRaises(EncodingError, matrixcore.linear_combination, [A, A], [1])
        self.assertRaises(DimensionError, matrixcore.linear_combination,
                          [A, np.zeros((2, 3))], [1, 1])

class TestNnz(TestMatrix):
    def test_counts(self):
        self.assertEqual(matrixcore.nnz(np.zeros((4, 4))), 0)
        self.assertEqual(matrixcore.nnz(np.eye(6)), 6)
        self.assertEqual(matrixcore.nnz(sp.identity(6, format="csc")), 6)

    def test_planted(self):
        M = np.zeros((20, 20))
        cells = self.rng.choice(400, 37, replace=False)
        M.flat[cells] = self.rng.uniform(1, 2, 37)
        self.assertEqual(matrixcore.nnz(M), 37)
        self.assertEqual(matrixcore.nnz(matrixcore.as_sparse(M)), 37)

    def test_random_sparse_density(self):
        M = matrixcore.random_sparse(100, 100, 0.95, self.rng)
        self.assertEqual(M.nnz, 500)
        self.assertRaises(DimensionError, matrixcore.random_sparse, 2, 2, 1.5, self.rng)

    def test_dense_entries(self):
        M = matrixcore.dense(2, 3, range(6))
        self.assertEqual(M[1, 0], 3.0)
        self.assertRaises(DimensionError, matrixcore.dense, 2, 3, range(5))

class TestIngestion(TestMatrix):
    def test_csv(self):
        A = self.rng.standard_normal((4, 3))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "a.csv")
            matrixcore.save_matrix(path, A)
            with open(path) as f:
                self.assertEqual(f.readline().strip(), "c0,c1,c2")
            npt.assert_allclose(matrixcore.load_matrix(path), A, rtol=1e-15)

    def test_matrix_market(self):
        A = matrixcore.random_sparse(10, 8, 0.7, self.rng)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "a.mtx")
            matrixcore.save_matrix(path, A)
            loaded = matrixcore.load_matrix(path)
        self.assertTrue(sp.isspmatrix_csc(loaded))
        npt.assert_allclose(loaded.toarray(), A.toarray(), rtol=1e-12)

if __name__ == "__main__":
    unittest.main()
