import itertools
import unittest

import numpy as np

from mlconv import TensorShapeError
from mlconv._tensor import KruskalFactors, khatri_rao, kruskal_reconstruct, \
    mode_product, multilinear_response, refold, tensor_element, unfold


def unfold_by_loops(x: np.ndarray, mode: int) -> np.ndarray:
    other = [a for a in range(x.ndim) if a != mode]
    columns = int(np.prod([x.shape[a] for a in other]))
    out = np.zeros((x.shape[mode], columns))
    for index in itertools.product(*(range(s) for s in x.shape)):
        column = 0
        for a in other:
            column = column * x.shape[a] + index[a]
        out[index[mode], column] = x[index]
    return out


def mode_product_by_loops(x: np.ndarray, mode: int,
                          w: np.ndarray) -> np.ndarray:
    shape = list(x.shape)
    shape[mode] = w.shape[0]
    out = np.zeros(shape)
    for index in itertools.product(*(range(s) for s in shape)):
        total = 0.0
        for i in range(x.shape[mode]):
            source = list(index)
            source[mode] = i
            total += w[index[mode], i] * x[tuple(source)]
        out[index] = total
    return out


class TestUnfold(unittest.TestCase):
    def test_matches_loops_on_small_shapes(self):
        rng = np.random.default_rng(1)
        for shape in itertools.product((1, 2, 3), repeat=3):
            x = rng.standard_normal(shape)
            for mode in range(3):
                np.testing.assert_allclose(unfold(x, mode),
                                           unfold_by_loops(x, mode),
                                           rtol=0, atol=1e-12)

    def test_four_way(self):
        x = np.arange(2 * 3 * 2 * 4, dtype=np.float64).reshape(2, 3, 2, 4)
        for mode in range(4):
            np.testing.assert_array_equal(unfold(x, mode),
                                          unfold_by_loops(x, mode))

    def test_first_column_is_a_fiber(self):
        x = np.arange(24.0).reshape(2, 3, 4)
        np.testing.assert_array_equal(unfold(x, 1)[:, 0], x[0, :, 0])

    def test_refold_inverts(self):
        x = np.random.default_rng(2).standard_normal((3, 4, 5))
        for mode in range(3):
            np.testing.assert_array_equal(refold(unfold(x, mode), mode,
                                                 x.shape), x)

    def test_bad_mode(self):
        with self.assertRaises(TensorShapeError):
            unfold(np.zeros((2, 2)), 2)
        with self.assertRaises(TensorShapeError):
            unfold(np.zeros((2, 2)), -1)


class TestModeProduct(unittest.TestCase):
    def test_matches_loops(self):
        rng = np.random.default_rng(3)
        for shape in itertools.product((1, 2, 3), repeat=3):
            x = rng.standard_normal(shape)
            for mode in range(3):
                w = rng.standard_normal((2, shape[mode]))
                np.testing.assert_allclose(
                    mode_product(x, mode, w),
                    mode_product_by_loops(x, mode, w), rtol=0, atol=1e-12)

    def test_unfolding_identity(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 4, 5))
        w = rng.standard_normal((6, 4))
        np.testing.assert_allclose(unfold(mode_product(x, 1, w), 1),
                                   w @ unfold(x, 1), atol=1e-12)

    def test_distinct_modes_commute(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            shape = tuple(rng.integers(1, 4, size=3))
            x = rng.standard_normal(shape)
            m, n = rng.choice(3, size=2, replace=False)
            a = rng.standard_normal((int(rng.integers(1, 4)), shape[m]))
            b = rng.standard_normal((int(rng.integers(1, 4)), shape[n]))
            np.testing.assert_allclose(
                mode_product(mode_product(x, m, a), n, b),
                mode_product(mode_product(x, n, b), m, a),
                rtol=1e-12, atol=1e-12)

    def test_vector_contracts_the_mode(self):
        x = np.ones((2, 3, 4))
        y = mode_product(x, 1, np.array([1.0, 2.0, 3.0]))
        self.assertEqual(y.shape, (2, 1, 4))
        np.testing.assert_array_equal(y, 6.0)
        self.assertEqual(mode_product(x, 1, np.ones(3), squeeze=True).shape,
                         (2, 4))

    def test_size_mismatch(self):
        with self.assertRaises(TensorShapeError):
            mode_product(np.zeros((2, 3)), 0, np.zeros((4, 3)))


class TestKhatriRao(unittest.TestCase):
    def test_matches_loops(self):
        rng = np.random.default_rng(6)
        for i, j, r in itertools.product((1, 2, 3), repeat=3):
            a = rng.standard_normal((i, r))
            b = rng.standard_normal((j, r))
            expected = np.zeros((i * j, r))
            for p in range(i):
                for q in range(j):
                    expected[p * j + q] = a[p] * b[q]
            np.testing.assert_allclose(khatri_rao(a, b), expected, atol=1e-12)

    def test_columns_are_kronecker_products(self):
        rng = np.random.default_rng(7)
        a, b = rng.standard_normal((3, 2)), rng.standard_normal((4, 2))
        for r in range(2):
            np.testing.assert_allclose(khatri_rao(a, b)[:, r],
                                       np.kron(a[:, r], b[:, r]))

    def test_column_mismatch(self):
        with self.assertRaises(TensorShapeError):
            khatri_rao(np.zeros((2, 2)), np.zeros((2, 3)))


class TestKruskal(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(8)
        self.factors = KruskalFactors(rng.standard_normal((3, 2)),
                                      rng.standard_normal((4, 2)),
                                      rng.standard_normal((5, 2)))

    def test_unfolding_of_reconstruction(self):
        w1, w2, w3 = self.factors.matrices()
        x = kruskal_reconstruct(self.factors)
        self.assertEqual(x.shape, (3, 4, 5))
        np.testing.assert_allclose(unfold(x, 0), w1 @ khatri_rao(w2, w3).T,
                                   atol=1e-12)
        np.testing.assert_allclose(unfold(x, 2), w3 @ khatri_rao(w1, w2).T,
                                   atol=1e-12)

    def test_multilinear_response_is_inner_product(self):
        patch = np.random.default_rng(9).standard_normal((3, 4, 5))
        expected = float((patch * kruskal_reconstruct(self.factors)).sum())
        self.assertAlmostEqual(multilinear_response(patch, self.factors),
                               expected, places=10)

    def test_rank_mismatch(self):
        with self.assertRaises(TensorShapeError):
            KruskalFactors(np.zeros((3, 2)), np.zeros((3, 1)),
                           np.zeros((3, 2)))

    def test_shape_and_rank(self):
        self.assertEqual(self.factors.shape, (3, 4, 5))
        self.assertEqual(self.factors.rank, 2)


class TestTensorElement(unittest.TestCase):
    def test_reads_c_order(self):
        x = np.arange(24.0).reshape(2, 3, 4)
        self.assertEqual(tensor_element(x, (1, 2, 3)), 23.0)
        self.assertEqual(tensor_element(x, (0, 1, 0)), 4.0)

    def test_rejects_negative_and_out_of_range(self):
        x = np.zeros((2, 2))
        with self.assertRaises(TensorShapeError):
            tensor_element(x, (-1, 0))
        with self.assertRaises(TensorShapeError):
            tensor_element(x, (0, 2))
        with self.assertRaises(TensorShapeError):
            tensor_element(x, (0,))
