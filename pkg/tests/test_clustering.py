import itertools
import unittest

import numpy as np

from clustering import build_tree, kmeans
from validators import ValidationError

FIG_TREE_SAMPLES = [-2.6, -2.1, -1.6, 0.8, 1.0, 2.1, 2.2, 2.3, 2.4, 2.5]


def brute_force_wcss(values, k):
    """Best WCSS over all contiguous k-partitions of sorted 1-D values"""
    values = np.sort(np.asarray(values, dtype=float))
    best = np.inf
    for cuts in itertools.combinations(range(1, len(values)), k - 1):
        groups = np.split(values, cuts)
        best = min(best, sum(float(np.sum((g - g.mean()) ** 2)) for g in groups))
    return best


class KMeansTestCase(unittest.TestCase):
    def test_two_pairs(self):
        result = kmeans([0.0, 1.0, 10.0, 11.0], 2, seed=0)
        np.testing.assert_allclose(result.codebook.centroids, [0.5, 10.5])
        self.assertAlmostEqual(result.wcss, 1.0)

    def test_constant_samples(self):
        result = kmeans([1.0, 1.0, 1.0], 1)
        self.assertEqual(list(result.codebook.centroids), [1.0])
        self.assertEqual(result.wcss, 0.0)

    def test_k_equals_distinct_values(self):
        result = kmeans([3.0, -1.0, 3.0, 7.0], 3)
        self.assertEqual(list(result.codebook.centroids), [-1.0, 3.0, 7.0])
        self.assertEqual(result.wcss, 0.0)

    def test_wcss_never_increases(self):
        samples = np.random.default_rng(3).normal(size=500)
        result = kmeans(samples, 8, seed=1)
        history = np.array(result.history)
        self.assertTrue(np.all(np.diff(history) <= 1e-9))
        self.assertTrue(result.codebook.is_strict)

    def test_matches_brute_force_on_sixteen_points(self):
        rng = np.random.default_rng(7)
        samples = np.concatenate([center + rng.uniform(-1.0, 1.0, 4) for center in (-30, -10, 10, 30)])
        result = kmeans(samples, 4, seed=0, n_init=5)
        self.assertAlmostEqual(result.wcss, brute_force_wcss(samples, 4), places=9)

    def test_same_seed_same_codebook(self):
        samples = np.random.default_rng(0).normal(size=200)
        self.assertEqual(kmeans(samples, 4, seed=9).codebook, kmeans(samples, 4, seed=9).codebook)

    def test_rejects_bad_input(self):
        with self.assertRaises(ValidationError):
            kmeans([], 2)
        with self.assertRaises(ValidationError):
            kmeans([1.0, np.nan], 2)


class BuildTreeTestCase(unittest.TestCase):
    def test_recursive_split(self):
        tree = build_tree(FIG_TREE_SAMPLES, 2, seed=0)
        self.assertEqual(tree.depth, 2)
        self.assertAlmostEqual(tree.level(0).centroids[0], np.mean(FIG_TREE_SAMPLES))
        np.testing.assert_allclose(tree.level(1).centroids, [-2.1, 1.9])
        np.testing.assert_allclose(tree.level(2).centroids[2:], [0.9, 2.3])
        self.assertEqual(list(tree.parents[2]), [0, 0, 1, 1])

    def test_symmetric_pair(self):
        tree = build_tree([-3.0, 3.0, -3.0, 3.0], 1)
        self.assertEqual(list(tree.codebook(2).centroids), [-3.0, 3.0])

    def test_levels_sorted_and_prefix_coded(self):
        samples = np.random.default_rng(1).normal(size=300)
        tree = build_tree(samples, 4, seed=2)
        for level in range(1, 5):
            codebook = tree.level(level)
            self.assertEqual(len(codebook), 2 ** level)
            self.assertTrue(np.all(np.diff(codebook.centroids) >= 0))
            for index, parent in enumerate(tree.parents[level]):
                self.assertTrue(tree.code(level, index).startswith(tree.code(level - 1, parent)))

    def test_degenerate_nodes_duplicate_centroids(self):
        tree = build_tree([-5.0, -4.0, 4.0, 5.0], 3, seed=0)
        self.assertEqual(list(tree.level(2).centroids), [-5.0, -4.0, 4.0, 5.0])
        self.assertEqual(list(tree.level(3).centroids), [-5.0, -5.0, -4.0, -4.0, 4.0, 4.0, 5.0, 5.0])
        codebook = tree.codebook(8)
        self.assertEqual(list(codebook.encode([4.0])), [4])

    def test_rejects_zero_depth(self):
        with self.assertRaises(ValidationError):
            build_tree([1.0, 2.0], 0)


if __name__ == '__main__':
    unittest.main()
