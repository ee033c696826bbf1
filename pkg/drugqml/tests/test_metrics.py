import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from scipy import linalg

from drugqml.datasets import enumerate_small_molecules
from drugqml.exceptions import ContractViolation, NumericalError
from drugqml.metrics import (
    DESCRIPTOR_SIZE,
    GaussianStats,
    classification_metrics,
    descriptor_fd,
    fit_gaussian,
    frechet_distance,
    molecule_descriptor,
)
from drugqml.molgraph import BondKind, MoleculeGraph, SMALL_ALPHABET


def random_spd(rng, dim):
    root = rng.normal(size=(dim, dim))
    return root @ root.T + 0.1 * np.eye(dim)


def oracle_fd(a, b):
    values, vectors = np.linalg.eigh(a.cov)
    root = vectors @ np.diag(np.sqrt(values)) @ vectors.T
    cross = np.linalg.eigvalsh(root @ b.cov @ root)
    diff = a.mean - b.mean
    return diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2 * np.sum(np.sqrt(cross))


class FitGaussianTests(SimpleTestCase):
    def test_unbiased_covariance(self):
        stats = fit_gaussian([[0.0, 1.0], [2.0, 3.0], [4.0, 8.0]])
        np.testing.assert_allclose(stats.mean, [2.0, 4.0])
        np.testing.assert_allclose(stats.cov, np.cov(np.array([[0, 1], [2, 3], [4, 8]]).T, ddof=1))

    def test_needs_two_vectors(self):
        with self.assertRaises(ContractViolation):
            fit_gaussian([[1.0, 2.0]])

    def test_mixed_dimensions(self):
        with self.assertRaises(ContractViolation):
            fit_gaussian([[1.0, 2.0], [1.0]])


class FrechetDistanceTests(SimpleTestCase):
    @given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=1, max_value=6))
    @settings(max_examples=25, deadline=None)
    def test_self_distance_is_zero(self, seed, dim):
        rng = np.random.default_rng(seed)
        stats = GaussianStats(rng.normal(size=dim), random_spd(rng, dim))
        self.assertLess(frechet_distance(stats, stats), 1e-8)

    def test_univariate_closed_form(self):
        a = GaussianStats(np.array([1.0]), np.array([[4.0]]))
        b = GaussianStats(np.array([-2.0]), np.array([[9.0]]))
        # (1 + 2)^2 + (2 - 3)^2
        self.assertAlmostEqual(frechet_distance(a, b), 10.0, places=10)

    def test_commuting_covariances(self):
        a = GaussianStats(np.zeros(3), np.diag([1.0, 4.0, 9.0]))
        b = GaussianStats(np.ones(3), np.diag([4.0, 1.0, 16.0]))
        expected = 3.0 + (1 - 2) ** 2 + (2 - 1) ** 2 + (3 - 4) ** 2
        self.assertAlmostEqual(frechet_distance(a, b), expected, places=10)

    def test_matches_eigendecomposition_oracle(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            dim = 2 + seed % 5
            a = GaussianStats(rng.normal(size=dim), random_spd(rng, dim))
            b = GaussianStats(rng.normal(size=dim), random_spd(rng, dim))
            self.assertAlmostEqual(frechet_distance(a, b), oracle_fd(a, b), places=8)

    def test_matches_scipy_sqrtm(self):
        rng = np.random.default_rng(42)
        a = GaussianStats(rng.normal(size=4), random_spd(rng, 4))
        b = GaussianStats(rng.normal(size=4), random_spd(rng, 4))
        diff = a.mean - b.mean
        expected = diff @ diff + np.trace(a.cov + b.cov - 2 * np.real(linalg.sqrtm(a.cov @ b.cov)))
        self.assertAlmostEqual(frechet_distance(a, b), expected, places=6)

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a = GaussianStats(rng.normal(size=3), random_spd(rng, 3))
        b = GaussianStats(rng.normal(size=3), random_spd(rng, 3))
        self.assertAlmostEqual(frechet_distance(a, b), frechet_distance(b, a), places=8)

    def test_dimension_mismatch(self):
        with self.assertRaises(ContractViolation):
            frechet_distance(GaussianStats(np.zeros(2), np.eye(2)), GaussianStats(np.zeros(3), np.eye(3)))

    def test_non_finite_statistics(self):
        bad = GaussianStats(np.array([np.nan, 0.0]), np.eye(2))
        with self.assertRaises(NumericalError):
            frechet_distance(bad, GaussianStats(np.zeros(2), np.eye(2)))


class DescriptorTests(SimpleTestCase):
    def test_ethanol_descriptor(self):
        mol = MoleculeGraph.from_edges(
            ['C', 'C', 'O'], [(0, 1, BondKind.SINGLE), (1, 2, BondKind.SINGLE)], SMALL_ALPHABET.max_atoms,
        )
        descriptor = molecule_descriptor(mol)
        self.assertEqual(descriptor.shape, (DESCRIPTOR_SIZE,))
        np.testing.assert_array_equal(descriptor, [2, 0, 1, 0, 2, 0, 0, 0, 0, 1])

    def test_empty_molecule(self):
        np.testing.assert_array_equal(molecule_descriptor(MoleculeGraph.empty(SMALL_ALPHABET.max_atoms)), 0.0)

    def test_same_batch_has_zero_fd(self):
        mols = enumerate_small_molecules(3)
        self.assertLess(descriptor_fd(mols, mols), 1e-6)


class ClassificationMetricsTests(SimpleTestCase):
    def test_accuracy_and_loss(self):
        logits = np.array([[2.0, 0.0], [0.0, 2.0], [2.0, 0.0]])
        result = classification_metrics(logits, [0, 1, 1])
        self.assertAlmostEqual(result['accuracy'], 2 / 3)
        expected = (2 * np.log1p(np.exp(-2.0)) + np.log1p(np.exp(2.0))) / 3
        self.assertAlmostEqual(result['cross_entropy'], expected, places=12)

    def test_label_out_of_range(self):
        with self.assertRaises(ContractViolation):
            classification_metrics(np.zeros((2, 2)), [0, 2])

    def test_label_count_mismatch(self):
        with self.assertRaises(ContractViolation):
            classification_metrics(np.zeros((2, 2)), [0])
