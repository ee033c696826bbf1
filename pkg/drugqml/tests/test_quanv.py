import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from drugqml.datasets import gen_synthetic_voxels
from drugqml.exceptions import ContractViolation, DataError
from drugqml.quanv import (
    FeatureCache,
    PipelineSpec,
    QuanvFilter,
    VoxelGrid,
    extract_patches,
    feature_count,
    patch_matrix,
    pipeline_report,
    quanvolve,
    random_cnn_features,
    read_voxb,
    stratified_folds,
    train_pipeline,
    write_voxb,
)

RUN_SLOW = os.environ.get('DRUGQML_RUN_SLOW') == '1'


def ramp_grid(channels=4, dim=8, label=0):
    return VoxelGrid(np.arange(channels * dim ** 3, dtype=float).reshape(channels, dim, dim, dim), label)


class VoxelGridTests(SimpleTestCase):
    def test_rejects_non_cubic(self):
        with self.assertRaises(ContractViolation):
            VoxelGrid(np.zeros((2, 4, 4, 8)), 0)

    def test_rejects_bad_label(self):
        with self.assertRaises(ContractViolation):
            VoxelGrid(np.zeros((2, 4, 4, 4)), 3)

    def test_rejects_nan(self):
        data = np.zeros((2, 4, 4, 4))
        data[0, 0, 0, 0] = np.nan
        with self.assertRaises(ContractViolation):
            VoxelGrid(data, 0)


class PatchTests(SimpleTestCase):
    def test_patch_layout(self):
        grid = ramp_grid()
        patches = extract_patches(grid)
        self.assertEqual(len(patches), 2 * 2 ** 3)
        position, block = patches[0]
        self.assertEqual(position, (0, 0, 0, 0))
        np.testing.assert_array_equal(block, grid.data[0:2, 0:4, 0:4, 0:4])
        position, block = patches[-1]
        self.assertEqual(position, (1, 1, 1, 1))
        np.testing.assert_array_equal(block, grid.data[2:4, 4:8, 4:8, 4:8])

    def test_rows_follow_pair_then_xyz(self):
        grid = ramp_grid()
        rows, layout = patch_matrix(grid)
        self.assertEqual(layout, (2, 2, 2, 2))
        np.testing.assert_array_equal(rows[1], grid.data[0:2, 0:4, 0:4, 4:8].ravel())

    def test_odd_channels(self):
        with self.assertRaises(ContractViolation):
            patch_matrix(ramp_grid(channels=3))

    def test_indivisible_dim(self):
        with self.assertRaises(ContractViolation):
            patch_matrix(VoxelGrid(np.zeros((2, 6, 6, 6)), 0))


class FeatureTests(SimpleTestCase):
    def test_pocket_feature_count(self):
        self.assertEqual(feature_count(14, 32), 14336)

    def test_quanvolution_shape_and_range(self):
        features = quanvolve(ramp_grid(), QuanvFilter(seed=3))
        self.assertEqual(features.shape, (2, 2, 2, 2, 4))
        self.assertEqual(features.size, feature_count(4, 8))
        self.assertTrue(np.all(np.abs(features) <= 1.0 + 1e-12))

    def test_filter_is_seeded(self):
        grid = gen_synthetic_voxels(1, 2, 4, seed=0).samples[0]
        np.testing.assert_array_equal(quanvolve(grid, QuanvFilter(seed=5)), quanvolve(grid, QuanvFilter(seed=5)))
        self.assertFalse(np.allclose(quanvolve(grid, QuanvFilter(seed=5)), quanvolve(grid, QuanvFilter(seed=6))))

    def test_filter_workers_match(self):
        grid = gen_synthetic_voxels(1, 4, 8, seed=0).samples[0]
        np.testing.assert_allclose(
            quanvolve(grid, QuanvFilter(seed=1, workers=1)),
            quanvolve(grid, QuanvFilter(seed=1, workers=2)),
            rtol=0, atol=1e-14,
        )

    def test_random_cnn_feature_count(self):
        grid = gen_synthetic_voxels(1, 4, 8, seed=0).samples[0]
        self.assertEqual(random_cnn_features(grid, 0).size, feature_count(4, 8))

    def test_cache_hits(self):
        cache = FeatureCache()
        grid = ramp_grid()
        calls = []

        def compute(g):
            calls.append(g)
            return np.ones(3)

        cache.get('quanv_mlp', 0, grid, compute)
        cache.get('quanv_mlp', 0, ramp_grid(), compute)
        cache.get('quanv_mlp', 1, grid, compute)
        self.assertEqual(len(calls), 2)
        self.assertEqual(cache.hits, 1)
        self.assertEqual(len(cache), 2)


class FoldTests(SimpleTestCase):
    def test_round_robin_carries_over(self):
        labels = [0, 0, 0, 1, 1, 2, 2, 2]
        np.testing.assert_array_equal(stratified_folds(labels, 2), [0, 1, 0, 1, 0, 1, 0, 1])

    def test_every_class_reaches_every_fold(self):
        labels = np.repeat([0, 1, 2], 5)
        assignment = stratified_folds(labels, 3)
        for label in range(3):
            self.assertEqual(set(assignment[labels == label]), {0, 1, 2})

    def test_class_too_small(self):
        with self.assertRaises(DataError):
            stratified_folds([0, 0, 1, 2, 2], 2)


class VoxbTests(SimpleTestCase):
    def test_write_then_read(self):
        samples = gen_synthetic_voxels(1, 2, 4, seed=2).samples
        with tempfile.TemporaryDirectory() as tmp:
            path = write_voxb(Path(tmp) / 'grids.voxb', samples)
            loaded = read_voxb(path)
        self.assertEqual([s.label for s in loaded], [0, 1, 2])
        np.testing.assert_array_equal(loaded[1].data, samples[1].data)

    def test_truncated_file(self):
        samples = gen_synthetic_voxels(1, 2, 4, seed=2).samples
        with tempfile.TemporaryDirectory() as tmp:
            path = write_voxb(Path(tmp) / 'grids.voxb', samples)
            path.write_bytes(path.read_bytes()[:-4])
            with self.assertRaises(DataError):
                read_voxb(path)

    def test_bad_magic(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'grids.voxb'
            path.write_bytes(b'NOPE' + bytes(16))
            with self.assertRaises(DataError):
                read_voxb(path)


class TrainPipelineTests(SimpleTestCase):
    def setUp(self):
        self.dataset = gen_synthetic_voxels(2, 2, 4, seed=0)

    def test_records_per_fold_and_epoch(self):
        records = train_pipeline(PipelineSpec('random_cnn_mlp'), self.dataset, folds=2, epochs=2, lr=1e-3)
        self.assertEqual([(r['fold'], r['epoch']) for r in records], [(0, 1), (0, 2), (1, 1), (1, 2)])
        for record in records:
            self.assertTrue(0.0 <= record['val_acc'] <= 1.0)
            self.assertTrue(np.isfinite(record['train_loss']))

    def test_seeded_runs_are_identical(self):
        spec = PipelineSpec('quanv_mlp', extractor_seed=4)
        first = train_pipeline(spec, self.dataset, epochs=1, seed=8)
        second = train_pipeline(spec, self.dataset, epochs=1, seed=8)
        self.assertEqual(first, second)

    def test_shared_cache_reuses_features(self):
        cache = FeatureCache()
        spec = PipelineSpec('random_cnn_mlp', extractor_seed=1)
        train_pipeline(spec, self.dataset, epochs=1, cache=cache)
        train_pipeline(spec, self.dataset, epochs=1, cache=cache)
        self.assertEqual(cache.hits, len(self.dataset.samples))

    def test_trainable_extractor(self):
        records = []
        train_pipeline(PipelineSpec('trainable_cnn_mlp'), self.dataset, epochs=1, on_epoch=records.append)
        self.assertEqual(len(records), 2)

    def test_unknown_variant(self):
        with self.assertRaises(ContractViolation):
            PipelineSpec('quantum_cnn')

    def test_report_discloses_projection(self):
        report = pipeline_report(PipelineSpec('quanv_mlp'), 14, 32)
        self.assertEqual(report['feature_count'], 14336)
        self.assertIn('projection', report)
        self.assertNotIn('projection', pipeline_report(PipelineSpec('random_cnn_mlp'), 14, 32))

    @unittest.skipUnless(RUN_SLOW, 'set DRUGQML_RUN_SLOW=1 to run')
    def test_pocket_sized_grids(self):
        dataset = gen_synthetic_voxels(2, 14, 32, seed=0)
        for variant in ('quanv_mlp', 'random_cnn_mlp'):
            records = train_pipeline(PipelineSpec(variant), dataset, epochs=1, workers=4)
            self.assertEqual(len(records), 2)

    @unittest.skipUnless(RUN_SLOW, 'set DRUGQML_RUN_SLOW=1 to run')
    def test_frozen_pipelines_learn_above_chance(self):
        dataset = gen_synthetic_voxels(50, 8, 16, seed=0)
        for variant in ('quanv_mlp', 'random_cnn_mlp'):
            records = train_pipeline(PipelineSpec(variant), dataset, epochs=50, batch=32, lr=1e-5, workers=4)
            for fold in (0, 1):
                curve = [record for record in records if record['fold'] == fold]
                self.assertGreater(curve[-1]['train_acc'], 0.40, (variant, fold))
                losses = [record['train_loss'] for record in curve]
                smoothed = np.convolve(losses, np.ones(5) / 5, mode='valid')[-20:]
                self.assertTrue(np.all(np.diff(smoothed) <= 1e-9), (variant, fold))
