import json
import os
import unittest

import numpy as np
from django.test import SimpleTestCase

from drugqml.datasets import enumerate_small_molecules
from drugqml.exceptions import ConfigError, ContractViolation, DataError
from drugqml.qgan import (
    GanTrainConfig,
    GeneratorSpec,
    HybridGenerator,
    count_generator_params,
    generator_from_checkpoint,
    lr_schedule,
    sample_molecules,
    train_qgan,
    wgan_losses,
)
from drugqml.qgan import build_critic, graph_vectors

DATASET = enumerate_small_molecules(3)
RUN_SLOW = os.environ.get('DRUGQML_RUN_SLOW') == '1'


def tiny_spec(kind='quantum', **overrides):
    values = {'kind': kind, 'n_qubits': 4, 'n_layers': 1, 'n_patches': 2, 'z_dim': 4, 'hidden': (8,)}
    values.update(overrides)
    return GeneratorSpec(**values)


def tiny_config(**overrides):
    values = {'max_epochs': 2, 'batch_size': 4, 'n_critic': 1, 'fd_patience': 50, 'seed': 3}
    values.update(overrides)
    return GanTrainConfig(**values)


class ScheduleTests(SimpleTestCase):
    def test_constant_then_linear_decay(self):
        cfg = GanTrainConfig()
        self.assertEqual(lr_schedule(cfg, 1), 1e-4)
        self.assertEqual(lr_schedule(cfg, 2999), 1e-4)
        self.assertEqual(lr_schedule(cfg, 3000), 1e-4)
        self.assertAlmostEqual(lr_schedule(cfg, 4000), 5e-5)
        self.assertEqual(lr_schedule(cfg, 5000), 0.0)
        self.assertEqual(lr_schedule(cfg, 6000), 0.0)

    def test_rejects_non_positive_values(self):
        with self.assertRaises(ContractViolation):
            GanTrainConfig(batch_size=0)


class GeneratorTests(SimpleTestCase):
    def test_parameter_counts(self):
        quantum = count_generator_params(HybridGenerator(GeneratorSpec('quantum', n_qubits=8)))
        self.assertEqual(quantum['quantum'], 15)
        self.assertGreater(quantum['reduction'], 0.0)
        patched = HybridGenerator(GeneratorSpec('patched', n_qubits=8, n_patches=4))
        self.assertEqual(count_generator_params(patched)['quantum'], 12)
        classical = HybridGenerator(GeneratorSpec('classical'))
        self.assertEqual(count_generator_params(classical)['quantum'], 0)

    def test_unknown_kind(self):
        with self.assertRaises(ContractViolation):
            GeneratorSpec('annealed')

    def test_bond_logits_are_symmetric(self):
        gen = HybridGenerator(tiny_spec())
        atoms, bonds = gen.logits(gen.sample_noise(3, np.random.default_rng(0)))
        self.assertEqual(atoms.shape, (3, 9, 5))
        np.testing.assert_array_equal(bonds, bonds.transpose(0, 2, 1, 3))

    def test_relaxed_rows_are_distributions(self):
        gen = HybridGenerator(tiny_spec('patched'))
        relaxed = gen.relaxed(gen.sample_noise(2, np.random.default_rng(1)))
        atoms = relaxed[:, :45].reshape(2, 9, 5)
        np.testing.assert_allclose(atoms.sum(axis=2), 1.0, atol=1e-12)

    def test_generator_gradient_matches_finite_differences(self):
        gen = HybridGenerator(tiny_spec(), np.random.default_rng(2))
        noise = gen.sample_noise(2, np.random.default_rng(3))
        cotangent = np.random.default_rng(4).normal(size=(2, gen.n_outputs))

        def loss():
            return float(np.sum(cotangent * gen.relaxed(noise)))

        loss()
        grads = gen.backward(cotangent)
        step = 1e-6
        for slot in range(gen.theta.size):
            saved = gen.theta[slot]
            gen.theta[slot] = saved + step
            up = loss()
            gen.theta[slot] = saved - step
            down = loss()
            gen.theta[slot] = saved
            self.assertAlmostEqual(grads['theta'][slot], (up - down) / (2 * step), places=5)

    def test_wgan_losses(self):
        rng = np.random.default_rng(5)
        real = graph_vectors(DATASET.molecules[:4], DATASET.alphabet)
        critic = build_critic(real.shape[1], rng)
        losses = wgan_losses(critic, real, np.zeros_like(real), 10.0, 0)
        self.assertEqual(sorted(losses), ['d_loss', 'g_loss', 'gp'])
        self.assertGreaterEqual(losses['gp'], 0.0)


class TrainTests(SimpleTestCase):
    def test_records_and_checkpoint(self):
        run = train_qgan(tiny_config(), DATASET, tiny_spec())
        self.assertEqual([r['epoch'] for r in run.records], [1, 2])
        for record in run.records:
            self.assertTrue(0.0 <= record['validity_fraction'] <= 1.0)
            self.assertGreaterEqual(record['fd'], 0.0)
        self.assertEqual(run.stop_reason, 'max_epochs')
        self.assertEqual(run.checkpoint['epoch'], 2)
        self.assertIsNotNone(run.checkpoint['best']['generator'])
        json.dumps(run.checkpoint, allow_nan=False)

    def test_seeded_runs_are_identical(self):
        first = train_qgan(tiny_config(), DATASET, tiny_spec('patched'))
        second = train_qgan(tiny_config(), DATASET, tiny_spec('patched'))
        self.assertEqual(first.records, second.records)

    def test_resume_matches_uninterrupted_run(self):
        spec = tiny_spec()
        full = train_qgan(tiny_config(max_epochs=4), DATASET, spec)
        head = train_qgan(tiny_config(max_epochs=2), DATASET, spec)
        checkpoint = json.loads(json.dumps(head.checkpoint))
        tail = train_qgan(tiny_config(max_epochs=4), DATASET, spec, resume=checkpoint)
        self.assertEqual([r['epoch'] for r in tail.records], [3, 4])
        self.assertEqual(full.records[2:], tail.records)
        self.assertEqual(tail.initial_fd, full.initial_fd)

    def test_classical_baseline_trains(self):
        seen = []
        train_qgan(tiny_config(max_epochs=1), DATASET, tiny_spec('classical'), on_epoch=seen.append)
        self.assertEqual(len(seen), 1)

    def test_fd_plateau_stops_early_and_keeps_the_best(self):
        # a vanishing learning rate leaves FD fluctuating around a plateau
        run = train_qgan(tiny_config(max_epochs=30, fd_patience=2, lr0=1e-12), DATASET, tiny_spec())
        fds = [record['fd'] for record in run.records]
        best = run.checkpoint['best']
        self.assertEqual(run.stop_reason, 'early_stop_fd')
        self.assertEqual(run.checkpoint['stop_reason'], 'early_stop_fd')
        self.assertEqual(best['fd'], min(fds))
        self.assertEqual(best['epoch'], fds.index(min(fds)) + 1)
        self.assertEqual(len(run.records), best['epoch'] + 2)

    def test_dataset_smaller_than_batch(self):
        with self.assertRaises(DataError):
            train_qgan(tiny_config(batch_size=len(DATASET) + 1), DATASET, tiny_spec())

    def test_mode_mismatch(self):
        with self.assertRaises(ConfigError):
            train_qgan(tiny_config(), DATASET, tiny_spec(mode='large'))


class SampleTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.checkpoint = train_qgan(tiny_config(max_epochs=1), DATASET, tiny_spec()).checkpoint

    def test_rows_carry_validity_and_proxies(self):
        rows = sample_molecules(self.checkpoint, 5, seed=1)
        self.assertEqual(len(rows), 5)
        for row in rows:
            self.assertIn('atoms', row)
            self.assertIn('druglike_proxy', row)
            self.assertEqual(row['smiles'] is not None, row['valid'])

    def test_sampling_is_seeded(self):
        self.assertEqual(sample_molecules(self.checkpoint, 3, seed=2), sample_molecules(self.checkpoint, 3, seed=2))

    def test_rejects_foreign_checkpoint(self):
        with self.assertRaises(DataError):
            generator_from_checkpoint({**self.checkpoint, 'command': 'qvae train'})


class DeskScaleTests(SimpleTestCase):
    @unittest.skipUnless(RUN_SLOW, 'set DRUGQML_RUN_SLOW=1 to run')
    def test_fd_halves_within_500_epochs(self):
        dataset = enumerate_small_molecules(4)
        cfg = GanTrainConfig(max_epochs=500, batch_size=32, seed=0)
        run = train_qgan(cfg, dataset, GeneratorSpec('quantum', n_qubits=8, n_layers=1))
        best = min(run.records, key=lambda record: record['fd'])
        self.assertEqual(run.checkpoint['best']['epoch'], best['epoch'])
        self.assertLessEqual(best['fd'], 0.5 * run.initial_fd)
        self.assertGreaterEqual(best['validity_fraction'], 0.3)
