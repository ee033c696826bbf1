import json
import tempfile
from io import StringIO
from pathlib import Path

from django.test import SimpleTestCase, override_settings

from drugqml.artifacts import emit_metrics_csv, read_arrays, read_checkpoint
from drugqml.cli import run
from drugqml.datasets import enumerate_small_molecules
from drugqml.exceptions import ConfigError
from drugqml.molgraph import MoleculeGraph, write_jsonl
from drugqml.qvae import vae_from_checkpoint
from drugqml.serializers import load_run_config, resolve_globals, validate_run_config

TINY_QGAN = {
    'seed': 5,
    'qgan': {
        'n_qubits': 4,
        'hidden': [8],
        'max_epochs': 1,
        'batch_size': 4,
        'n_critic': 1,
        'enumerate_max_atoms': 3,
        'n_samples': 4,
    },
}


class CliTestCase(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def invoke(self, *argv):
        stdout, stderr = StringIO(), StringIO()
        code = run(list(argv), stdout=stdout, stderr=stderr)
        return code, stdout.getvalue(), stderr.getvalue()

    def config(self, document, name='config.json'):
        path = self.tmp / name
        path.write_text(json.dumps(document))
        return str(path)

    def payload(self, text):
        return json.loads(text.strip().splitlines()[-1])


class DispatchTests(CliTestCase):
    def test_unknown_command(self):
        code, _, stderr = self.invoke('train-everything')
        self.assertEqual(code, 2)
        self.assertIn('usage: drugqml', stderr)

    def test_no_command(self):
        self.assertEqual(self.invoke()[0], 2)

    def test_unknown_flag(self):
        code, _, stderr = self.invoke('gradcheck', '--bogus')
        self.assertEqual(code, 2)
        self.assertIn('usage: drugqml', stderr)

    def test_unknown_config_key_is_named(self):
        path = self.config({'qgan': {'learningrate': 0.1}})
        code, _, stderr = self.invoke('qgan', 'train', '--config', path, '--out', str(self.tmp / 'run'))
        self.assertEqual(code, 2)
        payload = self.payload(stderr)
        self.assertFalse(payload['status'])
        self.assertIn('learningrate', payload['message'])
        self.assertEqual(payload['details']['unknown_keys'], ['learningrate'])

    def test_out_of_range_value(self):
        path = self.config({'check': {'qubits': 40}})
        code, _, stderr = self.invoke('gradcheck', '--config', path)
        self.assertEqual(code, 2)
        self.assertIn('check.qubits', self.payload(stderr)['message'])

    def test_missing_config_file(self):
        code, _, _ = self.invoke('gradcheck', '--config', str(self.tmp / 'absent.json'))
        self.assertEqual(code, 3)


class GradcheckTests(CliTestCase):
    def test_seeded_check_passes(self):
        code, stdout, _ = self.invoke('gradcheck', '--seed', '7', '--qubits', '4', '--circuits', '5')
        self.assertEqual(code, 0)
        data = self.payload(stdout)['data']
        self.assertEqual(data['circuits'], 5)
        self.assertLess(data['max_relative_error'], 1e-5)

    def test_zero_tolerance_is_a_numerical_failure(self):
        path = self.config({'check': {'tolerance': 0.0, 'n_circuits': 1, 'qubits': 2, 'layers': 1}})
        code, _, stderr = self.invoke('gradcheck', '--config', path)
        self.assertEqual(code, 4)
        self.assertEqual(self.payload(stderr)['exit_code'], 4)

    def test_zero_qubits_flag_is_rejected(self):
        code, _, stderr = self.invoke('gradcheck', '--qubits', '0')
        self.assertEqual(code, 2)
        self.assertIn('check.qubits', self.payload(stderr)['message'])


class MoleculeCommandTests(CliTestCase):
    def write_molecules(self, name, mols):
        path = self.tmp / name
        write_jsonl(path, mols)
        return str(path)

    def test_molcheck_writes_csv_to_stdout(self):
        ethanol = MoleculeGraph.from_edges(['C', 'C', 'O'], [(0, 1, 'single'), (1, 2, 'single')], 9)
        broken = MoleculeGraph.from_edges(['C', 'C'], [], 9)
        path = self.write_molecules('mols.jsonl', [ethanol, broken])
        code, stdout, stderr = self.invoke('molcheck', '--in', path)
        self.assertEqual(code, 0)
        lines = stdout.splitlines()
        self.assertEqual(lines[0], 'index,smiles,valid,reason,logp_proxy,druglike_proxy,sa_proxy')
        self.assertEqual(len(lines), 3)
        self.assertTrue(lines[1].startswith('0,CCO,1,'))
        self.assertIn('isolated atom 0', lines[2])
        self.assertEqual(self.payload(stderr)['data'], {'molecules': 2, 'valid': 1})

    def test_fd_of_identical_sets(self):
        path = self.write_molecules('real.jsonl', enumerate_small_molecules(2).molecules)
        code, stdout, _ = self.invoke('fd', '--real', path, '--fake', path)
        self.assertEqual(code, 0)
        data = self.payload(stdout)['data']
        self.assertLess(data['fd'], 1e-6)
        self.assertEqual(data['n_real'], 23)

    def test_fd_missing_file(self):
        code, _, _ = self.invoke('fd', '--real', str(self.tmp / 'a.jsonl'), '--fake', str(self.tmp / 'b.jsonl'))
        self.assertEqual(code, 3)

    def test_dataset_synth_voxels(self):
        path = self.config({'dataset': {'kind': 'voxels', 'channels': 2, 'dim': 4}})
        code, stdout, _ = self.invoke('dataset', 'synth', '--config', path, '--n', '2', '--out', str(self.tmp))
        self.assertEqual(code, 0)
        data = self.payload(stdout)['data']
        self.assertEqual(data['count'], 6)
        self.assertTrue((self.tmp / 'voxels.voxb').exists())

    def test_dataset_synth_molecules(self):
        path = self.config({'dataset': {'max_atoms': 2}})
        code, stdout, _ = self.invoke('dataset', 'synth', '--config', path, '--out', str(self.tmp))
        self.assertEqual(code, 0)
        self.assertEqual(self.payload(stdout)['data']['count'], 23)
        lines = (self.tmp / 'molecules.jsonl').read_text().splitlines()
        self.assertEqual(len(lines), 23)


class QganCommandTests(CliTestCase):
    def train(self, out, *extra):
        return self.invoke('qgan', 'train', '--config', self.config(TINY_QGAN), '--out', str(out), *extra)

    def test_one_epoch_writes_artifacts(self):
        code, stdout, _ = self.train(self.tmp / 'a')
        self.assertEqual(code, 0)
        csv = (self.tmp / 'a' / 'qgan_metrics.csv').read_text().splitlines()
        self.assertEqual(len(csv), 2)
        self.assertEqual(csv[0], 'epoch,lr,fd,validity_fraction,druglike_mean,logp_mean,sa_mean,d_loss,g_loss')
        self.assertEqual(self.payload(stdout)['data']['epochs_run'], 1)
        self.assertTrue((self.tmp / 'a' / 'qgan_report.json').exists())

    def test_rerun_is_byte_identical(self):
        self.assertEqual(self.train(self.tmp / 'a')[0], 0)
        self.assertEqual(self.train(self.tmp / 'b')[0], 0)
        for name in ('qgan_metrics.csv', 'qgan_checkpoint.json', 'qgan_report.json'):
            self.assertEqual((self.tmp / 'a' / name).read_bytes(), (self.tmp / 'b' / name).read_bytes(), name)

    def test_resume_continues_the_epoch_count(self):
        self.train(self.tmp / 'a')
        checkpoint = str(self.tmp / 'a' / 'qgan_checkpoint.json')
        code, stdout, _ = self.train(self.tmp / 'b', '--resume', checkpoint, '--epochs', '2')
        self.assertEqual(code, 0)
        self.assertEqual(self.payload(stdout)['data']['last_epoch'], 2)
        rows = (self.tmp / 'b' / 'qgan_metrics.csv').read_text().splitlines()
        self.assertTrue(rows[1].startswith('2,'))

    def test_sample_from_checkpoint(self):
        self.train(self.tmp / 'a')
        checkpoint = str(self.tmp / 'a' / 'qgan_checkpoint.json')
        code, stdout, _ = self.invoke(
            'qgan', 'sample', '--checkpoint', checkpoint, '--n', '4', '--out', str(self.tmp / 's'),
        )
        self.assertEqual(code, 0)
        self.assertEqual(self.payload(stdout)['data']['n'], 4)
        self.assertEqual(len((self.tmp / 's' / 'qgan_samples.jsonl').read_text().splitlines()), 4)

    def test_sample_rejects_foreign_file(self):
        path = self.config({'format_version': 1, 'command': 'qvae train'}, 'other.json')
        code, _, _ = self.invoke('qgan', 'sample', '--checkpoint', path, '--out', str(self.tmp))
        self.assertEqual(code, 3)


class QvaeCommandTests(CliTestCase):
    def test_checkpoint_reloads(self):
        path = self.config({
            'seed': 2,
            'qvae': {'variants': ['classical_none'], 'epochs': 1, 'batch_size': 4, 'n_molecules': 4, 'n_samples': 2},
        })
        out = self.tmp / 'vae'
        code, stdout, _ = self.invoke('qvae', 'train', '--config', path, '--out', str(out))
        self.assertEqual(code, 0)
        self.assertIn('classical_none', self.payload(stdout)['data']['variants'])
        checkpoint = read_checkpoint(out / 'qvae_classical_none_checkpoint.json', 'qvae train')
        self.assertEqual((checkpoint['variant'], checkpoint['epoch']), ('classical_none', 1))
        arrays = read_arrays(out / checkpoint['arrays']['file'], checkpoint['arrays']['manifest'])
        vae, adam = vae_from_checkpoint(checkpoint, arrays)
        self.assertEqual(adam.step, 1)
        self.assertEqual(vae.variant.name, 'classical_none')


class PlotCommandTests(CliTestCase):
    def test_one_svg_per_metric_column(self):
        records = [
            {'fold': fold, 'epoch': epoch, 'train_loss': 1.0 / epoch, 'val_loss': 1.2 / epoch,
             'train_acc': 0.3 * epoch, 'val_acc': 0.25 * epoch}
            for fold in (0, 1) for epoch in (1, 2, 3)
        ]
        csv = emit_metrics_csv(records, self.tmp / 'quanv_quanv_mlp_metrics.csv', 'quanv')
        code, stdout, _ = self.invoke('plot', '--csv', str(csv), '--out', str(self.tmp / 'plots'))
        self.assertEqual(code, 0)
        files = sorted(path.name for path in (self.tmp / 'plots').glob('*.svg'))
        self.assertEqual(files, [
            'quanv_quanv_mlp_metrics_train_acc.svg',
            'quanv_quanv_mlp_metrics_train_loss.svg',
            'quanv_quanv_mlp_metrics_val_acc.svg',
            'quanv_quanv_mlp_metrics_val_loss.svg',
        ])

    def test_plots_are_reproducible(self):
        records = [{'variant': 'angle_embed', 'epoch': e, 'total': 2.0 / e, 'recon': 1.5 / e, 'kl': 0.5 / e}
                   for e in (1, 2)]
        csv = emit_metrics_csv(records, self.tmp / 'qvae_metrics.csv', 'qvae')
        self.invoke('plot', '--csv', str(csv), '--out', str(self.tmp / 'a'))
        self.invoke('plot', '--csv', str(csv), '--out', str(self.tmp / 'b'))
        self.assertEqual(
            (self.tmp / 'a' / 'qvae_metrics_kl.svg').read_bytes(), (self.tmp / 'b' / 'qvae_metrics_kl.svg').read_bytes(),
        )

    def test_missing_csv(self):
        self.assertEqual(self.invoke('plot', '--csv', str(self.tmp / 'none.csv'), '--out', str(self.tmp))[0], 3)


class ConfigTests(SimpleTestCase):
    def test_sections_are_defaulted(self):
        config = load_run_config()
        self.assertEqual(config['qgan']['lr0'], 1e-4)
        self.assertEqual(config['quanv']['lr'], 1e-5)
        self.assertEqual(config['check']['n_circuits'], 20)

    def test_patched_qubits_must_split_evenly(self):
        with self.assertRaises(ConfigError):
            validate_run_config({'qgan': {'kind': 'patched', 'n_qubits': 8, 'n_patches': 3}})

    def test_unknown_top_level_key(self):
        with self.assertRaises(ConfigError) as ctx:
            validate_run_config({'sede': 1})
        self.assertIn('sede', str(ctx.exception))

    @override_settings(DRUGQML_SEED=11, DRUGQML_THREADS=3, DRUGQML_OUTPUT_DIR='env-runs')
    def test_flag_beats_config_beats_environment(self):
        config = validate_run_config({'seed': 5})
        self.assertEqual(resolve_globals(config, seed=9)['seed'], 9)
        self.assertEqual(resolve_globals(config)['seed'], 5)
        resolved = resolve_globals(validate_run_config({}))
        self.assertEqual((resolved['seed'], resolved['threads']), (11, 3))
        self.assertEqual(str(resolved['output_dir']), 'env-runs')
