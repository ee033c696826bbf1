"""`qgan train` and `qgan sample`."""

import logging

from drugqml.artifacts import (
    emit_metrics_csv,
    ensure_dir,
    read_checkpoint,
    write_checkpoint,
    write_json,
    write_lines,
)
from drugqml.cli import DrugqmlCommand
from drugqml.datasets import enumerate_small_molecules, gen_synthetic_ligands, load_molecules
from drugqml.exceptions import ConfigError
from drugqml.molgraph import write_jsonl
from drugqml.qgan import (
    GanTrainConfig,
    GeneratorSpec,
    count_generator_params,
    generator_from_checkpoint,
    sample_molecules,
    train_qgan,
)

logger = logging.getLogger(__name__)

SPEC_KEYS = ('kind', 'n_qubits', 'n_layers', 'n_patches', 'z_dim', 'hidden', 'mode')
SCHEDULE_KEYS = ('lr0', 'decay_start', 'decay_span', 'max_epochs', 'batch_size', 'gp_lambda', 'n_critic',
                 'fd_patience')
LARGE_SYNTHETIC_SIZE = 256


def qgan_dataset(section, seed):
    """Molecules from `data`, else the enumerated small set or synthetic ligands."""
    if section.get('data'):
        return load_molecules(section['data'], section['data_format'], section['mode'])
    if section['mode'] == 'small':
        return enumerate_small_molecules(section['enumerate_max_atoms'])
    return gen_synthetic_ligands(LARGE_SYNTHETIC_SIZE, seed)


class Command(DrugqmlCommand):
    help = 'Train a hybrid quantum-classical GAN or sample molecules from its checkpoint.'
    section = 'qgan'
    actions = ('train', 'sample')

    def add_action_arguments(self, action, parser):
        if action == 'train':
            parser.add_argument('--data', help='molecule file (overrides qgan.data)')
            parser.add_argument('--format', choices=('jsonl', 'sdf'), help='molecule file format')
            parser.add_argument('--kind', choices=('quantum', 'patched', 'classical'), help='generator kind')
            parser.add_argument('--epochs', type=int, help='max epochs (overrides qgan.max_epochs)')
            parser.add_argument('--resume', help='checkpoint to continue training from')
        else:
            parser.add_argument('--checkpoint', required=True, help='checkpoint written by `qgan train`')
            parser.add_argument('--n', type=int, help='number of molecules (overrides qgan.n_samples)')

    def handle_train(self, options, section, run):
        for flag, key in (('data', 'data'), ('format', 'data_format'), ('kind', 'kind'), ('epochs', 'max_epochs')):
            if options.get(flag) is not None:
                section[key] = options[flag]
        if section['max_epochs'] < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {section['max_epochs']}")

        gen_spec = GeneratorSpec(**{key: section[key] for key in SPEC_KEYS})
        cfg = GanTrainConfig(**{key: section[key] for key in SCHEDULE_KEYS},
                             seed=run['seed'], threads=run['threads'])
        dataset = qgan_dataset(section, run['seed'])
        resume = read_checkpoint(options['resume'], 'qgan train') if options.get('resume') else None

        result = train_qgan(cfg, dataset, gen_spec, resume=resume)

        out = ensure_dir(run['output_dir'])
        emit_metrics_csv(result.records, out / 'qgan_metrics.csv', 'qgan')
        write_checkpoint(out / 'qgan_checkpoint.json', result.checkpoint)
        params = count_generator_params(generator_from_checkpoint(result.checkpoint, 'latest', run['threads']))
        report = {
            'generator': gen_spec.to_dict(),
            'dataset_size': len(dataset),
            'epochs_run': len(result.records),
            'last_epoch': result.checkpoint['epoch'],
            'initial_fd': result.initial_fd,
            'best_epoch': result.checkpoint['best']['epoch'],
            'best_fd': result.checkpoint['best']['fd'],
            'stop_reason': result.stop_reason,
            'parameters': params,
        }
        write_json(out / 'qgan_report.json', report)
        return {**report, 'output_dir': str(out)}, 'QGAN training finished'

    def handle_sample(self, options, section, run):
        n = options['n'] if options.get('n') is not None else section['n_samples']
        if n < 1:
            raise ConfigError(f'--n must be >= 1, got {n}')
        checkpoint = read_checkpoint(options['checkpoint'], 'qgan train')
        rows = sample_molecules(checkpoint, n, run['seed'], workers=run['threads'])

        out = ensure_dir(run['output_dir'])
        write_jsonl(out / 'qgan_samples.jsonl', rows)
        smiles = [row['smiles'] for row in rows if row['valid']]
        write_lines(out / 'qgan_samples.smi', smiles)
        data = {
            'n': n,
            'valid': len(smiles),
            'validity_fraction': len(smiles) / n,
            'unique_valid': len(set(smiles)),
            'output_dir': str(out),
        }
        return data, 'QGAN sampling finished'
