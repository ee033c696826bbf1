"""`qvae train`: ligand VAE comparison across quantum latent layers."""

import logging

from drugqml.artifacts import emit_metrics_csv, ensure_dir, write_arrays, write_checkpoint, write_json
from drugqml.cli import DrugqmlCommand
from drugqml.datasets import gen_synthetic_ligands, load_molecules
from drugqml.molgraph import is_valid, molecule_to_record, to_smiles, write_jsonl
from drugqml.qvae import (
    QuantumLayerVariant,
    checkpoint_arrays,
    sample_molecules,
    train_vae_comparison,
    vae_checkpoint,
)

logger = logging.getLogger(__name__)


class Command(DrugqmlCommand):
    help = 'Train one ligand VAE per quantum latent layer variant from shared initial weights.'
    section = 'qvae'
    actions = ('train',)

    def add_action_arguments(self, action, parser):
        parser.add_argument('--data', help='large-mode JSONL molecules (overrides qvae.data)')
        parser.add_argument('--variant', action='append', help='variant name; repeat for several')
        parser.add_argument('--epochs', type=int, help='epochs (overrides qvae.epochs)')

    def handle_train(self, options, section, run):
        if options.get('data'):
            section['data'] = options['data']
        if options.get('variant'):
            section['variants'] = options['variant']
        if options.get('epochs') is not None:
            section['epochs'] = options['epochs']

        if section.get('data'):
            dataset = load_molecules(section['data'], 'jsonl', 'large')
        else:
            dataset = gen_synthetic_ligands(section['n_molecules'], run['seed'])
        variants = [
            QuantumLayerVariant.from_name(name, section['reupload_rounds'])
            for name in dict.fromkeys(section['variants'])
        ]

        result = train_vae_comparison(
            dataset, variants,
            epochs=section['epochs'], lr=section['lr'], seed=run['seed'],
            batch_size=section['batch_size'], workers=run['threads'],
        )

        out = ensure_dir(run['output_dir'])
        emit_metrics_csv(result.records, out / 'qvae_metrics.csv', 'qvae')
        summary = {'molecules': len(dataset), 'epochs': section['epochs'], 'variants': {}}
        for name, vae in result.models.items():
            mols = sample_molecules(vae, section['n_samples'], run['seed'])
            rows = []
            for mol in mols:
                validity = is_valid(mol)
                rows.append(molecule_to_record(
                    mol, valid=validity.valid, reason=validity.reason,
                    smiles=to_smiles(mol) if validity else None,
                ))
            write_jsonl(out / f'qvae_{name}_samples.jsonl', rows)
            arrays_file = f'qvae_{name}_arrays.npy'
            checkpoint = vae_checkpoint(result, name)
            checkpoint['arrays'] = {
                'file': arrays_file,
                'manifest': write_arrays(out / arrays_file, checkpoint_arrays(vae, result.optimizers[name])),
            }
            write_checkpoint(out / f'qvae_{name}_checkpoint.json', checkpoint)
            final = [r for r in result.records if r['variant'] == name][-1]
            summary['variants'][name] = {
                'final_total': final['total'],
                'final_recon': final['recon'],
                'final_kl': final['kl'],
                'sample_validity': sum(row['valid'] for row in rows) / len(rows),
            }
        write_json(out / 'qvae_report.json', summary)
        return {**summary, 'output_dir': str(out)}, 'QVAE comparison finished'
