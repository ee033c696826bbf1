"""`dataset synth`: write seeded synthetic datasets to the output directory."""

from drugqml.artifacts import ensure_dir
from drugqml.cli import DrugqmlCommand
from drugqml.datasets import enumerate_small_molecules, gen_synthetic_ligands, gen_synthetic_voxels
from drugqml.molgraph import write_jsonl
from drugqml.quanv import write_voxb
from drugqml.serializers import DATASET_KINDS


class Command(DrugqmlCommand):
    help = 'Write enumerated small molecules, synthetic voxel grids or synthetic ligands.'
    section = 'dataset'
    actions = ('synth',)

    def add_action_arguments(self, action, parser):
        parser.add_argument('--kind', choices=DATASET_KINDS, help='dataset kind (overrides dataset.kind)')
        parser.add_argument('--n', type=int, help='ligand count or voxel samples per class')

    def handle_synth(self, options, section, run):
        kind = options.get('kind') or section['kind']
        out = ensure_dir(run['output_dir'])
        if kind == 'molecules':
            dataset = enumerate_small_molecules(section['max_atoms'])
            path = write_jsonl(out / 'molecules.jsonl', dataset.molecules)
            data = {'kind': kind, 'count': len(dataset), 'max_atoms': section['max_atoms']}
        elif kind == 'ligands':
            n = options['n'] if options.get('n') is not None else section['n']
            dataset = gen_synthetic_ligands(n, run['seed'])
            path = write_jsonl(out / 'ligands.jsonl', dataset.molecules)
            data = {'kind': kind, 'count': len(dataset)}
        else:
            n = options['n'] if options.get('n') is not None else section['n_per_class']
            dataset = gen_synthetic_voxels(n, section['channels'], section['dim'], run['seed'])
            path = write_voxb(out / 'voxels.voxb', dataset.samples)
            data = {
                'kind': kind,
                'count': len(dataset),
                'class_counts': dataset.class_counts,
                'channels': section['channels'],
                'dim': section['dim'],
            }
        data['path'] = str(path)
        return data, f'Wrote {data["count"]} {kind}'
