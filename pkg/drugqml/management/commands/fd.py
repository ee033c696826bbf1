"""`fd`: descriptor Frechet distance between two molecule files."""

from drugqml.cli import DrugqmlCommand
from drugqml.datasets import load_molecules
from drugqml.exceptions import DataError
from drugqml.metrics import descriptor_fd


class Command(DrugqmlCommand):
    help = 'Frechet distance between Gaussians fitted to the descriptors of two molecule sets.'

    def add_action_arguments(self, action, parser):
        parser.add_argument('--real', required=True, help='reference molecules')
        parser.add_argument('--fake', required=True, help='generated molecules')
        parser.add_argument('--format', choices=('jsonl', 'sdf'), default='jsonl')
        parser.add_argument('--mode', choices=('small', 'large'), default='small')

    def handle_run(self, options, section, run):
        real = load_molecules(options['real'], options['format'], options['mode'])
        fake = load_molecules(options['fake'], options['format'], options['mode'])
        for name, dataset in (('real', real), ('fake', fake)):
            if len(dataset) < 2:
                raise DataError(f'--{name} needs at least 2 valid molecules, got {len(dataset)}')
        fd = descriptor_fd(real.molecules, fake.molecules)
        return {'fd': fd, 'n_real': len(real), 'n_fake': len(fake)}, 'Frechet distance computed'
