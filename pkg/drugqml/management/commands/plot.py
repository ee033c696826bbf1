"""`plot`: one SVG line chart per metric column of a metrics CSV."""

from drugqml.artifacts import plot_metrics
from drugqml.cli import DrugqmlCommand


class Command(DrugqmlCommand):
    help = 'Plot every metric column of a qgan, quanv or qvae metrics CSV as SVG.'

    def add_action_arguments(self, action, parser):
        parser.add_argument('--csv', required=True, help='metrics CSV written by a training command')

    def handle_run(self, options, section, run):
        written = plot_metrics(options['csv'], run['output_dir'])
        return {'files': [str(path) for path in written]}, f'Wrote {len(written)} plot(s)'
