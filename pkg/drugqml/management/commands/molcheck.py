"""`molcheck`: per-molecule validity and property proxies as CSV on stdout."""

import pandas as pd

from drugqml.cli import DrugqmlCommand
from drugqml.molgraph import get_alphabet, is_valid, property_scores, read_jsonl, read_sdf, to_smiles

COLUMNS = ('index', 'smiles', 'valid', 'reason', 'logp_proxy', 'druglike_proxy', 'sa_proxy')


class Command(DrugqmlCommand):
    help = 'Check every molecule of a file; the CSV goes to stdout and the result line to stderr.'
    result_stream = 'stderr'

    def add_action_arguments(self, action, parser):
        parser.add_argument('--in', dest='input', required=True, help='molecule file')
        parser.add_argument('--format', choices=('jsonl', 'sdf'), help='default: from the file suffix')
        parser.add_argument('--mode', choices=('small', 'large'), default='small')

    def handle_run(self, options, section, run):
        path = options['input']
        fmt = options.get('format') or ('sdf' if str(path).lower().endswith(('.sdf', '.mol')) else 'jsonl')
        alphabet = get_alphabet(options['mode'])
        molecules = (read_jsonl if fmt == 'jsonl' else read_sdf)(path, alphabet)

        rows = []
        for index, mol in enumerate(molecules):
            validity = is_valid(mol)
            rows.append({
                'index': index,
                'smiles': to_smiles(mol) if validity else '',
                'valid': int(validity.valid),
                'reason': validity.reason or '',
                **property_scores(mol).to_dict(),
            })
        frame = pd.DataFrame(rows, columns=list(COLUMNS))
        self.stdout.write(frame.to_csv(index=False, float_format='%.9g', lineterminator='\n'), ending='')

        n_valid = int(frame['valid'].sum()) if len(frame) else 0
        data = {'molecules': len(rows), 'valid': n_valid}
        return data, f'{n_valid} of {len(rows)} molecules valid'
