"""`quanv train`: stratified k-fold comparison of pocket classification pipelines."""

import logging

from drugqml.artifacts import emit_metrics_csv, ensure_dir, write_json
from drugqml.cli import DrugqmlCommand
from drugqml.datasets import gen_synthetic_voxels, load_voxels
from drugqml.quanv import VARIANTS, FeatureCache, PipelineSpec, pipeline_report, train_pipeline

logger = logging.getLogger(__name__)


class Command(DrugqmlCommand):
    help = 'Train quanvolution and CNN pipelines on voxel grids with stratified k-fold cross-validation.'
    section = 'quanv'
    actions = ('train',)

    def add_action_arguments(self, action, parser):
        parser.add_argument('--data', help='VOXB file (overrides quanv.data)')
        parser.add_argument('--variant', action='append', choices=VARIANTS,
                            help='pipeline to train; repeat for several (overrides quanv.variants)')
        parser.add_argument('--epochs', type=int, help='epochs per fold (overrides quanv.epochs)')

    def handle_train(self, options, section, run):
        if options.get('data'):
            section['data'] = options['data']
        if options.get('variant'):
            section['variants'] = options['variant']
        if options.get('epochs') is not None:
            section['epochs'] = options['epochs']

        if section.get('data'):
            dataset = load_voxels(section['data'])
        else:
            dataset = gen_synthetic_voxels(section['n_per_class'], section['channels'], section['dim'], run['seed'])
        sample = dataset.samples[0] if len(dataset) else None
        extractor_seed = section.get('extractor_seed', run['seed'])

        out = ensure_dir(run['output_dir'])
        cache = FeatureCache()
        reports = []
        for variant in dict.fromkeys(section['variants']):
            spec = PipelineSpec(variant, extractor_seed, section['filter_depth'])
            records = train_pipeline(
                spec, dataset,
                folds=section['folds'], epochs=section['epochs'], batch=section['batch_size'],
                lr=section['lr'], seed=run['seed'], workers=run['threads'], cache=cache,
            )
            emit_metrics_csv(records, out / f'quanv_{variant}_metrics.csv', 'quanv')
            report = pipeline_report(spec, sample.channels, sample.dim)
            last = [r for r in records if r['epoch'] == section['epochs']]
            report['final_train_acc'] = sum(r['train_acc'] for r in last) / len(last)
            report['final_val_acc'] = sum(r['val_acc'] for r in last) / len(last)
            reports.append(report)

        summary = {
            'samples': len(dataset),
            'class_counts': dataset.class_counts,
            'folds': section['folds'],
            'epochs': section['epochs'],
            'pipelines': reports,
        }
        write_json(out / 'quanv_report.json', summary)
        return {**summary, 'output_dir': str(out)}, 'Quanvolution training finished'
