# quality_app/management/commands/ablate.py
import json

from quality_app.exceptions import CorpusFormatError
from quality_app.forms import load_train_config
from quality_app.management.base import QualityCommand
from quality_app.metrics import evaluate_corpus
from quality_app.simulation import read_corpus
from quality_app.trainer import initial_params, train
from quality_app.utils import input_checksums, recorded_run, resolve_corpus, staged_output

VARIANTS = ('full', 'without_r_sup', 'sup_only')


def variant_config(config, variant):
    if variant == 'without_r_sup':
        return config.replace(beta=0.0)
    if variant == 'sup_only':
        return config.replace(fuse_frame_features=False)
    return config


def run_variant(config, train_corpus, test_corpus):
    params = initial_params(config, train_corpus[0].features.shape[1])
    params, _, _ = train(params, train_corpus, config)
    frame_report, video_report = evaluate_corpus(params, test_corpus, config.fuse_frame_features)
    return {'frame': frame_report.to_dict(), 'video': video_report.to_dict()}


def direction_checks(results):
    """Per-seed ablation directions and their majority verdict."""
    checks = {'video_acc_full_vs_sup_only': [], 'frame_sen_full_vs_without_r_sup': []}
    for by_variant in results.values():
        checks['video_acc_full_vs_sup_only'].append(
            by_variant['full']['video']['raw']['acc'] >= by_variant['sup_only']['video']['raw']['acc'])
        checks['frame_sen_full_vs_without_r_sup'].append(
            by_variant['full']['frame']['raw']['sen'] >= by_variant['without_r_sup']['frame']['raw']['sen'])
    return {
        name: {'per_seed': outcomes, 'majority': sum(outcomes) * 2 > len(outcomes)}
        for name, outcomes in checks.items()
    }


class Command(QualityCommand):
    help = 'Train and evaluate the full model, the beta=0 model and the video-only model over several seeds'

    manifest_options = ('corpus', 'test', 'config', 'out', 'seeds')
    config_option = 'config'

    def add_arguments(self, parser):
        parser.add_argument('--corpus', required=True,
                            help='simulate output directory or training JSONL file')
        parser.add_argument('--test', default=None,
                            help='Test JSONL file (default: test.jsonl next to --corpus)')
        parser.add_argument('--config', default=None, help='TrainConfig JSON file (default: built-in defaults)')
        parser.add_argument('--out', required=True, help='Output directory')
        parser.add_argument('--seeds', type=int, nargs='+', default=[0, 1, 2],
                            help='Training seeds (default: %(default)s)')

    def run(self, **options):
        config = load_train_config(options['config'])
        train_path = resolve_corpus(options['corpus'], 'train')
        test_path = options['test'] or resolve_corpus(options['corpus'], 'test')
        train_corpus, test_corpus = read_corpus(train_path), read_corpus(test_path)
        if not train_corpus or not test_corpus:
            raise CorpusFormatError('ablation needs non-empty train and test corpora')

        manifest = self.build_manifest(options, config=config.to_dict(), seeds=list(options['seeds']),
                                       inputs=input_checksums(train_path, test_path, options['config']))
        with recorded_run(manifest), staged_output(options['out']) as stage:
            results = {}
            for seed in options['seeds']:
                seeded = config.replace(seed=seed)
                results[str(seed)] = {
                    variant: run_variant(variant_config(seeded, variant), train_corpus, test_corpus)
                    for variant in VARIANTS
                }
                self.stdout.write(f"   seed {seed} done")
            checks = direction_checks(results)
            with open(stage / 'ablation.json', 'w', encoding='utf-8') as handle:
                json.dump({'results': results, 'checks': checks}, handle, indent=2, sort_keys=True)
                handle.write('\n')
            manifest.seal(stage)

        self.success(f"Ablation over seeds {options['seeds']} written to {options['out']}")
        for name, outcome in checks.items():
            style = self.style.SUCCESS if outcome['majority'] else self.style.WARNING
            self.stdout.write(style(f"   {name}: {outcome['per_seed']} -> majority {outcome['majority']}"))
