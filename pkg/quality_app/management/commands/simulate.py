# quality_app/management/commands/simulate.py
import json

import numpy as np

from quality_app.exceptions import ConfigurationError
from quality_app.forms import load_sim_config
from quality_app.management.base import QualityCommand
from quality_app.simulation import generate_corpus, write_corpus
from quality_app.utils import input_checksums, recorded_run, staged_output


def prevalence(corpus):
    if not corpus:
        return 0.0, 0.0
    frames = float(np.mean(np.concatenate([episode.frame_labels for episode in corpus])))
    videos = float(np.mean([episode.video_label for episode in corpus]))
    return frames, videos


class Command(QualityCommand):
    help = 'Generate a synthetic train/test corpus of episodes with planted qualified-frame clusters'

    manifest_options = ('config', 'out', 'n_train', 'n_test')
    config_option = 'config'

    def add_arguments(self, parser):
        parser.add_argument('--config', default=None,
                            help='SimConfig JSON file (default: built-in defaults, 128 frames)')
        parser.add_argument('--out', required=True, help='Output directory')
        parser.add_argument('--n-train', type=int, default=200,
                            help='Number of training episodes (default: %(default)s)')
        parser.add_argument('--n-test', type=int, default=50,
                            help='Number of test episodes (default: %(default)s)')

    def run(self, **options):
        config = load_sim_config(options['config'])
        n_train, n_test = options['n_train'], options['n_test']
        if n_train < 0 or n_test < 0:
            raise ConfigurationError({'n_train': ['episode counts must be non-negative']})

        manifest = self.build_manifest(options, config=config.to_dict(), seeds=[config.seed],
                                       inputs=input_checksums(options['config']))
        with recorded_run(manifest), staged_output(options['out']) as stage:
            train, test = generate_corpus(config, n_train, n_test)
            write_corpus(train, stage / 'train.jsonl')
            write_corpus(test, stage / 'test.jsonl')
            with open(stage / 'sim_config.json', 'w', encoding='utf-8') as handle:
                json.dump(config.to_dict(), handle, indent=2, sort_keys=True)
                handle.write('\n')
            manifest.seal(stage)

        self.success(f"Wrote {len(train) + len(test)} episodes to {options['out']}")
        for name, split in (('train', train), ('test', test)):
            frames, videos = prevalence(split)
            self.stdout.write(
                f"   {name}: {len(split)} episodes, qualified frames {100 * frames:.2f}%, "
                f"qualified videos {100 * videos:.2f}%"
            )
