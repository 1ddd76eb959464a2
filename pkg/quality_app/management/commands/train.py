# quality_app/management/commands/train.py
from quality_app.agents import write_checkpoint
from quality_app.exceptions import CorpusFormatError
from quality_app.forms import load_train_config
from quality_app.management.base import QualityCommand
from quality_app.simulation import read_corpus
from quality_app.trainer import initial_params, train
from quality_app.utils import (input_checksums, line_chart_svg, recorded_run, resolve_corpus,
                               staged_output)


def feature_dim_of(corpus, source):
    widths = {episode.features.shape[1] for episode in corpus}
    if len(widths) > 1:
        raise CorpusFormatError(f"episodes in {source} have mixed feature widths {sorted(widths)}")
    return widths.pop()


def reward_curve_svg(log):
    series = [(name, log.column(name)) for name in ('r_sub', 'r_sup', 'r_total')]
    values = [value for _, column in series for value in column]
    return line_chart_svg(f'{log.phase} rewards per epoch', series,
                          y_range=(min(min(values), -1.0), max(max(values), 0.0)))


class Command(QualityCommand):
    help = 'Pretrain the frame agent, then train both agents jointly on a corpus'

    manifest_options = ('corpus', 'config', 'out', 'ablate_sup', 'sup_only', 'checkpoint_every',
                        'record_timings')
    config_option = 'config'

    def add_arguments(self, parser):
        parser.add_argument('--corpus', required=True,
                            help='Training corpus: JSONL file or simulate output directory (uses train.jsonl)')
        parser.add_argument('--config', default=None,
                            help='TrainConfig JSON file (default: 5 rollouts per update, lr 1e-05, '
                                 'momentum 0.9, lr x0.5 every 30 epochs, beta 1.0)')
        parser.add_argument('--out', required=True, help='Output directory')
        parser.add_argument('--ablate-sup', action='store_true',
                            help='Drop R_sup from the objective (beta = 0) (default: off)')
        parser.add_argument('--sup-only', action='store_true',
                            help='Hide the frame agent features from the video agent (default: off)')
        parser.add_argument('--checkpoint-every', type=int, default=0,
                            help='Write a checkpoint every K epochs of each phase, 0 disables (default: %(default)s)')
        parser.add_argument('--record-timings', action='store_true',
                            help='Write wall-clock seconds into the train logs (default: off)')

    def run(self, **options):
        config = load_train_config(options['config'])
        if options['ablate_sup']:
            config = config.replace(beta=0.0)
        if options['sup_only']:
            config = config.replace(fuse_frame_features=False)
        corpus_path = resolve_corpus(options['corpus'], 'train')
        corpus = read_corpus(corpus_path)
        if not corpus:
            raise CorpusFormatError(f"training corpus {corpus_path} is empty")
        params = initial_params(config, feature_dim_of(corpus, corpus_path))
        every = options['checkpoint_every']
        extra = {'beta': config.beta, 'fuse_frame_features': config.fuse_frame_features}

        manifest = self.build_manifest(options, config=config.to_dict(), seeds=[config.seed],
                                       inputs=input_checksums(corpus_path, options['config']))
        with recorded_run(manifest), staged_output(options['out']) as stage:
            def on_epoch(phase, epoch, current, record):
                if every and (epoch + 1) % every == 0:
                    (stage / 'checkpoints').mkdir(exist_ok=True)
                    write_checkpoint(current, stage / 'checkpoints' / f'{phase}-epoch-{epoch + 1:04d}.json',
                                     extra={**extra, 'phase': phase, 'epoch': epoch + 1})

            params, pretrain_log, joint_log = train(params, corpus, config, on_epoch)
            write_checkpoint(params, stage / 'checkpoint.json', extra=extra)
            for name, log in (('pretrain_log.csv', pretrain_log), ('train_log.csv', joint_log)):
                with open(stage / name, 'w', encoding='utf-8', newline='') as handle:
                    log.write_csv(handle, include_timings=options['record_timings'])
            if len(joint_log):
                (stage / 'train_curve.svg').write_text(reward_curve_svg(joint_log), encoding='utf-8')
            manifest.seal(stage)

        self.success(f"Trained on {len(corpus)} episodes; outputs in {options['out']}")
        if len(joint_log):
            last = joint_log.records[-1]
            self.stdout.write(f"   final joint epoch: r_sub={last.r_sub:.4f} r_sup={last.r_sup:.4f} "
                              f"r_total={last.r_total:.4f} lr={last.lr:g}")
