# quality_app/management/commands/eval.py
import csv
import json

from quality_app.agents import check_compatible, read_checkpoint
from quality_app.management.base import QualityCommand
from quality_app.metrics import predict_corpus, reports_from_predictions
from quality_app.simulation import read_corpus
from quality_app.utils import (input_checksums, line_chart_svg, recorded_run, resolve_corpus,
                               staged_output)


class Command(QualityCommand):
    help = 'Evaluate a checkpoint at frame and video level (ACC, SEN, SPE, PRE, F1, AUC)'

    manifest_options = ('checkpoint', 'corpus', 'out', 'timelines')

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='Checkpoint JSON written by train')
        parser.add_argument('--corpus', required=True,
                            help='Corpus: JSONL file or simulate output directory (uses test.jsonl)')
        parser.add_argument('--out', required=True, help='Output directory')
        parser.add_argument('--timelines', type=int, default=1,
                            help='SVG timelines for the first K episodes (default: %(default)s)')

    def run(self, **options):
        params, extra = read_checkpoint(options['checkpoint'], with_extra=True)
        fuse = extra.get('fuse_frame_features', True)
        corpus_path = resolve_corpus(options['corpus'], 'test')
        corpus = read_corpus(corpus_path)
        for episode in corpus:
            check_compatible(params, episode)
        predictions = predict_corpus(params, corpus, fuse_frame_features=fuse)
        frame_report, video_report = reports_from_predictions(predictions)

        manifest = self.build_manifest(options, config={'fuse_frame_features': fuse},
                                       inputs=input_checksums(options['checkpoint'], corpus_path))
        with recorded_run(manifest), staged_output(options['out']) as stage:
            with open(stage / 'report.json', 'w', encoding='utf-8') as handle:
                json.dump({'frame': frame_report.to_dict(), 'video': video_report.to_dict()},
                          handle, indent=2, sort_keys=True)
                handle.write('\n')
            with open(stage / 'predictions.csv', 'w', encoding='utf-8', newline='') as handle:
                writer = csv.writer(handle, lineterminator='\n')
                writer.writerow(('episode_id', 'frame_idx', 'prob', 'action', 'label'))
                for episode, probs, _, trace in predictions:
                    for frame, (prob, action, label) in enumerate(
                            zip(probs, trace.frame_actions, episode.frame_labels)):
                        writer.writerow((episode.id, frame, repr(float(prob)), int(action), int(label)))
            with open(stage / 'video_predictions.csv', 'w', encoding='utf-8', newline='') as handle:
                writer = csv.writer(handle, lineterminator='\n')
                writer.writerow(('episode_id', 'prob', 'action', 'label'))
                for episode, _, video_prob, trace in predictions:
                    writer.writerow((episode.id, repr(float(video_prob)), trace.video_action, episode.video_label))
            timelines = predictions[:max(options['timelines'], 0)]
            if timelines:
                (stage / 'timelines').mkdir()
            for episode, probs, _, trace in timelines:
                svg = line_chart_svg(
                    f'{episode.id}: label and selection probability',
                    [('label', [float(v) for v in episode.frame_labels]),
                     ('prob', [float(p) for p in probs]),
                     ('selected', [float(a) for a in trace.frame_actions])],
                    y_range=(0.0, 1.0),
                )
                (stage / 'timelines' / f'{episode.id}.svg').write_text(svg, encoding='utf-8')
            manifest.seal(stage)

        self.success(f"Evaluated {len(corpus)} episodes; report in {options['out']}")
        for report in (frame_report, video_report):
            percent = report.to_dict()['percent']
            cells = ' '.join(f"{name.upper()}={'--' if value is None else f'{value:.2f}'}"
                             for name, value in percent.items())
            self.stdout.write(f"   {report.level}: {cells}")
