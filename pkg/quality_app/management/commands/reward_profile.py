# quality_app/management/commands/reward_profile.py
import csv
import re

from django.conf import settings
from django.core.management.base import CommandError

from quality_app.exceptions import ContractViolation
from quality_app.management.base import USAGE_ERROR, QualityCommand
from quality_app.reward import TrapezoidParams, as_frame_labels, profile_from_labels
from quality_app.simulation import read_corpus
from quality_app.utils import input_checksums, line_chart_svg, recorded_run, staged_output


def parse_labels(text):
    """Parse ``"0,1,1,0"`` (commas and/or whitespace); errors name the offending index."""
    tokens = [token for token in re.split(r'[\s,]+', text.strip()) if token]
    if not tokens:
        raise ContractViolation('no frame labels given')
    values = []
    for index, token in enumerate(tokens):
        if token not in ('0', '1'):
            raise ContractViolation(f"frame label at index {index} is {token!r}, expected 0 or 1")
        values.append(int(token))
    return as_frame_labels(values)


class Command(QualityCommand):
    help = 'Render the shaped frame reward (trapezoid envelope) of a label track as CSV and SVG'

    manifest_options = ('labels', 'episode', 'episode_id', 'd', 'a_max', 'out')

    def add_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--labels', help='Frame labels, e.g. "0,1,1,0,1"')
        source.add_argument('--episode', help='Corpus JSONL file to take the label track from')
        parser.add_argument('--episode-id', default=None,
                            help='Episode id inside --episode (default: the first episode)')
        parser.add_argument('--d', type=float, default=settings.REWARD_RAMP_WIDTH,
                            help='Ramp width in frames (default: %(default)s)')
        parser.add_argument('--a-max', type=float, default=settings.REWARD_AMPLITUDE,
                            help='Plateau amplitude (default: %(default)s)')
        parser.add_argument('--out', required=True, help='Output directory')

    def load_labels(self, options):
        if options['labels'] is not None:
            try:
                return parse_labels(options['labels']), 'labels'
            except ContractViolation as exc:
                raise CommandError(str(exc), returncode=USAGE_ERROR) from exc
        corpus = read_corpus(options['episode'])
        wanted = options['episode_id']
        for episode in corpus:
            if wanted is None or episode.id == wanted:
                return episode.frame_labels, episode.id
        raise CommandError(f"episode {wanted!r} not found in {options['episode']}", returncode=USAGE_ERROR)

    def run(self, **options):
        params = TrapezoidParams(d=options['d'], a_max=options['a_max'])
        labels, source = self.load_labels(options)
        profile = profile_from_labels(labels, params)

        manifest = self.build_manifest(options, config={'d': params.d, 'a_max': params.a_max},
                                       inputs=input_checksums(options['episode']))
        with recorded_run(manifest), staged_output(options['out']) as stage:
            with open(stage / 'profile.csv', 'w', encoding='utf-8', newline='') as handle:
                writer = csv.writer(handle, lineterminator='\n')
                writer.writerow(('frame', 'label', 'envelope'))
                for frame, (label, value) in enumerate(zip(labels, profile.values)):
                    writer.writerow((frame, int(label), repr(float(value))))
            svg = line_chart_svg(
                f'Shaped frame reward ({source}, d={params.d:g}, A_max={params.a_max:g})',
                [('label', [float(v) for v in labels]), ('envelope', list(profile.values))],
                y_range=(-1.0, max(params.a_max, 1.0)),
            )
            (stage / 'profile.svg').write_text(svg, encoding='utf-8')
            manifest.seal(stage)

        self.success(f"Wrote reward profile for {len(labels)} frames to {options['out']}")
