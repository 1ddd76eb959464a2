# quality_app/utils.py
import hashlib
import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

from django.db import DatabaseError
from django.template.loader import render_to_string
from django.utils import timezone

from . import __version__
from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def directory_checksums(root):
    """sha256 of every file under ``root`` except the manifest, keyed by relative path."""
    root = Path(root)
    return {
        path.relative_to(root).as_posix(): sha256_file(path)
        for path in sorted(root.rglob('*'))
        if path.is_file() and path.name != MANIFEST_NAME
    }


@contextmanager
def staged_output(out_dir):
    """Write into a hidden sibling directory and move the files into ``out_dir``
    only once the block finishes; on error nothing reaches ``out_dir``.

    ``out_dir`` must be absent, empty, or the output of an earlier run (it holds
    a manifest); an earlier run's files are replaced wholesale, never merged.
    """
    out_dir = Path(out_dir)
    if out_dir.exists() and not out_dir.is_dir():
        raise ConfigurationError({'out': [f"{out_dir} exists and is not a directory"]})
    if out_dir.is_dir() and any(out_dir.iterdir()) and not (out_dir / MANIFEST_NAME).is_file():
        raise ConfigurationError({'out': [f"{out_dir} is not empty and holds no {MANIFEST_NAME}"]})
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f'.{out_dir.name}.', dir=out_dir.parent))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    out_dir.mkdir(exist_ok=True)
    for item in sorted(out_dir.iterdir()):
        if item.is_dir() and not item.is_symlink():
            shutil.rmtree(item)
        else:
            item.unlink()
    for item in sorted(stage.iterdir()):
        os.replace(item, out_dir / item.name)
    stage.rmdir()


@dataclass
class RunManifest:
    command: str
    options: dict
    config: dict = field(default_factory=dict)
    config_option: str = None
    seeds: list = field(default_factory=list)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    output_dir: str = ''
    tool_version: str = __version__
    started_at: str = ''
    finished_at: str = ''

    def to_dict(self):
        return asdict(self)

    def write(self, path):
        with open(path, 'w', encoding='utf-8') as handle:
            json.dump(self.to_dict(), handle, indent=2, sort_keys=True)
            handle.write('\n')

    @classmethod
    def read(cls, path):
        with open(path, encoding='utf-8') as handle:
            return cls(**json.load(handle))

    def seal(self, stage):
        """Fill in output checksums and the finish time, then write into ``stage``."""
        self.outputs = directory_checksums(stage)
        self.finished_at = timezone.now().isoformat()
        self.write(Path(stage) / MANIFEST_NAME)


def input_checksums(*paths):
    return {str(path): sha256_file(path) for path in paths if path and Path(path).is_file()}


def _open_run(manifest):
    from .models import ExperimentRun
    try:
        return ExperimentRun.objects.create(
            command=manifest.command,
            options=manifest.options,
            config=manifest.config,
            seeds=manifest.seeds,
            inputs=manifest.inputs,
            output_dir=manifest.output_dir,
            tool_version=manifest.tool_version,
            started_at=timezone.now(),
        )
    except DatabaseError as exc:
        logger.warning("run registry unavailable, %s not recorded: %s", manifest.command, exc)
        return None


@contextmanager
def recorded_run(manifest):
    """Register the run in the database for the duration of the block."""
    manifest.started_at = timezone.now().isoformat()
    run = _open_run(manifest)
    try:
        yield manifest
    except Exception as exc:
        _close_run(run, 'failed', error=str(exc))
        raise
    _close_run(run, 'succeeded', outputs=manifest.outputs)


def _close_run(run, status, outputs=None, error=''):
    if run is None:
        return
    try:
        run.mark_finished(status, timezone.now(), outputs=outputs, error=error)
    except DatabaseError as exc:
        logger.warning("could not update run %s: %s", run.pk, exc)
        return
    logger.info("%s run %s %s after %.1f s", run.command, run.pk, status, run.duration_seconds())


def resolve_corpus(path, split):
    """A corpus argument is a JSONL file or a ``simulate`` output directory."""
    path = Path(path)
    if path.is_dir():
        return path / f'{split}.jsonl'
    return path


CHART_WIDTH = 800
CHART_HEIGHT = 260
CHART_MARGIN = 40
SERIES_COLOURS = ('#1f4e9c', '#d9822b', '#3a9b5c', '#a23b72')


def line_chart_svg(title, series, y_range):
    """Render ``[(label, values), ...]`` over frame index as an SVG document."""
    y_low, y_high = y_range
    n_points = max(len(values) for _, values in series)
    plot_width = CHART_WIDTH - 2 * CHART_MARGIN
    plot_height = CHART_HEIGHT - 2 * CHART_MARGIN
    span = (y_high - y_low) or 1.0

    def x_at(index):
        return CHART_MARGIN + plot_width * (index / max(n_points - 1, 1))

    def y_at(value):
        return CHART_MARGIN + plot_height * (1.0 - (value - y_low) / span)

    lines = []
    for number, (label, values) in enumerate(series):
        points = ' '.join(f'{x_at(i):.2f},{y_at(v):.2f}' for i, v in enumerate(values))
        lines.append({
            'label': label,
            'points': points,
            'colour': SERIES_COLOURS[number % len(SERIES_COLOURS)],
            'legend_y': CHART_MARGIN + 14 * number,
        })
    context = {
        'title': title,
        'width': CHART_WIDTH,
        'height': CHART_HEIGHT,
        'left': CHART_MARGIN,
        'right': CHART_WIDTH - CHART_MARGIN,
        'top': CHART_MARGIN,
        'bottom': CHART_HEIGHT - CHART_MARGIN,
        'legend_x': CHART_WIDTH - CHART_MARGIN - 120,
        'y_low': f'{y_low:g}',
        'y_high': f'{y_high:g}',
        'n_points': n_points,
        'lines': lines,
    }
    return render_to_string('quality_app/line_chart.svg', context)
