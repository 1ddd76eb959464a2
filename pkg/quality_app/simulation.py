# quality_app/simulation.py
"""Synthetic episodes with planted clusters of qualified frames.

Every episode is a function of ``(config.seed, index)`` only. Qualified and
unqualified frames get opposite class means along one seed-level direction;
per-frame noise is smoothed over a 3-frame window so neighbouring frames
correlate.
"""
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigurationError, CorpusFormatError
from .reward import as_frame_labels

logger = logging.getLogger(__name__)

SMOOTHING_WINDOW = 3


@dataclass(frozen=True)
class SimConfig:
    n_frames: int = 128
    feature_dim: int = 16
    cluster_count_range: tuple = (1, 4)
    cluster_width_range: tuple = (4, 24)
    overlap_probability: float = 0.2
    signal_to_noise: float = 5.0
    video_quality_threshold: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'cluster_count_range', tuple(self.cluster_count_range))
        object.__setattr__(self, 'cluster_width_range', tuple(self.cluster_width_range))
        self.validate()

    def validate(self):
        errors = {}
        if self.n_frames < 1:
            errors['n_frames'] = ['must be at least 1']
        if self.feature_dim < 1:
            errors['feature_dim'] = ['must be at least 1']
        for name in ('cluster_count_range', 'cluster_width_range'):
            bounds = getattr(self, name)
            if len(bounds) != 2 or bounds[0] < 0 or bounds[0] > bounds[1]:
                errors[name] = ['must be a [min, max] pair with 0 <= min <= max']
        if not errors.get('cluster_width_range'):
            low, high = self.cluster_width_range
            if low < 1:
                errors['cluster_width_range'] = ['cluster widths must be at least 1 frame']
            elif high > self.n_frames:
                errors['cluster_width_range'] = [
                    f"maximum cluster width {high} exceeds n_frames {self.n_frames}"
                ]
        if not 0.0 <= self.overlap_probability <= 1.0:
            errors['overlap_probability'] = ['must lie in [0, 1]']
        if not self.signal_to_noise > 0:
            errors['signal_to_noise'] = ['must be positive']
        if not 0.0 <= self.video_quality_threshold <= 1.0:
            errors['video_quality_threshold'] = ['must lie in [0, 1]']
        if not 0 <= self.seed < 2 ** 64:
            errors['seed'] = ['must be a 64-bit unsigned integer']
        if errors:
            raise ConfigurationError(errors)

    def to_dict(self):
        data = asdict(self)
        data['cluster_count_range'] = list(self.cluster_count_range)
        data['cluster_width_range'] = list(self.cluster_width_range)
        return data


@dataclass
class Episode:
    id: str
    features: np.ndarray
    frame_labels: np.ndarray
    video_label: int

    @property
    def n_frames(self):
        return len(self.frame_labels)

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.id == other.id
            and self.video_label == other.video_label
            and np.array_equal(self.frame_labels, other.frame_labels)
            and self.features.shape == other.features.shape
            and np.allclose(self.features, other.features, rtol=0.0, atol=1e-9)
        )

    def to_record(self):
        return {
            'id': self.id,
            'video_label': int(self.video_label),
            'frame_labels': [int(v) for v in self.frame_labels],
            'features': self.features.tolist(),
        }


def video_label_for(frame_labels, threshold):
    return int(np.mean(frame_labels) >= threshold)


def quality_direction(config):
    """Unit vector separating the two class means; shared by every episode of a seed."""
    rng = np.random.default_rng([config.seed, 0xD1])
    direction = rng.standard_normal(config.feature_dim)
    return direction / np.linalg.norm(direction)


def _plant_clusters(config, rng):
    labels = np.zeros(config.n_frames, dtype=np.int8)
    count = int(rng.integers(config.cluster_count_range[0], config.cluster_count_range[1] + 1))
    previous = None
    for _ in range(count):
        width = int(rng.integers(config.cluster_width_range[0], config.cluster_width_range[1] + 1))
        latest_start = config.n_frames - width
        if previous is not None and rng.random() < config.overlap_probability:
            # start inside the previous cluster so the two runs merge
            prev_start, prev_width = previous
            start = int(rng.integers(prev_start, prev_start + prev_width))
            start = min(start, latest_start)
        else:
            start = int(rng.integers(0, latest_start + 1))
        labels[start:start + width] = 1
        previous = (start, width)
    return labels


def _smooth(noise):
    kernel = np.ones(SMOOTHING_WINDOW) / SMOOTHING_WINDOW
    return np.apply_along_axis(lambda column: np.convolve(column, kernel, mode='same'), 0, noise)


def generate_episode(config, index):
    config.validate()
    rng = np.random.default_rng([config.seed, index])
    labels = _plant_clusters(config, rng)
    direction = quality_direction(config)
    means = np.where(labels[:, None] == 1, direction, -direction)
    noise = rng.standard_normal((config.n_frames, config.feature_dim)) / config.signal_to_noise
    features = (means + _smooth(noise)).astype(np.float32).astype(np.float64)
    episode = Episode(
        id=f"episode-{index:06d}",
        features=features,
        frame_labels=labels,
        video_label=video_label_for(labels, config.video_quality_threshold),
    )
    logger.debug("generated %s: %d qualified frames, video label %d",
                 episode.id, int(labels.sum()), episode.video_label)
    return episode


def generate_corpus(config, n_train, n_test):
    """Train episodes take indices 0..n_train-1, test episodes the next n_test."""
    if n_train < 0 or n_test < 0:
        raise ConfigurationError({'__all__': ['episode counts must be non-negative']})
    train = [generate_episode(config, index) for index in range(n_train)]
    test = [generate_episode(config, index) for index in range(n_train, n_train + n_test)]
    return train, test


def dumps_episode(episode):
    return json.dumps(episode.to_record(), separators=(',', ':'))


def write_corpus(corpus, path):
    with open(path, 'w', encoding='utf-8') as handle:
        for episode in corpus:
            handle.write(dumps_episode(episode))
            handle.write('\n')
    logger.debug("wrote %d episodes to %s", len(corpus), path)


def _episode_from_record(record, line):
    if not isinstance(record, dict):
        raise CorpusFormatError('expected a JSON object', line=line)
    episode_id = record.get('id')
    missing = [key for key in ('id', 'video_label', 'frame_labels', 'features') if key not in record]
    if missing:
        raise CorpusFormatError(f"missing field(s) {', '.join(missing)}", line=line, record=episode_id)
    try:
        labels = as_frame_labels(record['frame_labels'])
        features = np.asarray(record['features'], dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise CorpusFormatError(str(exc), line=line, record=episode_id) from exc
    if features.ndim != 2 or features.shape[0] != len(labels):
        raise CorpusFormatError(
            f"features have shape {features.shape}, expected {len(labels)} rows",
            line=line, record=episode_id,
        )
    if record['video_label'] not in (0, 1):
        raise CorpusFormatError(f"video_label {record['video_label']!r} is not 0 or 1",
                                line=line, record=episode_id)
    return Episode(id=str(episode_id), features=features, frame_labels=labels,
                   video_label=int(record['video_label']))


def read_corpus(path):
    corpus = []
    with open(path, 'rb') as handle:
        for line_number, raw in enumerate(handle, start=1):
            try:
                line = raw.decode('utf-8')
            except UnicodeDecodeError as exc:
                raise CorpusFormatError(f"invalid UTF-8 at byte {exc.start}", line=line_number,
                                        record=f"#{len(corpus)}") from exc
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON ({exc.msg})", line=line_number,
                                        record=f"#{len(corpus)}") from exc
            corpus.append(_episode_from_record(record, line_number))
    logger.debug("read %d episodes from %s", len(corpus), path)
    return corpus
