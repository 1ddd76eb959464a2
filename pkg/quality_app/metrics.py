# quality_app/metrics.py
"""Frame- and video-level classification metrics (ACC, SEN, SPE, PRE, F1, AUC)."""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .agents import predict_episode
from .exceptions import ContractViolation, UndefinedAUC

logger = logging.getLogger(__name__)

METRIC_NAMES = ('acc', 'sen', 'spe', 'pre', 'f1', 'auc')


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    level: str
    n_items: int
    acc: float
    sen: float
    spe: float
    pre: float
    f1: float
    auc: float = None
    degenerate: list = field(default_factory=list)
    averaging: str = 'micro'

    def to_dict(self):
        """Percentages rounded to two decimals next to the raw fractions."""
        raw = {name: getattr(self, name) for name in METRIC_NAMES}
        return {
            'level': self.level,
            'n_items': self.n_items,
            'averaging': self.averaging,
            'percent': {name: None if value is None else round(100.0 * value, 2)
                        for name, value in raw.items()},
            'raw': raw,
            'degenerate': list(self.degenerate),
        }


def _binary(values, name):
    array = np.asarray(values)
    if array.ndim != 1:
        raise ContractViolation(f"{name} must be a 1-d sequence")
    if np.any((array != 0) & (array != 1)):
        raise ContractViolation(f"{name} must contain only 0 and 1")
    return array.astype(np.int8)


def confusion(predictions, labels):
    predictions = _binary(predictions, 'predictions')
    labels = _binary(labels, 'labels')
    if predictions.shape != labels.shape:
        raise ContractViolation(f"{len(predictions)} predictions for {len(labels)} labels")
    if predictions.size == 0:
        raise ContractViolation('confusion needs at least one item')
    return ConfusionCounts(
        tp=int(np.sum((predictions == 1) & (labels == 1))),
        fp=int(np.sum((predictions == 1) & (labels == 0))),
        tn=int(np.sum((predictions == 0) & (labels == 0))),
        fn=int(np.sum((predictions == 0) & (labels == 1))),
    )


def _ratio(numerator, denominator, name, degenerate):
    if denominator == 0:
        degenerate.append(name)
        return 0.0
    return numerator / denominator


def metrics_from_confusion(counts):
    """Return ``(acc, sen, spe, pre, f1, degenerate)``; zero denominators give 0 and are listed."""
    if counts.total <= 0:
        raise ContractViolation('metrics need at least one evaluated item')
    degenerate = []
    acc = (counts.tp + counts.tn) / counts.total
    sen = _ratio(counts.tp, counts.tp + counts.fn, 'sen', degenerate)
    spe = _ratio(counts.tn, counts.tn + counts.fp, 'spe', degenerate)
    pre = _ratio(counts.tp, counts.tp + counts.fp, 'pre', degenerate)
    f1 = _ratio(2 * pre * sen, pre + sen, 'f1', degenerate)
    return acc, sen, spe, pre, f1, degenerate


def _scored(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = _binary(labels, 'labels')
    if scores.shape != labels.shape:
        raise ContractViolation(f"{len(scores)} scores for {len(labels)} labels")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUC('AUC is undefined when only one class is present')
    return scores, labels, n_pos, n_neg


def auc(scores, labels):
    """Mann-Whitney AUC: share of positive/negative pairs ranked correctly, ties count half."""
    scores, labels, n_pos, n_neg = _scored(scores, labels)
    ranks = rankdata(scores)
    u_statistic = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def roc_area(scores, labels):
    """Area under the ROC curve by trapezoidal integration over distinct thresholds."""
    scores, labels, n_pos, n_neg = _scored(scores, labels)
    order = np.argsort(-scores, kind='mergesort')
    scores, labels = scores[order], labels[order]
    # one ROC point per distinct score, so tied items move the curve diagonally
    last_of_group = np.r_[np.flatnonzero(np.diff(scores)), len(scores) - 1]
    tps = np.cumsum(labels)[last_of_group]
    fps = (last_of_group + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def build_report(level, predictions, labels, scores):
    counts = confusion(predictions, labels)
    acc, sen, spe, pre, f1, degenerate = metrics_from_confusion(counts)
    try:
        area = auc(scores, labels)
    except UndefinedAUC:
        area = None
        degenerate.append('auc')
    if degenerate:
        logger.warning("%s-level metrics with degenerate denominators: %s", level, ', '.join(degenerate))
    return MetricsReport(level=level, n_items=counts.total, acc=acc, sen=sen, spe=spe,
                         pre=pre, f1=f1, auc=area, degenerate=degenerate)


def predict_corpus(params, corpus, fuse_frame_features=True):
    """Greedy inference per episode: ``[(episode, frame_probs, video_prob, trace), ...]``."""
    if not corpus:
        raise ContractViolation('cannot evaluate an empty corpus')
    predictions = []
    for episode in corpus:
        trace = predict_episode(params, episode, fuse_frame_features)
        predictions.append((episode, trace.frame_probs, trace.video_prob, trace))
    return predictions


def reports_from_predictions(predictions):
    frame_actions = np.concatenate([trace.frame_actions for _, _, _, trace in predictions])
    frame_labels = np.concatenate([episode.frame_labels for episode, _, _, _ in predictions])
    frame_scores = np.concatenate([probs for _, probs, _, _ in predictions])
    video_actions = [trace.video_action for _, _, _, trace in predictions]
    video_labels = [episode.video_label for episode, _, _, _ in predictions]
    video_scores = [video_prob for _, _, video_prob, _ in predictions]
    return (
        build_report('frame', frame_actions, frame_labels, frame_scores),
        build_report('video', video_actions, video_labels, video_scores),
    )


def evaluate_corpus(params, corpus, fuse_frame_features=True):
    """Frame metrics pooled over every frame of every episode; video metrics one per episode."""
    return reports_from_predictions(predict_corpus(params, corpus, fuse_frame_features))
