# quality_app/reward.py
"""Reward shaping for frame selection and video rating.

A binary frame-quality track is decomposed into rectangular pulses, each
pulse is widened into a trapezoid (linear ramps of width ``d`` on both sides,
plateau ``a_max``, ``-1`` elsewhere) and the trapezoids are fused by their
pointwise maximum. Selected frames collect the fused value; the video
prediction is scored with a cubic penalty.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import ConfigurationError, ContractViolation


class Pulse(NamedTuple):
    tau: int
    delta_tau: int


@dataclass(frozen=True)
class TrapezoidParams:
    d: float = 5
    a_max: float = 1.0

    def __post_init__(self):
        errors = {}
        if not self.d >= 1:
            errors['d'] = ['ramp width must be at least 1 frame']
        if not self.a_max > 0:
            errors['a_max'] = ['plateau amplitude must be positive']
        if errors:
            raise ConfigurationError(errors)


@dataclass(frozen=True)
class PulseTrain:
    pulses: tuple
    n_frames: int

    @property
    def total(self):
        return len(self.pulses)

    def indicator(self):
        """Rebuild the 0/1 frame track the pulses came from."""
        track = np.zeros(self.n_frames, dtype=np.int8)
        for tau, delta_tau in self.pulses:
            track[tau:tau + delta_tau + 1] = 1
        return track


@dataclass(frozen=True)
class RewardProfile:
    values: np.ndarray

    def __len__(self):
        return len(self.values)


def as_frame_labels(values):
    """Validate a 0/1 frame track and return it as an int8 array.

    The error message names the first offending index.
    """
    labels = np.asarray(values)
    if labels.ndim != 1 or labels.size == 0:
        raise ContractViolation('frame labels must be a non-empty 1-d sequence')
    bad = np.flatnonzero((labels != 0) & (labels != 1))
    if bad.size:
        index = int(bad[0])
        raise ContractViolation(f"frame label at index {index} is {labels[index]!r}, expected 0 or 1")
    return labels.astype(np.int8)


def pulses_from_labels(labels):
    """One pulse per maximal run of 1s: a run over frames f..l gives (f, l - f)."""
    labels = as_frame_labels(labels)
    padded = np.concatenate(([0], labels, [0])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    pulses = tuple(Pulse(int(f), int(l - f)) for f, l in zip(starts, stops))
    return PulseTrain(pulses=pulses, n_frames=len(labels))


def trapezoid_value(id, tau, delta_tau, params):
    """Trapezoidal wave around one pulse, evaluated at frame ``id``."""
    d, a_max = params.d, params.a_max
    if tau - d <= id <= tau:
        return a_max / d * (id - tau + d)
    if tau <= id <= tau + delta_tau:
        return a_max
    if tau + delta_tau <= id <= tau + delta_tau + d:
        return a_max / d * (tau + delta_tau + d - id)
    return -1.0


def trapezoid_wave(ids, tau, delta_tau, params):
    """Vectorised :func:`trapezoid_value` over an array of frame ids."""
    d, a_max = params.d, params.a_max
    ids = np.asarray(ids, dtype=float)
    conditions = [
        (tau - d <= ids) & (ids <= tau),
        (tau <= ids) & (ids <= tau + delta_tau),
        (tau + delta_tau <= ids) & (ids <= tau + delta_tau + d),
    ]
    choices = [
        a_max / d * (ids - tau + d),
        np.full_like(ids, a_max),
        a_max / d * (tau + delta_tau + d - ids),
    ]
    return np.select(conditions, choices, default=-1.0)


def envelope_profile(pulses, n, params):
    """Pointwise maximum of every pulse's trapezoid over frames 0..n-1."""
    for tau, delta_tau in pulses.pulses:
        if tau < 0 or tau + delta_tau > n - 1:
            raise ContractViolation(f"pulse ({tau}, {delta_tau}) lies outside frames 0..{n - 1}")
    ids = np.arange(n)
    values = np.full(n, -1.0)
    for tau, delta_tau in pulses.pulses:
        np.maximum(values, trapezoid_wave(ids, tau, delta_tau, params), out=values)
    return RewardProfile(values=values)


def profile_from_labels(labels, params):
    labels = as_frame_labels(labels)
    return envelope_profile(pulses_from_labels(labels), len(labels), params)


def frame_reward(actions, profile):
    """R_sub: mean over all frames of action times envelope value."""
    actions = np.asarray(actions, dtype=float)
    values = profile.values if isinstance(profile, RewardProfile) else np.asarray(profile, dtype=float)
    if actions.shape != values.shape or actions.ndim != 1:
        raise ContractViolation(f"actions have shape {actions.shape}, profile has shape {values.shape}")
    if actions.size == 0:
        raise ContractViolation('frame reward needs at least one frame')
    return float(np.dot(actions, values) / actions.size)


def expected_frame_reward(frame_probs, profile):
    """Mean R_sub of a policy selecting frame i with probability p_i."""
    return frame_reward(frame_probs, profile)


def video_reward(q_hat, q_v):
    """R_sup: cubic penalty on the video-quality prediction."""
    if not 0.0 <= q_hat <= 1.0:
        raise ContractViolation(f"video prediction {q_hat!r} is outside [0, 1]")
    if q_v not in (0, 1):
        raise ContractViolation(f"video label {q_v!r} is not 0 or 1")
    return -abs(q_hat - q_v) ** 3


def video_reward_slope(q_hat, q_v):
    """d R_sup / d q_hat."""
    diff = q_hat - q_v
    return -3.0 * diff * abs(diff)


def total_reward(r_sub, r_sup, beta):
    return r_sub + beta * r_sup
