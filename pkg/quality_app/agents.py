# quality_app/agents.py
"""The two stochastic policies and their exact gradients.

Subordinate agent: per-frame affine encoder with tanh, a bidirectional gated
recurrence (one logistic update gate per direction) and a logistic head that
gives every frame its selection probability.

Superordinate agent: a temporal convolution over the raw frame features,
mean-pooled into a video descriptor, concatenated with the mean of the
subordinate's recurrent features and mapped to one probability by an affine
logistic head.

Backpropagation is written out by hand. :func:`backward` is linear in the
upstream logit gradients, so a batch of rollouts sharing one forward pass
needs only one backward pass.
"""
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .exceptions import CheckpointError, ConfigurationError, ContractViolation

CHECKPOINT_FORMAT_VERSION = 1
PROB_EPS = 1e-12
STALE_TOLERANCE = 1e-9
INIT_SCALE = 0.1

_DIRECTIONS = ('forward', 'backward')
_GATE_TENSORS = ('update_input', 'update_hidden', 'update_bias',
                 'candidate_input', 'candidate_hidden', 'candidate_bias')


@dataclass(frozen=True)
class Architecture:
    feature_dim: int
    hidden_size: int = 32
    conv_channels: int = 8
    kernel_size: int = 3

    def __post_init__(self):
        errors = {}
        for name in ('feature_dim', 'hidden_size', 'conv_channels', 'kernel_size'):
            if getattr(self, name) < 1:
                errors[name] = ['must be at least 1']
        if self.kernel_size % 2 == 0:
            errors['kernel_size'] = ['must be odd']
        if errors:
            raise ConfigurationError(errors)

    def shapes(self):
        D, H, C, K = self.feature_dim, self.hidden_size, self.conv_channels, self.kernel_size
        shapes = {
            'sub.encoder.weight': (D, H),
            'sub.encoder.bias': (H,),
        }
        for direction in _DIRECTIONS:
            for gate in ('update', 'candidate'):
                shapes[f'sub.{direction}.{gate}_input'] = (H, H)
                shapes[f'sub.{direction}.{gate}_hidden'] = (H, H)
                shapes[f'sub.{direction}.{gate}_bias'] = (H,)
        shapes.update({
            'sub.head.weight': (2 * H,),
            'sub.head.bias': (1,),
            'sup.conv.weight': (K, D, C),
            'sup.conv.bias': (C,),
            'sup.head.video_weight': (C,),
            'sup.head.frame_weight': (2 * H,),
            'sup.head.bias': (1,),
        })
        return shapes

    def to_dict(self):
        return {
            'feature_dim': self.feature_dim,
            'hidden_size': self.hidden_size,
            'conv_channels': self.conv_channels,
            'kernel_size': self.kernel_size,
        }


@dataclass(eq=False)
class PolicyParams:
    """Every learnable tensor of both agents, keyed by dotted name.

    ``sub.*`` tensors belong to the subordinate agent, ``sup.*`` to the
    superordinate one. :meth:`flatten` / :meth:`from_flat` give the flat view
    used by the optimizer and by finite-difference checks.
    """

    architecture: Architecture
    tensors: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, architecture):
        return cls(architecture, {name: np.zeros(shape) for name, shape in architecture.shapes().items()})

    @classmethod
    def initialize(cls, architecture, seed):
        """Weights uniform in [-0.1, 0.1], biases zero."""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in architecture.shapes().items():
            if name.endswith('bias'):
                tensors[name] = np.zeros(shape)
            else:
                tensors[name] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
        return cls(architecture, tensors)

    @classmethod
    def from_flat(cls, architecture, vector):
        vector = np.asarray(vector, dtype=float)
        tensors, offset = {}, 0
        for name, shape in architecture.shapes().items():
            size = int(np.prod(shape))
            tensors[name] = vector[offset:offset + size].reshape(shape).copy()
            offset += size
        if offset != vector.size:
            raise ContractViolation(f"flat vector has {vector.size} entries, expected {offset}")
        return cls(architecture, tensors)

    @property
    def names(self):
        return list(self.architecture.shapes())

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = np.asarray(value, dtype=float).reshape(self.architecture.shapes()[name])

    def size(self):
        return sum(int(np.prod(shape)) for shape in self.architecture.shapes().values())

    def flatten(self):
        return np.concatenate([self.tensors[name].ravel() for name in self.names])

    def copy(self):
        return PolicyParams(self.architecture, {name: value.copy() for name, value in self.tensors.items()})

    def masked(self, prefix):
        """Copy with every tensor outside ``prefix`` zeroed."""
        return PolicyParams(self.architecture, {
            name: value.copy() if name.startswith(prefix) else np.zeros_like(value)
            for name, value in self.tensors.items()
        })

    def blocks(self):
        return self.tensors.items()


@dataclass(eq=False)
class ActionTrace:
    frame_actions: np.ndarray
    frame_probs: np.ndarray
    video_action: int
    video_prob: float
    log_prob_sum: float

    def __eq__(self, other):
        if not isinstance(other, ActionTrace):
            return NotImplemented
        return (
            np.array_equal(self.frame_actions, other.frame_actions)
            and np.array_equal(self.frame_probs, other.frame_probs)
            and self.video_action == other.video_action
            and self.video_prob == other.video_prob
            and self.log_prob_sum == other.log_prob_sum
        )

    @property
    def selected_frames(self):
        """Indices the subordinate agent put into the standard-plane set."""
        return np.flatnonzero(self.frame_actions == 1)

    def recompute_log_prob(self):
        return bernoulli_log_prob(self.frame_actions, self.frame_probs) + \
            bernoulli_log_prob(np.array([self.video_action]), np.array([self.video_prob]))


def bernoulli_log_prob(actions, probs):
    actions = np.asarray(actions)
    probs = np.asarray(probs, dtype=float)
    return float(np.sum(np.where(actions == 1, np.log(probs), np.log1p(-probs))))


def _squash(logits):
    return np.clip(expit(logits), PROB_EPS, 1.0 - PROB_EPS)


@dataclass
class _SubCache:
    features: np.ndarray
    encoded: np.ndarray
    steps: dict
    states: dict
    sub_features: np.ndarray
    frame_probs: np.ndarray


@dataclass
class _SupCache:
    padded: np.ndarray
    conv: np.ndarray
    video_features: np.ndarray
    frame_summary: np.ndarray
    fused: bool
    video_prob: float


@dataclass
class PolicyPass:
    """Forward pass of both agents on one episode, kept for backpropagation."""

    params: PolicyParams
    sub: _SubCache
    sup: _SupCache

    @property
    def frame_probs(self):
        return self.sub.frame_probs

    @property
    def sub_features(self):
        return self.sub.sub_features

    @property
    def video_prob(self):
        return self.sup.video_prob


def _check_features(params, episode):
    features = np.asarray(episode.features, dtype=float)
    expected = params.architecture.feature_dim
    if features.ndim != 2 or features.shape[1] != expected or features.shape[0] < 1:
        raise ContractViolation(
            f"episode {episode.id!r} has features of shape {features.shape}, "
            f"expected (N, {expected}) with N >= 1"
        )
    return features


def _recur(params, direction, encoded):
    """Run one direction of the gated recurrence; returns per-step caches and states."""
    p = {gate: params[f'sub.{direction}.{gate}'] for gate in _GATE_TENSORS}
    n, hidden = encoded.shape
    order = range(n) if direction == 'forward' else range(n - 1, -1, -1)
    states = np.zeros((n, hidden))
    steps = []
    h_prev = np.zeros(hidden)
    for t in order:
        e = encoded[t]
        z = expit(e @ p['update_input'] + h_prev @ p['update_hidden'] + p['update_bias'])
        c = np.tanh(e @ p['candidate_input'] + h_prev @ p['candidate_hidden'] + p['candidate_bias'])
        h = h_prev + z * (c - h_prev)
        steps.append((t, h_prev, z, c))
        states[t] = h
        h_prev = h
    return steps, states


def _sub_pass(params, episode):
    features = _check_features(params, episode)
    encoded = np.tanh(features @ params['sub.encoder.weight'] + params['sub.encoder.bias'])
    steps, states = {}, {}
    for direction in _DIRECTIONS:
        steps[direction], states[direction] = _recur(params, direction, encoded)
    sub_features = np.concatenate([states['forward'], states['backward']], axis=1)
    logits = sub_features @ params['sub.head.weight'] + params['sub.head.bias'][0]
    return _SubCache(features, encoded, steps, states, sub_features, _squash(logits))


def _sup_pass(params, features, sub_features, fused=True):
    arch = params.architecture
    expected = (features.shape[0], 2 * arch.hidden_size)
    if sub_features.shape != expected:
        raise ContractViolation(f"sub_features have shape {sub_features.shape}, expected {expected}")
    if features.shape[1] != arch.feature_dim:
        raise ContractViolation(
            f"features have {features.shape[1]} columns, expected {arch.feature_dim}")
    n = features.shape[0]
    pad = arch.kernel_size // 2
    padded = np.pad(features, ((pad, pad), (0, 0)))
    kernel = params['sup.conv.weight']
    pre = np.full((n, arch.conv_channels), params['sup.conv.bias'], dtype=float)
    for k in range(arch.kernel_size):
        pre += padded[k:k + n] @ kernel[k]
    conv = np.tanh(pre)
    video_features = conv.mean(axis=0)
    frame_summary = sub_features.mean(axis=0) if fused else np.zeros(2 * arch.hidden_size)
    logit = (video_features @ params['sup.head.video_weight']
             + frame_summary @ params['sup.head.frame_weight']
             + params['sup.head.bias'][0])
    return _SupCache(padded, conv, video_features, frame_summary, fused, float(_squash(logit)))


def sub_forward(params, episode):
    """Per-frame selection probabilities and the concatenated recurrent states."""
    cache = _sub_pass(params, episode)
    return cache.frame_probs, cache.sub_features


def sup_forward(params, episode, sub_features):
    """Video-quality probability from the episode and the subordinate features."""
    features = _check_features(params, episode)
    return _sup_pass(params, features, np.asarray(sub_features, dtype=float)).video_prob


def policy_forward(params, episode, fuse_frame_features=True):
    sub = _sub_pass(params, episode)
    sup = _sup_pass(params, sub.features, sub.sub_features, fused=fuse_frame_features)
    return PolicyPass(params, sub, sup)


def sample_actions(frame_probs, video_prob, rng_seed):
    """Independent Bernoulli draws for every frame and for the video."""
    frame_probs = np.asarray(frame_probs, dtype=float)
    rng = np.random.default_rng(rng_seed)
    frame_actions = (rng.random(frame_probs.shape) < frame_probs).astype(np.int8)
    video_action = int(rng.random() < video_prob)
    return _trace(frame_actions, frame_probs, video_action, video_prob)


def greedy_actions(frame_probs, video_prob):
    """Threshold at 0.5; a probability of exactly 0.5 selects."""
    frame_probs = np.asarray(frame_probs, dtype=float)
    frame_actions = (frame_probs >= 0.5).astype(np.int8)
    return _trace(frame_actions, frame_probs, int(video_prob >= 0.5), video_prob)


def _trace(frame_actions, frame_probs, video_action, video_prob):
    video_prob = float(video_prob)
    log_prob = bernoulli_log_prob(frame_actions, frame_probs) + \
        bernoulli_log_prob([video_action], [video_prob])
    return ActionTrace(frame_actions, frame_probs.copy(), video_action, video_prob, log_prob)


def backward(policy_pass, d_frame_logits, d_video_logit):
    """Gradient of a scalar whose derivatives w.r.t. the frame logits and the
    video logit are ``d_frame_logits`` and ``d_video_logit``."""
    params = policy_pass.params
    sub, sup = policy_pass.sub, policy_pass.sup
    arch = params.architecture
    H, K = arch.hidden_size, arch.kernel_size
    n = sub.features.shape[0]
    grad = PolicyParams.zeros(arch)
    d_frame_logits = np.asarray(d_frame_logits, dtype=float)

    # superordinate head
    grad['sup.head.bias'] = [d_video_logit]
    grad['sup.head.video_weight'] = d_video_logit * sup.video_features
    grad['sup.head.frame_weight'] = d_video_logit * sup.frame_summary
    d_conv = np.tile(d_video_logit * params['sup.head.video_weight'] / n, (n, 1))
    d_pre = d_conv * (1.0 - sup.conv ** 2)
    grad['sup.conv.bias'] = d_pre.sum(axis=0)
    d_kernel = np.zeros((K, arch.feature_dim, arch.conv_channels))
    for k in range(K):
        d_kernel[k] = sup.padded[k:k + n].T @ d_pre
    grad['sup.conv.weight'] = d_kernel

    # subordinate head, plus the fused summary when the video head sees it
    grad['sub.head.bias'] = [d_frame_logits.sum()]
    grad['sub.head.weight'] = d_frame_logits @ sub.sub_features
    d_states = np.outer(d_frame_logits, params['sub.head.weight'])
    if sup.fused:
        d_states += d_video_logit * params['sup.head.frame_weight'] / n

    d_encoded = np.zeros_like(sub.encoded)
    for offset, direction in enumerate(_DIRECTIONS):
        d_own = d_states[:, offset * H:(offset + 1) * H]
        _recur_backward(params, grad, direction, sub.steps[direction], sub.encoded, d_own, d_encoded)

    d_enc_pre = d_encoded * (1.0 - sub.encoded ** 2)
    grad['sub.encoder.weight'] = sub.features.T @ d_enc_pre
    grad['sub.encoder.bias'] = d_enc_pre.sum(axis=0)
    return grad


def _recur_backward(params, grad, direction, steps, encoded, d_states, d_encoded):
    p = {gate: params[f'sub.{direction}.{gate}'] for gate in _GATE_TENSORS}
    g = {gate: np.zeros_like(p[gate]) for gate in _GATE_TENSORS}
    d_carry = np.zeros(encoded.shape[1])
    for t, h_prev, z, c in reversed(steps):
        dh = d_states[t] + d_carry
        dz_pre = dh * (c - h_prev) * z * (1.0 - z)
        dc_pre = dh * z * (1.0 - c ** 2)
        e = encoded[t]
        g['update_input'] += np.outer(e, dz_pre)
        g['update_hidden'] += np.outer(h_prev, dz_pre)
        g['update_bias'] += dz_pre
        g['candidate_input'] += np.outer(e, dc_pre)
        g['candidate_hidden'] += np.outer(h_prev, dc_pre)
        g['candidate_bias'] += dc_pre
        d_encoded[t] += p['update_input'] @ dz_pre + p['candidate_input'] @ dc_pre
        d_carry = dh * (1.0 - z) + p['update_hidden'] @ dz_pre + p['candidate_hidden'] @ dc_pre
    for gate in _GATE_TENSORS:
        grad[f'sub.{direction}.{gate}'] = g[gate]


def score_logit_gradients(policy_pass, trace):
    """Gradient of the trace log-probability w.r.t. the logits: action minus probability, per Bernoulli."""
    return (trace.frame_actions - policy_pass.frame_probs,
            trace.video_action - policy_pass.video_prob)


def check_trace(policy_pass, trace):
    if len(trace.frame_probs) != len(policy_pass.frame_probs):
        raise ContractViolation(
            f"trace covers {len(trace.frame_probs)} frames, episode has {len(policy_pass.frame_probs)}")
    drift = max(
        float(np.max(np.abs(policy_pass.frame_probs - trace.frame_probs), initial=0.0)),
        abs(policy_pass.video_prob - trace.video_prob),
    )
    if drift > STALE_TOLERANCE:
        raise ContractViolation(
            f"trace is stale: recomputed probabilities differ by {drift:.3g}")


def log_prob_gradient(params, episode, trace, fuse_frame_features=True):
    """Exact gradient of ``trace.log_prob_sum`` with respect to every parameter."""
    policy_pass = policy_forward(params, episode, fuse_frame_features)
    check_trace(policy_pass, trace)
    return backward(policy_pass, *score_logit_gradients(policy_pass, trace))


def predict_episode(params, episode, fuse_frame_features=True):
    """Greedy inference on one episode."""
    policy_pass = policy_forward(params, episode, fuse_frame_features)
    return greedy_actions(policy_pass.frame_probs, policy_pass.video_prob)


def write_checkpoint(params, path, extra=None):
    document = {
        'format_version': CHECKPOINT_FORMAT_VERSION,
        'architecture': params.architecture.to_dict(),
        'tensors': {
            name: {'shape': list(params[name].shape), 'data': params[name].ravel().tolist()}
            for name in params.names
        },
    }
    if extra:
        document['extra'] = extra
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(document, handle, indent=1)
        handle.write('\n')


def read_checkpoint(path, with_extra=False):
    """Load a checkpoint; with ``with_extra`` also return its free-form metadata."""
    try:
        with open(path, encoding='utf-8') as handle:
            document = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(document, dict):
        raise CheckpointError(f"checkpoint {path} is not a JSON object")
    version = document.get('format_version')
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format_version {version!r}, expected {CHECKPOINT_FORMAT_VERSION}")
    try:
        architecture = Architecture(**document['architecture'])
    except (KeyError, TypeError, ConfigurationError) as exc:
        raise CheckpointError(f"checkpoint architecture is invalid: {exc}") from exc
    params = PolicyParams.zeros(architecture)
    tensors = document.get('tensors', {})
    if not isinstance(tensors, dict):
        raise CheckpointError("checkpoint 'tensors' is not a JSON object")
    for name, shape in architecture.shapes().items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        try:
            found = tuple(tensors[name]['shape'])
            data = tensors[name]['data']
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"tensor {name!r} needs 'shape' and 'data' entries") from exc
        if found != shape:
            raise CheckpointError(f"tensor {name!r}: expected shape {shape}, found {found}")
        try:
            params[name] = np.asarray(data, dtype=float)
        except (ValueError, TypeError) as exc:
            raise CheckpointError(f"tensor {name!r}: {exc}") from exc
    extra = document.get('extra', {})
    if not isinstance(extra, dict):
        raise CheckpointError("checkpoint 'extra' is not a JSON object")
    if with_extra:
        return params, extra
    return params


def check_compatible(params, episode):
    """Raise CheckpointError if the episode's feature width does not fit the policy."""
    found = np.asarray(episode.features).shape[1]
    expected = params.architecture.feature_dim
    if found != expected:
        raise CheckpointError(
            f"checkpoint expects feature_dim {expected}, episode {episode.id!r} has {found}")
