# quality_app/trainer.py
"""Policy-gradient training: subordinate warm-up, then joint training of both agents.

Each update rolls out ``episodes_per_update`` sampled action traces on one
episode, weights their score-function gradients by ``R_total - baseline``,
averages them, adds the pathwise derivative of the cubic video reward and
takes one momentum-SGD ascent step. An epoch is one pass over the corpus in
a seeded order; the learning rate halves (by default) every 30 epochs.
"""
import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .agents import (Architecture, PolicyParams, backward, policy_forward, sample_actions,
                     score_logit_gradients)
from .exceptions import ConfigurationError, ContractViolation, NonFiniteGradient
from .reward import (TrapezoidParams, frame_reward, profile_from_labels, total_reward,
                     video_reward, video_reward_slope)

logger = logging.getLogger(__name__)

PRETRAIN = 'pretrain'
JOINT = 'joint'
_PHASE_CODES = {PRETRAIN: 1, JOINT: 2}
TRAIN_LOG_HEADER = ('epoch', 'r_sub', 'r_sup', 'r_total', 'lr', 'baseline', 'seconds')


@dataclass(frozen=True)
class TrainConfig:
    episodes_per_update: int = 5
    learning_rate: float = 1e-5
    momentum: float = 0.9
    lr_decay_factor: float = 0.5
    lr_decay_every: int = 30
    beta: float = 1.0
    pretrain_epochs: int = 30
    joint_epochs: int = 90
    baseline_momentum: float = 0.9
    seed: int = 0
    ramp_width: float = 5
    amplitude: float = 1.0
    hidden_size: int = 32
    conv_channels: int = 8
    kernel_size: int = 3
    supervised_warmup: bool = False
    max_grad_norm: float = None
    pathwise_sup: bool = True
    fuse_frame_features: bool = True

    def __post_init__(self):
        errors = {}
        if self.episodes_per_update < 1:
            errors['episodes_per_update'] = ['must be at least 1']
        if not self.learning_rate >= 0:
            errors['learning_rate'] = ['must be non-negative']
        if not 0 <= self.momentum < 1:
            errors['momentum'] = ['must lie in [0, 1)']
        if not 0 < self.lr_decay_factor <= 1:
            errors['lr_decay_factor'] = ['must lie in (0, 1]']
        if self.lr_decay_every < 1:
            errors['lr_decay_every'] = ['must be at least 1']
        if not self.beta >= 0:
            errors['beta'] = ['must be non-negative']
        if self.pretrain_epochs < 0:
            errors['pretrain_epochs'] = ['must be non-negative']
        if self.joint_epochs < 0:
            errors['joint_epochs'] = ['must be non-negative']
        if not 0 <= self.baseline_momentum < 1:
            errors['baseline_momentum'] = ['must lie in [0, 1)']
        if not 0 <= self.seed < 2 ** 64:
            errors['seed'] = ['must be a 64-bit unsigned integer']
        if self.max_grad_norm is not None and not self.max_grad_norm > 0:
            errors['max_grad_norm'] = ['must be positive when set']
        if errors:
            raise ConfigurationError(errors)
        TrapezoidParams(d=self.ramp_width, a_max=self.amplitude)

    @property
    def trapezoid(self):
        return TrapezoidParams(d=self.ramp_width, a_max=self.amplitude)

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        data = self.to_dict()
        data.update(changes)
        return TrainConfig(**data)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    r_sub: float
    r_sup: float
    r_total: float
    lr: float
    baseline: float
    seconds: float


@dataclass
class TrainLog:
    phase: str
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(record, name) for record in self.records]

    def write_csv(self, handle, include_timings=False):
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(TRAIN_LOG_HEADER)
        for record in self.records:
            row = [record.epoch] + [repr(getattr(record, name)) for name in TRAIN_LOG_HEADER[1:-1]]
            row.append(f"{record.seconds:.3f}" if include_timings else '')
            writer.writerow(row)


@dataclass(frozen=True)
class RolloutReward:
    r_sub: float
    r_sup: float
    r_total: float


@dataclass
class OptimizerState:
    velocity: np.ndarray


def learning_rate_at(config, epoch):
    return config.learning_rate * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def update_step(params, gradient, optimizer_state, lr, momentum):
    """Momentum ascent: v <- m*v + g; theta <- theta + lr*v."""
    flat_grad = gradient.flatten() if isinstance(gradient, PolicyParams) else np.asarray(gradient, dtype=float)
    flat_params = params.flatten()
    if flat_grad.shape != flat_params.shape:
        raise ContractViolation(
            f"gradient has {flat_grad.size} entries, parameters have {flat_params.size}")
    velocity = np.zeros_like(flat_params) if optimizer_state is None else optimizer_state.velocity
    if velocity.shape != flat_params.shape:
        raise ContractViolation(
            f"optimizer velocity has {velocity.size} entries, parameters have {flat_params.size}")
    velocity = momentum * velocity + flat_grad
    updated = PolicyParams.from_flat(params.architecture, flat_params + lr * velocity)
    return updated, OptimizerState(velocity)


def estimate_gradient(params, episode, profile, config, rollout_seeds, baseline=None, beta=None):
    """Ascent direction for one episode averaged over the sampled rollouts.

    With ``baseline=None`` the mean reward of these rollouts is used.
    Returns ``(gradient, [RolloutReward, ...])``.
    """
    beta = config.beta if beta is None else beta
    policy_pass = policy_forward(params, episode, config.fuse_frame_features)
    q_hat = policy_pass.video_prob
    r_sup = video_reward(q_hat, episode.video_label)
    traces, rewards = [], []
    for seed in rollout_seeds:
        trace = sample_actions(policy_pass.frame_probs, q_hat, seed)
        r_sub = frame_reward(trace.frame_actions, profile)
        traces.append(trace)
        rewards.append(RolloutReward(r_sub, r_sup, total_reward(r_sub, r_sup, beta)))
    if baseline is None:
        baseline = float(np.mean([reward.r_total for reward in rewards]))

    d_frames = np.zeros(len(policy_pass.frame_probs))
    d_video = 0.0
    for trace, reward in zip(traces, rewards):
        frame_score, video_score = score_logit_gradients(policy_pass, trace)
        advantage = reward.r_total - baseline
        d_frames += advantage * frame_score
        d_video += advantage * video_score
    d_frames /= len(traces)
    d_video /= len(traces)
    if config.pathwise_sup and beta:
        d_video += beta * video_reward_slope(q_hat, episode.video_label) * q_hat * (1.0 - q_hat)
    return backward(policy_pass, d_frames, d_video), rewards


def supervised_gradient(params, episode, config):
    """Mean per-frame log-likelihood gradient of the frame labels (warm-up option)."""
    policy_pass = policy_forward(params, episode, config.fuse_frame_features)
    d_frames = (episode.frame_labels - policy_pass.frame_probs) / len(episode.frame_labels)
    return backward(policy_pass, d_frames, 0.0)


def check_finite(gradient):
    for name, value in gradient.blocks():
        if not np.all(np.isfinite(value)):
            raise NonFiniteGradient(name)


def clip_gradient(gradient, max_norm):
    norm = float(np.linalg.norm(gradient.flatten()))
    if max_norm is None or norm <= max_norm:
        return gradient
    scale = max_norm / norm
    return PolicyParams(gradient.architecture, {name: value * scale for name, value in gradient.blocks()})


def _run_phase(params, corpus, config, phase, epochs, beta, trainable_prefix, on_epoch):
    if not corpus:
        raise ConfigurationError({'corpus': ['training corpus is empty']})
    trapezoid = config.trapezoid
    profiles = [profile_from_labels(episode.frame_labels, trapezoid) for episode in corpus]
    phase_code = _PHASE_CODES[phase]
    state = None
    baseline = None
    log = TrainLog(phase)
    for epoch in range(epochs):
        started = time.perf_counter()
        lr = learning_rate_at(config, epoch)
        order = np.random.default_rng([config.seed, phase_code, epoch]).permutation(len(corpus))
        epoch_rewards = []
        for position in order:
            episode, profile = corpus[position], profiles[position]
            seeds = [[config.seed, phase_code, epoch, int(position), rollout]
                     for rollout in range(config.episodes_per_update)]
            gradient, rewards = estimate_gradient(params, episode, profile, config, seeds,
                                                  baseline=baseline, beta=beta)
            if phase == PRETRAIN and config.supervised_warmup:
                gradient = supervised_gradient(params, episode, config)
            if trainable_prefix:
                gradient = gradient.masked(trainable_prefix)
            check_finite(gradient)
            gradient = clip_gradient(gradient, config.max_grad_norm)
            params, state = update_step(params, gradient, state, lr, config.momentum)

            mean_total = float(np.mean([reward.r_total for reward in rewards]))
            if baseline is None:
                baseline = mean_total
            else:
                baseline = config.baseline_momentum * baseline + (1.0 - config.baseline_momentum) * mean_total
            epoch_rewards.extend(rewards)

        record = EpochRecord(
            epoch=epoch,
            r_sub=float(np.mean([reward.r_sub for reward in epoch_rewards])),
            r_sup=float(np.mean([reward.r_sup for reward in epoch_rewards])),
            r_total=float(np.mean([reward.r_total for reward in epoch_rewards])),
            lr=lr,
            baseline=baseline,
            seconds=time.perf_counter() - started,
        )
        log.records.append(record)
        logger.info("%s epoch %d: r_sub=%.4f r_sup=%.4f r_total=%.4f lr=%g baseline=%.4f",
                    phase, epoch, record.r_sub, record.r_sup, record.r_total, lr, baseline)
        if on_epoch is not None:
            on_epoch(phase, epoch, params, record)
    return params, log


def pretrain_sub(params, corpus, config, on_epoch=None):
    """Warm up the subordinate agent on R_sub alone; superordinate weights stay fixed."""
    return _run_phase(params, corpus, config, PRETRAIN, config.pretrain_epochs,
                      beta=0.0, trainable_prefix='sub.', on_epoch=on_epoch)


def train_joint(params, corpus, config, on_epoch=None):
    """Train both agents end to end against R_total = R_sub + beta * R_sup."""
    return _run_phase(params, corpus, config, JOINT, config.joint_epochs,
                      beta=config.beta, trainable_prefix=None, on_epoch=on_epoch)


def train(params, corpus, config, on_epoch=None):
    """Both phases in order; returns ``(params, pretrain_log, joint_log)``."""
    params, pretrain_log = pretrain_sub(params, corpus, config, on_epoch)
    params, joint_log = train_joint(params, corpus, config, on_epoch)
    return params, pretrain_log, joint_log


def initial_params(config, feature_dim):
    architecture = Architecture(feature_dim=feature_dim, hidden_size=config.hidden_size,
                                conv_channels=config.conv_channels, kernel_size=config.kernel_size)
    return PolicyParams.initialize(architecture, config.seed)
