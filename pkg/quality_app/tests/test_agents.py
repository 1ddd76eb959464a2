import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from quality_app.agents import (ActionTrace, Architecture, PolicyParams, backward, bernoulli_log_prob,
                                check_compatible, greedy_actions, log_prob_gradient, policy_forward,
                                predict_episode, read_checkpoint, sample_actions, sub_forward,
                                sup_forward, write_checkpoint)
from quality_app.exceptions import CheckpointError, ConfigurationError, ContractViolation
from quality_app.reward import video_reward, video_reward_slope
from quality_app.simulation import Episode

TINY = Architecture(feature_dim=3, hidden_size=4, conv_channels=2, kernel_size=3)


def make_episode(n_frames, feature_dim=3, seed=0, episode_id='ep'):
    rng = np.random.default_rng(seed)
    labels = (rng.random(n_frames) < 0.4).astype(np.int8)
    return Episode(id=episode_id, features=rng.standard_normal((n_frames, feature_dim)),
                   frame_labels=labels, video_label=int(labels.mean() >= 0.2))


def scaled_params(architecture=TINY, seed=1, scale=8.0):
    """Random weights large enough that every nonlinearity is exercised."""
    params = PolicyParams.initialize(architecture, seed)
    rng = np.random.default_rng(seed + 100)
    vector = params.flatten() * scale + rng.uniform(-0.2, 0.2, params.size())
    return PolicyParams.from_flat(architecture, vector)


def swap_directions(params):
    swapped = params.copy()
    for name in params.names:
        if name.startswith('sub.forward.'):
            partner = name.replace('sub.forward.', 'sub.backward.')
            swapped[name], swapped[partner] = params[partner], params[name]
    half = params.architecture.hidden_size
    head = params['sub.head.weight']
    swapped['sub.head.weight'] = np.concatenate([head[half:], head[:half]])
    return swapped


def numeric_gradient(objective, params, step=1e-5):
    base = params.flatten()
    grad = np.zeros_like(base)
    for i in range(base.size):
        plus, minus = base.copy(), base.copy()
        plus[i] += step
        minus[i] -= step
        grad[i] = (objective(PolicyParams.from_flat(params.architecture, plus))
                   - objective(PolicyParams.from_flat(params.architecture, minus))) / (2 * step)
    return grad


class ArchitectureTests(SimpleTestCase):

    def test_even_kernel_rejected(self):
        with self.assertRaises(ConfigurationError) as ctx:
            Architecture(feature_dim=3, kernel_size=4)
        self.assertIn('kernel_size', ctx.exception.field_errors)

    def test_initialization(self):
        params = PolicyParams.initialize(TINY, 5)
        for name, value in params.blocks():
            if name.endswith('bias'):
                self.assertFalse(value.any(), name)
            else:
                self.assertTrue(np.all(np.abs(value) <= 0.1), name)
        np.testing.assert_array_equal(params.flatten(), PolicyParams.initialize(TINY, 5).flatten())

    def test_flat_round_trip(self):
        params = scaled_params()
        again = PolicyParams.from_flat(TINY, params.flatten())
        for name in params.names:
            np.testing.assert_array_equal(again[name], params[name])

    def test_flat_vector_of_wrong_size(self):
        with self.assertRaises(ContractViolation):
            PolicyParams.from_flat(TINY, np.zeros(PolicyParams.zeros(TINY).size() + 1))


class SubordinateForwardTests(SimpleTestCase):

    def test_zero_weights_give_even_odds(self):
        probs, features = sub_forward(PolicyParams.zeros(TINY), make_episode(9))
        np.testing.assert_array_equal(probs, np.full(9, 0.5))
        self.assertEqual(features.shape, (9, 8))

    def test_reversal_with_swapped_directions(self):
        params = scaled_params()
        episode = make_episode(11, seed=3)
        reversed_episode = Episode('rev', episode.features[::-1].copy(), episode.frame_labels[::-1].copy(),
                                   episode.video_label)
        probs, _ = sub_forward(params, episode)
        reversed_probs, _ = sub_forward(swap_directions(params), reversed_episode)
        np.testing.assert_allclose(reversed_probs, probs[::-1], rtol=0, atol=1e-12)

    def test_single_frame_sees_one_step_per_direction(self):
        params = scaled_params()
        episode = make_episode(1, seed=4)
        _, features = sub_forward(params, episode)
        encoded = np.tanh(episode.features[0] @ params['sub.encoder.weight'] + params['sub.encoder.bias'])
        for offset, direction in enumerate(('forward', 'backward')):
            z = 1.0 / (1.0 + np.exp(-(encoded @ params[f'sub.{direction}.update_input']
                                      + params[f'sub.{direction}.update_bias'])))
            c = np.tanh(encoded @ params[f'sub.{direction}.candidate_input']
                        + params[f'sub.{direction}.candidate_bias'])
            np.testing.assert_allclose(features[0, offset * 4:(offset + 1) * 4], z * c, atol=1e-12)

    def test_frame_order_matters(self):
        params = scaled_params()
        episode = make_episode(12, seed=6)
        order = np.random.default_rng(0).permutation(12)
        shuffled = Episode('shuffled', episode.features[order], episode.frame_labels[order], episode.video_label)
        probs, _ = sub_forward(params, episode)
        shuffled_probs, _ = sub_forward(params, shuffled)
        self.assertFalse(np.allclose(shuffled_probs, probs[order], atol=1e-8))

    def test_feature_width_mismatch(self):
        with self.assertRaises(ContractViolation):
            sub_forward(PolicyParams.zeros(TINY), make_episode(5, feature_dim=4))


class SuperordinateForwardTests(SimpleTestCase):

    def test_zero_weights_give_even_odds(self):
        episode = make_episode(7)
        self.assertEqual(sup_forward(PolicyParams.zeros(TINY), episode, np.zeros((7, 8))), 0.5)

    def test_unfused_head_ignores_frame_features(self):
        params = scaled_params()
        params['sup.head.frame_weight'] = np.zeros(8)
        episode = make_episode(10, seed=2)
        _, features = sub_forward(params, episode)
        noise = np.random.default_rng(1).standard_normal(features.shape)
        self.assertEqual(sup_forward(params, episode, features), sup_forward(params, episode, features + noise))

    def test_fusion_switch(self):
        params = scaled_params()
        episode = make_episode(10, seed=2)
        fused = policy_forward(params, episode).video_prob
        unfused = policy_forward(params, episode, fuse_frame_features=False).video_prob
        self.assertNotAlmostEqual(fused, unfused, places=6)
        params['sup.head.frame_weight'] = np.zeros(8)
        self.assertEqual(policy_forward(params, episode).video_prob,
                         policy_forward(params, episode, fuse_frame_features=False).video_prob)

    def test_sub_feature_shape_checked(self):
        with self.assertRaises(ContractViolation):
            sup_forward(PolicyParams.zeros(TINY), make_episode(7), np.zeros((6, 8)))


class ActionTests(SimpleTestCase):

    def test_sampling_frequency(self):
        trace = sample_actions(np.full(10000, 0.3), 0.5, rng_seed=42)
        self.assertAlmostEqual(trace.frame_actions.mean(), 0.3, delta=0.02)

    def test_near_certain_probabilities(self):
        probs = np.full(50, 1.0 - 1e-12)
        first = sample_actions(probs, 1.0 - 1e-12, rng_seed=[1, 2])
        self.assertTrue(np.all(first.frame_actions == 1))
        self.assertEqual(first, sample_actions(probs, 1.0 - 1e-12, rng_seed=[1, 2]))

    def test_log_prob_sum(self):
        trace = ActionTrace(np.array([1, 0]), np.array([0.5, 0.5]), 1, 0.5,
                            bernoulli_log_prob([1, 0], [0.5, 0.5]) + bernoulli_log_prob([1], [0.5]))
        self.assertAlmostEqual(trace.log_prob_sum, 3 * math.log(0.5), places=12)
        self.assertAlmostEqual(trace.recompute_log_prob(), 3 * math.log(0.5), places=12)

    def test_sampled_trace_log_prob_is_consistent(self):
        trace = sample_actions(np.array([0.2, 0.7, 0.9]), 0.4, rng_seed=7)
        self.assertAlmostEqual(trace.log_prob_sum, trace.recompute_log_prob(), places=12)

    def test_greedy_threshold(self):
        np.testing.assert_array_equal(greedy_actions([0.49, 0.51], 0.2).frame_actions, [0, 1])
        tie = greedy_actions([0.5, 0.5], 0.5)
        np.testing.assert_array_equal(tie.frame_actions, [1, 1])
        self.assertEqual(tie.video_action, 1)
        self.assertFalse(greedy_actions(np.full(4, 0.5 - 1e-9), 0.1).frame_actions.any())

    def test_selected_frames(self):
        trace = greedy_actions([0.9, 0.1, 0.6, 0.2], 0.3)
        np.testing.assert_array_equal(trace.selected_frames, [0, 2])

    def test_predict_episode_is_greedy(self):
        params = scaled_params()
        episode = make_episode(6, seed=8)
        trace = predict_episode(params, episode)
        policy_pass = policy_forward(params, episode)
        np.testing.assert_array_equal(trace.frame_actions, (policy_pass.frame_probs >= 0.5).astype(int))
        self.assertEqual(trace.video_action, int(policy_pass.video_prob >= 0.5))


class GradientTests(SimpleTestCase):

    def assert_gradients_match(self, analytic, numeric):
        np.testing.assert_allclose(analytic.flatten(), numeric, rtol=1e-4, atol=1e-7)

    def test_log_prob_gradient_matches_finite_differences(self):
        episode = make_episode(6, seed=9)
        for fuse in (True, False):
            params = scaled_params(seed=2)
            trace = sample_actions(policy_forward(params, episode, fuse).frame_probs,
                                   policy_forward(params, episode, fuse).video_prob, rng_seed=3)

            def log_prob(candidate):
                policy_pass = policy_forward(candidate, episode, fuse)
                return (bernoulli_log_prob(trace.frame_actions, policy_pass.frame_probs)
                        + bernoulli_log_prob([trace.video_action], [policy_pass.video_prob]))

            with self.subTest(fuse=fuse):
                self.assert_gradients_match(log_prob_gradient(params, episode, trace, fuse),
                                            numeric_gradient(log_prob, params))

    def test_log_prob_gradient_on_random_instances(self):
        rng = np.random.default_rng(21)
        for instance in range(24):
            architecture = Architecture(feature_dim=int(rng.integers(1, 5)), hidden_size=int(rng.integers(1, 5)),
                                        conv_channels=int(rng.integers(1, 4)),
                                        kernel_size=int(rng.choice([1, 3])))
            n_frames = int(rng.integers(1, 9))
            fuse = bool(instance % 2)
            params = scaled_params(architecture, seed=30 + instance)
            episode = make_episode(n_frames, architecture.feature_dim, seed=60 + instance)
            policy_pass = policy_forward(params, episode, fuse)
            trace = sample_actions(policy_pass.frame_probs, policy_pass.video_prob, rng_seed=instance)

            def log_prob(candidate):
                candidate_pass = policy_forward(candidate, episode, fuse)
                return (bernoulli_log_prob(trace.frame_actions, candidate_pass.frame_probs)
                        + bernoulli_log_prob([trace.video_action], [candidate_pass.video_prob]))

            with self.subTest(instance=instance, architecture=architecture, n_frames=n_frames, fuse=fuse):
                self.assert_gradients_match(log_prob_gradient(params, episode, trace, fuse),
                                            numeric_gradient(log_prob, params))

    def test_pathwise_video_reward_gradient(self):
        params = scaled_params(seed=4)
        episode = make_episode(5, seed=10)
        policy_pass = policy_forward(params, episode)
        q_hat = policy_pass.video_prob
        d_video = video_reward_slope(q_hat, 1) * q_hat * (1.0 - q_hat)
        analytic = backward(policy_pass, np.zeros(5), d_video)
        numeric = numeric_gradient(lambda p: video_reward(policy_forward(p, episode).video_prob, 1), params)
        self.assert_gradients_match(analytic, numeric)

    def test_backward_is_linear_in_upstream(self):
        params = scaled_params(seed=5)
        policy_pass = policy_forward(params, make_episode(7, seed=11))
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(7), rng.standard_normal(7)
        combined = backward(policy_pass, 2.0 * a - b, 0.7)
        separate = 2.0 * backward(policy_pass, a, 0.5).flatten() - backward(policy_pass, b, 0.3).flatten()
        np.testing.assert_allclose(combined.flatten(), separate, atol=1e-12)

    def test_symmetric_episode_gives_paired_gradients(self):
        params = scaled_params(seed=6)
        for name in params.names:
            if name.startswith('sub.forward.'):
                params[name.replace('sub.forward.', 'sub.backward.')] = params[name]
        head = params['sub.head.weight']
        params['sub.head.weight'] = np.concatenate([head[:4], head[:4]])
        half = np.random.default_rng(1).standard_normal((4, 3))
        features = np.concatenate([half, half[::-1]])
        episode = Episode('palindrome', features, np.zeros(8, dtype=np.int8), 0)
        policy_pass = policy_forward(params, episode, fuse_frame_features=False)
        trace = greedy_actions(policy_pass.frame_probs, policy_pass.video_prob)
        grad = log_prob_gradient(params, episode, trace, fuse_frame_features=False)
        for name in params.names:
            if name.startswith('sub.forward.'):
                np.testing.assert_allclose(grad[name], grad[name.replace('sub.forward.', 'sub.backward.')],
                                           atol=1e-12, err_msg=name)
        np.testing.assert_allclose(grad['sub.head.weight'][:4], grad['sub.head.weight'][4:], atol=1e-12)

    def test_unfused_video_action_does_not_reach_subordinate(self):
        params = scaled_params(seed=7)
        params['sup.head.frame_weight'] = np.zeros(8)
        episode = make_episode(6, seed=12)
        policy_pass = policy_forward(params, episode)
        frame_actions = (policy_pass.frame_probs > 0.5).astype(np.int8)
        gradients = []
        for video_action in (0, 1):
            log_prob = (bernoulli_log_prob(frame_actions, policy_pass.frame_probs)
                        + bernoulli_log_prob([video_action], [policy_pass.video_prob]))
            trace = ActionTrace(frame_actions, policy_pass.frame_probs.copy(), video_action,
                                policy_pass.video_prob, log_prob)
            gradients.append(log_prob_gradient(params, episode, trace))
        for name in params.names:
            if name.startswith('sub.'):
                np.testing.assert_array_equal(gradients[0][name], gradients[1][name], err_msg=name)
        self.assertFalse(np.array_equal(gradients[0]['sup.head.bias'], gradients[1]['sup.head.bias']))

    def test_stale_trace_rejected(self):
        params = scaled_params(seed=8)
        episode = make_episode(5, seed=13)
        trace = predict_episode(params, episode)
        params['sub.head.bias'] = params['sub.head.bias'] + 0.1
        with self.assertRaisesMessage(ContractViolation, 'stale'):
            log_prob_gradient(params, episode, trace)

    def test_trace_length_mismatch(self):
        params = scaled_params()
        trace = predict_episode(params, make_episode(5))
        with self.assertRaises(ContractViolation):
            log_prob_gradient(params, make_episode(6), trace)


class CheckpointTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / 'checkpoint.json'

    def test_round_trip(self):
        params = scaled_params()
        write_checkpoint(params, self.path, extra={'beta': 0.0})
        loaded, extra = read_checkpoint(self.path, with_extra=True)
        self.assertEqual(loaded.architecture, TINY)
        np.testing.assert_array_equal(loaded.flatten(), params.flatten())
        self.assertEqual(extra, {'beta': 0.0})

    def test_incompatible_episode(self):
        write_checkpoint(PolicyParams.zeros(TINY), self.path)
        params = read_checkpoint(self.path)
        with self.assertRaisesMessage(CheckpointError, 'feature_dim 3'):
            check_compatible(params, make_episode(4, feature_dim=5))

    def test_wrong_format_version(self):
        self.path.write_text('{"format_version": 99}')
        with self.assertRaisesMessage(CheckpointError, 'format_version'):
            read_checkpoint(self.path)

    def test_not_json(self):
        self.path.write_text('not a checkpoint')
        with self.assertRaises(CheckpointError):
            read_checkpoint(self.path)

    def edited_checkpoint(self, edit):
        write_checkpoint(scaled_params(), self.path)
        document = json.loads(self.path.read_text())
        edit(document)
        self.path.write_text(json.dumps(document))

    def test_tensor_without_data(self):
        self.edited_checkpoint(lambda document: document['tensors']['sub.head.bias'].pop('data'))
        with self.assertRaisesMessage(CheckpointError, "'sub.head.bias'"):
            read_checkpoint(self.path)

    def test_tensor_entry_not_an_object(self):
        self.edited_checkpoint(lambda document: document['tensors'].update({'sup.head.bias': [0.5]}))
        with self.assertRaisesMessage(CheckpointError, "'sup.head.bias'"):
            read_checkpoint(self.path)

    def test_tensor_data_not_numeric(self):
        def edit(document):
            document['tensors']['sup.head.bias']['data'] = ['not a number']
        self.edited_checkpoint(edit)
        with self.assertRaisesMessage(CheckpointError, "'sup.head.bias'"):
            read_checkpoint(self.path)

    def test_tensors_not_an_object(self):
        self.edited_checkpoint(lambda document: document.update({'tensors': []}))
        with self.assertRaisesMessage(CheckpointError, "'tensors'"):
            read_checkpoint(self.path)
