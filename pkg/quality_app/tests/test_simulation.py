import hashlib
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from quality_app.exceptions import ConfigurationError, CorpusFormatError
from quality_app.simulation import (SimConfig, dumps_episode, generate_corpus, generate_episode,
                                    quality_direction, read_corpus, video_label_for, write_corpus)

SMALL = SimConfig(n_frames=40, feature_dim=6, cluster_width_range=(3, 10), seed=11)


def corpus_digest(corpus):
    digest = hashlib.sha256()
    for episode in corpus:
        digest.update(dumps_episode(episode).encode())
    return digest.hexdigest()


class SimConfigTests(SimpleTestCase):

    def test_defaults(self):
        config = SimConfig()
        self.assertEqual(config.n_frames, 128)
        self.assertEqual(config.cluster_count_range, (1, 4))
        self.assertEqual(config.to_dict()['cluster_width_range'], [4, 24])

    def test_cluster_wider_than_episode(self):
        with self.assertRaises(ConfigurationError) as ctx:
            SimConfig(n_frames=16, cluster_width_range=(4, 24))
        self.assertIn('cluster_width_range', ctx.exception.field_errors)

    def test_field_errors_are_collected(self):
        with self.assertRaises(ConfigurationError) as ctx:
            SimConfig(signal_to_noise=0, overlap_probability=1.5)
        self.assertEqual(set(ctx.exception.field_errors), {'signal_to_noise', 'overlap_probability'})


class GenerateEpisodeTests(SimpleTestCase):

    def test_deterministic_in_seed_and_index(self):
        first, second = generate_episode(SMALL, 3), generate_episode(SMALL, 3)
        self.assertEqual(first, second)
        np.testing.assert_array_equal(first.features, second.features)
        self.assertNotEqual(generate_episode(SMALL, 4).id, first.id)

    def test_shapes(self):
        episode = generate_episode(SMALL, 0)
        self.assertEqual(episode.features.shape, (40, 6))
        self.assertEqual(episode.frame_labels.shape, (40,))
        self.assertEqual(episode.id, 'episode-000000')

    def test_no_clusters(self):
        config = SimConfig(n_frames=30, feature_dim=4, cluster_count_range=(0, 0), seed=2)
        episode = generate_episode(config, 0)
        self.assertEqual(int(episode.frame_labels.sum()), 0)
        self.assertEqual(episode.video_label, 0)

    def test_video_label_threshold(self):
        labels = np.zeros(100, dtype=int)
        labels[10:55] = 1
        self.assertEqual(video_label_for(labels, 0.3), 1)
        self.assertEqual(video_label_for(labels, 0.5), 0)
        self.assertEqual(video_label_for(labels, 0.45), 1)

    def test_video_label_follows_config_threshold(self):
        for index in range(20):
            episode = generate_episode(SMALL, index)
            expected = int(episode.frame_labels.mean() >= SMALL.video_quality_threshold)
            self.assertEqual(episode.video_label, expected)

    def test_cluster_widths_respect_bounds(self):
        config = SimConfig(n_frames=60, feature_dim=3, cluster_count_range=(1, 1),
                           cluster_width_range=(5, 9), seed=4)
        for index in range(30):
            labels = generate_episode(config, index).frame_labels
            self.assertTrue(5 <= labels.sum() <= 9)

    def test_classes_separate_along_quality_direction(self):
        config = SimConfig(n_frames=64, feature_dim=8, signal_to_noise=10.0, seed=5)
        direction = quality_direction(config)
        correct = total = 0
        for index in range(10):
            episode = generate_episode(config, index)
            predicted = (episode.features @ direction > 0).astype(int)
            correct += int(np.sum(predicted == episode.frame_labels))
            total += episode.n_frames
        self.assertGreater(correct / total, 0.99)


class GenerateCorpusTests(SimpleTestCase):

    def test_empty(self):
        self.assertEqual(generate_corpus(SMALL, 0, 0), ([], []))

    def test_splits_use_disjoint_indices(self):
        train, test = generate_corpus(SMALL, 10, 5)
        self.assertEqual((len(train), len(test)), (10, 5))
        ids = [episode.id for episode in train + test]
        self.assertEqual(len(set(ids)), 15)

    def test_regeneration_is_identical(self):
        first = generate_corpus(SMALL, 4, 2)
        second = generate_corpus(SMALL, 4, 2)
        self.assertEqual(corpus_digest(first[0] + first[1]), corpus_digest(second[0] + second[1]))

    def test_seed_changes_corpus(self):
        other = SimConfig(**{**SMALL.to_dict(), 'seed': 12})
        self.assertNotEqual(corpus_digest(generate_corpus(SMALL, 3, 0)[0]),
                            corpus_digest(generate_corpus(other, 3, 0)[0]))


class CorpusFileTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / 'corpus.jsonl'

    def test_round_trip(self):
        corpus, _ = generate_corpus(SMALL, 3, 0)
        write_corpus(corpus, self.path)
        self.assertEqual(read_corpus(self.path), corpus)

    def test_invalid_utf8_names_the_line(self):
        corpus, _ = generate_corpus(SMALL, 2, 0)
        write_corpus(corpus, self.path)
        with open(self.path, 'ab') as handle:
            handle.write(b'{"id": "\xff\xfe", "video_label": 0}\n')
        with self.assertRaises(CorpusFormatError) as ctx:
            read_corpus(self.path)
        self.assertEqual(ctx.exception.line, 3)
        self.assertEqual(ctx.exception.record, '#2')
        self.assertIn('UTF-8', str(ctx.exception))

    def test_truncated_file_names_the_record(self):
        corpus, _ = generate_corpus(SMALL, 3, 0)
        write_corpus(corpus, self.path)
        text = self.path.read_text()
        self.path.write_text(text[:len(text) - 40])
        with self.assertRaises(CorpusFormatError) as ctx:
            read_corpus(self.path)
        self.assertEqual(ctx.exception.line, 3)
        self.assertIn('line 3', str(ctx.exception))

    def test_empty_file(self):
        self.path.write_text('')
        self.assertEqual(read_corpus(self.path), [])

    def test_missing_field(self):
        self.path.write_text('{"id": "a", "video_label": 0, "frame_labels": [0, 1]}\n')
        with self.assertRaisesMessage(CorpusFormatError, 'features'):
            read_corpus(self.path)

    def test_feature_rows_must_match_labels(self):
        self.path.write_text('{"id": "a", "video_label": 0, "frame_labels": [0, 1], "features": [[0.5]]}\n')
        with self.assertRaises(CorpusFormatError) as ctx:
            read_corpus(self.path)
        self.assertEqual(ctx.exception.record, 'a')
