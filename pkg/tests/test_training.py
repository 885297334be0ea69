"""
Tests for the training loop, prediction and model evaluation.
"""
import math
import unittest

import numpy as np

from hieraseg.datagen import Dataset, SceneSpec, generate
from hieraseg.exceptions import NumericalError, ValidationError
from hieraseg.hierarchy import fixture_path, load_hierarchy, path_validity_rate
from hieraseg.models import NetConfig, ToySegNet
from hieraseg.numeric import Parameter, Tensor, ops
from hieraseg.training import TrainConfig, TrainResult, evaluate_model, predict, train_model

SMALL = {"widths": (4, 8), "decoder_dim": 8}


def one_hot(indices, classes):
    return np.moveaxis(np.eye(classes)[indices], -1, 1)


class TestTrainConfig(unittest.TestCase):
    def test_validation(self):
        """Test that negative iterations, empty batches and unknown losses are refused."""
        for kwargs in ({"iterations": -1}, {"batch_size": 0}, {"loss": "focal"}, {"alpha": -1.0}):
            with self.subTest(**kwargs):
                with self.assertRaises(ValidationError):
                    TrainConfig(**kwargs)

    def test_to_dict(self):
        cfg = TrainConfig(level_weights=[1, 2, 3])
        self.assertEqual(cfg.level_weights, (1.0, 2.0, 3.0))
        self.assertEqual(cfg.to_dict()["level_weights"], [1.0, 2.0, 3.0])
        self.assertEqual(cfg.loss_config().level_weights, (1.0, 2.0, 3.0))


class TrainingCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.h = load_hierarchy(fixture_path("mm5b.json"))
        dataset = generate(SceneSpec(image_size=16, regions=8, noise=0.1, seed=2), cls.h, 6, workers=1)
        cls.train, cls.val = dataset.split(1 / 3)

    def net(self, **kwargs):
        return ToySegNet(NetConfig.for_hierarchy(self.h, **SMALL, **kwargs), seed=7)


class TestTrainModel(TrainingCase):
    def test_runs_and_evaluates(self):
        """Test the loss history and the evaluation schedule of a short run."""
        net = self.net()
        cfg = TrainConfig(iterations=3, batch_size=2, lr=0.05, eval_every=2, seed=1)
        result = train_model(net, net.trainable_parameters(), self.train, self.h, cfg, val=self.val)
        self.assertEqual(len(result.losses), 3)
        self.assertTrue(all(math.isfinite(v) for v in result.losses))
        self.assertEqual([e["iteration"] for e in result.evaluations], [2, 3])
        self.assertIsNotNone(result.final_report)
        summary = result.to_dict()
        self.assertEqual(summary["iterations"], 3)
        self.assertEqual(summary["final_loss"], result.losses[-1])

    def test_seeded_runs_repeat(self):
        """Test that two runs with the same seed produce identical losses and weights."""
        cfg = TrainConfig(iterations=3, batch_size=2, lr=0.05, eval_every=0, seed=4)
        runs = []
        for _ in range(2):
            net = self.net()
            result = train_model(net, net.trainable_parameters(), self.train, self.h, cfg)
            runs.append((result.losses, net.state_dict()))
        self.assertEqual(runs[0][0], runs[1][0])
        for name, value in runs[0][1].items():
            np.testing.assert_array_equal(value, runs[1][1][name])

    def test_zero_iterations(self):
        """Test that zero iterations return an empty result and leave the weights alone."""
        net = self.net()
        before = net.state_dict()
        result = train_model(net, net.trainable_parameters(), self.train, self.h, TrainConfig(iterations=0))
        self.assertEqual(result.to_dict()["final_loss"], None)
        np.testing.assert_array_equal(net.state_dict()["encoder.0.weight"], before["encoder.0.weight"])

    def test_flat_network(self):
        """Test that a flat head trains with ce and is refused by hierarchical losses."""
        net = self.net(head="flat", fusion="none")
        cfg = TrainConfig(iterations=1, batch_size=2, loss="ce", eval_every=1)
        result = train_model(net, net.trainable_parameters(), self.train, self.h, cfg, val=self.val)
        self.assertEqual(result.final_report.consistency_rate, 1.0)
        with self.assertRaises(ValidationError):
            train_model(net, net.trainable_parameters(), self.train, self.h, TrainConfig(iterations=1, loss="hce"))

    def test_nan_loss(self):
        """Test that a non-finite loss stops training."""
        bias = Parameter(np.zeros(()))

        def forward(images):
            batch, _, height, width = images.shape
            return [ops.add(Tensor(np.full((batch, c, height, width), np.nan)), bias) for c in self.h.num_classes]

        with self.assertRaises(NumericalError):
            train_model(forward, [bias], self.train, self.h, TrainConfig(iterations=1, batch_size=2))

    def test_empty_training_set(self):
        empty = Dataset(self.train.images[:0], self.train.labels.take(slice(0, 0)), self.h)
        net = self.net()
        with self.assertRaises(ValidationError):
            train_model(net, net.trainable_parameters(), empty, self.h, TrainConfig(iterations=1))


class TestPredictAndEvaluate(TrainingCase):
    def oracle_forward(self, images):
        """Per-level one-hot logits read from the leaf index stored in channel 0."""
        leaves = images[:, 0].astype(np.int64)
        finest = self.h.num_levels - 1
        return [
            Tensor(one_hot(self.h.ancestor_map(finest, level)[leaves], classes))
            for level, classes in enumerate(self.h.num_classes)
        ]

    def test_perfect_forward(self):
        """Test that logits matching the labels evaluate to 1.0 with both decoders."""
        images = self.val.labels[2][:, None].astype(float)
        dataset = Dataset(images, self.val.labels, self.h)
        for mode in ("argmax", "jsps"):
            report = evaluate_model(self.oracle_forward, dataset, self.h, mode=mode, batch_size=1)
            self.assertTrue(all(r.miou == 1.0 for r in report.levels))
            self.assertEqual(report.consistency_rate, 1.0)

    def test_flat_logits_are_lifted(self):
        """Test that a single finest-level output is decoded and lifted to every level."""
        rng = np.random.default_rng(0)
        logits = [Tensor(rng.normal(size=(2, 18, 4, 4)))]
        labels = predict(logits, self.h)
        self.assertEqual(labels.present, (0, 1, 2))
        np.testing.assert_array_equal(labels[2], logits[0].data.argmax(axis=1))
        self.assertEqual(path_validity_rate(self.h, labels), 1.0)

    def test_hierarchical_logits(self):
        """Test that per-level logits go through the requested decoder."""
        rng = np.random.default_rng(1)
        logits = [rng.normal(size=(1, c, 4, 4)) for c in self.h.num_classes]
        self.assertEqual(path_validity_rate(self.h, predict(logits, self.h, mode="jsps")), 1.0)
        np.testing.assert_array_equal(predict(logits, self.h)[1], logits[1].argmax(axis=1))

    def test_result_defaults(self):
        self.assertEqual(TrainResult().to_dict()["iterations"], 0)


if __name__ == "__main__":
    unittest.main()
