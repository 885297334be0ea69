"""
Integration tests for the generate -> train -> save -> reload -> decode ->
evaluate chain through the Python API.
"""
import tempfile
import unittest
from pathlib import Path

import numpy as np

from hieraseg.datagen import SceneSpec, generate, load_dataset, make_crop_target, save_dataset
from hieraseg.decode import consistency_rate, read_level_rasters, write_level_rasters
from hieraseg.evalkit import evaluate
from hieraseg.hierarchy import fixture_path, load_hierarchy
from hieraseg.models import NetConfig, ToySegNet, load_segnet, save_checkpoint
from hieraseg.training import TrainConfig, evaluate_model, predict, train_model
from hieraseg.translu import build_translu, load_mapping, load_translu, transfer_train, translu_config

SPEC = SceneSpec(image_size=16, regions=8, noise=0.1, seed=11)
SMALL = {"widths": (4, 8), "decoder_dim": 8}


class PipelineIntegrationTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        self.source = load_hierarchy(fixture_path("mm5b.json"))
        self.crop = load_hierarchy(fixture_path("crop.json"))

    def train_source(self, dataset):
        net = ToySegNet(NetConfig.for_hierarchy(self.source, **SMALL), seed=5, label="branch2")
        cfg = TrainConfig(iterations=4, batch_size=2, lr=0.05, eval_every=0, seed=5)
        train_model(net, net.trainable_parameters(), dataset, self.source, cfg)
        return net

    def test_source_pipeline(self):
        """Test that a stored dataset and a reloaded checkpoint reproduce the in-memory evaluation."""
        save_dataset(generate(SPEC, self.source, 6, workers=1), self.dir / "data")
        train, val = load_dataset(self.dir / "data", hierarchy=self.source).split(1 / 3)
        net = self.train_source(train)
        save_checkpoint(net, self.dir / "ckpt", self.source, net.config.to_dict())
        reloaded = load_segnet(self.dir / "ckpt", self.source)

        for mode in ("argmax", "jsps"):
            live = evaluate_model(net, val, self.source, mode=mode)
            again = evaluate_model(reloaded, val, self.source, mode=mode)
            self.assertEqual(live.to_dict(), again.to_dict())

        labels = predict(reloaded(val.images), self.source, mode="jsps")
        self.assertEqual(consistency_rate(labels, self.source), 1.0)
        write_level_rasters(labels, self.dir / "pred", self.source)
        from_disk = evaluate(self.source, read_level_rasters(self.dir / "pred", self.source), val.labels)
        self.assertEqual(from_disk.to_dict(), evaluate_model(net, val, self.source, mode="jsps").to_dict())

    def test_transfer_pipeline(self):
        """Test pretraining, transfer with alignment, and reloading the dual-branch model."""
        branch2 = self.train_source(generate(SPEC, self.source, 4, workers=1))
        target = make_crop_target(SPEC, self.source, self.crop, 4, workers=1)
        train, val = target.split(0.5)
        mapping = load_mapping(fixture_path("crop_mapping.json"), self.source, self.crop)
        branch1 = ToySegNet(NetConfig.for_hierarchy(self.crop, **SMALL), seed=5, label="branch1")
        model = build_translu("cdks+cdsa", branch2, branch1, mapping=mapping, seed=5)
        frozen = branch2.state_dict()

        result = transfer_train(model, train, self.crop, TrainConfig(iterations=3, batch_size=2, eval_every=3), val=val)
        self.assertEqual(len(result.losses), 3)
        self.assertIsNotNone(result.final_report)
        for name, value in branch2.state_dict().items():
            np.testing.assert_array_equal(value, frozen[name])

        save_checkpoint(model, self.dir / "translu", self.crop, translu_config(model))
        reloaded = load_translu(self.dir / "translu", self.crop)
        self.assertEqual(
            evaluate_model(model, val, self.crop).to_dict(), evaluate_model(reloaded, val, self.crop).to_dict()
        )


if __name__ == "__main__":
    unittest.main()
