"""
Trend checks over the multi-seed ablation grids. These train dozens of
networks on the CPU and are deselected with `-m "not slow"`.
"""
import unittest

import numpy as np
import pytest

from hieraseg.ablation import AblationConfig, run_ablation
from hieraseg.datagen import SceneSpec, generate
from hieraseg.hierarchy import fixture_path, load_hierarchy
from hieraseg.models import NetConfig, ToySegNet
from hieraseg.training import TrainConfig, train_model

GRID = {
    "seeds": (0, 1, 2),
    "iterations": 300,
    "n_images": 24,
    "image_size": 32,
    "widths": (8, 16),
    "decoder_dim": 16,
}
HIERARCHICAL_ROWS = ("no-fusion", "c2f", "f2c", "bidir+hce", "bidir+hsc")


@pytest.mark.slow
class TrendsIntegrationTest(unittest.TestCase):
    def test_fusion_ablation_ordering(self):
        """Test the head ablation over 5 seeds of 2000 iterations: fusion beats no fusion, bidir+hsc leads."""
        result = run_ablation(AblationConfig(suite="bhccm", seeds=(0, 1, 2, 3, 4), iterations=2000))
        means = result.mean_finest_miou()
        self.assertLess(means["no-fusion"], means["c2f"])
        self.assertLess(means["no-fusion"], means["f2c"])
        self.assertGreaterEqual(means["bidir+hsc"], means["flat"])
        self.assertGreaterEqual(result.best_row_counts(HIERARCHICAL_ROWS)["bidir+hsc"], 4)
        self.assertTrue(all(c["consistency_rate"] == 1.0 for c in result.cells if c["row"] == "flat"))

    def test_knowledge_sharing_ordering(self):
        """Test the transfer ablation over 3 seeds of 300 iterations: cdks >= pretrained and cdks+cdsa >= cdks."""
        seeds = (0, 1, 2)
        result = run_ablation(AblationConfig(suite="translu", seeds=seeds, transfer_iterations=300))
        pretrained = result.finest_miou("pretrained")
        cdks = result.finest_miou("cdks")
        cdsa = result.finest_miou("cdks+cdsa")
        self.assertGreaterEqual(sum(cdks[s] >= pretrained[s] for s in seeds), 2)
        self.assertGreaterEqual(sum(cdsa[s] >= cdks[s] for s in seeds), 2)

    def test_path_decoding_is_consistent(self):
        """Test that joint path selection is always consistent and never clearly worse than argmax."""
        result = run_ablation(AblationConfig(suite="jsps", **GRID), workers=1)
        jsps = [c for c in result.cells if c["row"] == "jsps"]
        argmax = [c for c in result.cells if c["row"] == "argmax"]
        self.assertTrue(all(c["consistency_rate"] == 1.0 for c in jsps))
        self.assertGreaterEqual(
            np.mean([c["consistency_rate"] for c in jsps]), np.mean([c["consistency_rate"] for c in argmax])
        )
        means = result.mean_finest_miou()
        self.assertGreaterEqual(means["jsps"], means["argmax"] - 0.01)

    def test_training_lowers_the_loss(self):
        """Test that the hsc loss of the last 20 iterations sits below that of the first 20."""
        h = load_hierarchy(fixture_path("mm5b.json"))
        data = generate(SceneSpec(image_size=32, seed=1), h, 16, workers=1)
        net = ToySegNet(NetConfig.for_hierarchy(h, widths=(8, 16), decoder_dim=16), seed=1)
        cfg = TrainConfig(iterations=200, batch_size=4, lr=0.05, eval_every=0, seed=1)
        losses = train_model(net, net.trainable_parameters(), data, h, cfg).losses
        self.assertLess(np.mean(losses[-20:]), np.mean(losses[:20]))


if __name__ == "__main__":
    unittest.main()
