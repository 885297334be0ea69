"""
Tests for the command-line subcommands: flag resolution, artifacts and
exit codes.
"""
import json
import logging
import tempfile
import unittest
from contextlib import redirect_stderr
from io import StringIO
from pathlib import Path

import numpy as np

from hieraseg.commands import RunConfig
from hieraseg.decode import read_level_rasters
from hieraseg.exceptions import ValidationError
from hieraseg.hierarchy import fixture_path, load_hierarchy
from hieraseg.manage import main
from hieraseg.numeric.htf import write_htf

MM5B = fixture_path("mm5b.json")
CROP = fixture_path("crop.json")
MAPPING = fixture_path("crop_mapping.json")
SCENE = ["--n-images", "4", "--image-size", "16", "--regions", "8", "--noise", "0.1", "--workers", "1"]
NET = ["--widths", "4", "8", "--decoder-dim", "8", "--batch-size", "2", "--val-fraction", "0.5"]


def run(*argv):
    """Run the entry point; return (exit code, stdout, stderr)."""
    stdout, stderr = StringIO(), StringIO()
    with redirect_stderr(stderr):
        code = main([str(arg) for arg in argv], stdout=stdout)
    return code, stdout.getvalue(), stderr.getvalue()


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


class CommandCase(unittest.TestCase):
    """Shares one generated dataset and one trained checkpoint across tests."""

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls._tmp.name)
        code, _, err = run("gen-data", "--out", cls.root / "gen", "--seed", 3, *SCENE)
        assert code == 0, err
        cls.data = cls.root / "gen" / "data"
        code, _, err = run(
            "train", "--data", cls.data, "--out", cls.root / "train", "--iterations", 2, "--eval-every", 1, *NET
        )
        assert code == 0, err
        cls.checkpoint = cls.root / "train" / "checkpoint"

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()
        logging.getLogger("hieraseg").setLevel(logging.INFO)

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = Path(self.tmp.name)


class TestValidateHierarchy(CommandCase):
    def test_summary(self):
        """Test that a valid document prints its one-line summary."""
        code, out, _ = run("validate-hierarchy", MM5B)
        self.assertEqual(code, 0)
        self.assertIn("3 levels, 4/9/18 classes, 18 paths", out)

    def test_mapping(self):
        """Test that a mapping onto the crop tree is checked against the source tree."""
        code, out, _ = run("validate-hierarchy", CROP, "--mapping", MAPPING, "--source-hierarchy", MM5B, "--out", self.out)
        self.assertEqual(code, 0)
        self.assertIn("mapping: 2 constrained nodes", out)
        self.assertEqual(read_json(self.out / "summary.json")["mapping_nodes"], ["vegetation", "cropland"])

    def test_exit_codes(self):
        """Test that invalid documents exit 2 and unreadable ones exit 4."""
        bad = self.out / "bad.json"
        bad.write_text('{"levels": [{"name": "L1", "classes": ["a", "a"]}]}', encoding="utf-8")
        code, _, err = run("validate-hierarchy", bad)
        self.assertEqual(code, 2)
        self.assertIn("validation: ", err)
        code, _, err = run("validate-hierarchy", self.out / "missing.json")
        self.assertEqual(code, 4)
        self.assertIn("io: ", err)

    def test_usage_errors(self):
        """Test that argparse rejects unknown subcommands and missing required flags."""
        with redirect_stderr(StringIO()):
            with self.assertRaises(SystemExit):
                main(["segment"])
            with self.assertRaises(SystemExit):
                main(["gen-data"])


class TestGenData(CommandCase):
    def test_artifacts(self):
        """Test that gen-data writes the dataset, the resolved config and a summary."""
        config = read_json(self.root / "gen" / "config.json")
        self.assertEqual(config["command"], "gen-data")
        self.assertEqual(config["seed"], 3)
        self.assertEqual(config["inputs"]["n_images"], 4)
        summary = read_json(self.root / "gen" / "summary.json")
        self.assertEqual(summary["count"], 4)
        self.assertEqual(summary["task"], "source")
        self.assertTrue((self.data / "manifest.json").is_file())

    def test_crop_task(self):
        """Test that the crop task is labelled with the crop tree."""
        code, _, err = run("gen-data", "--task", "crop", "--out", self.out, *SCENE)
        self.assertEqual(code, 0, err)
        self.assertEqual(read_json(self.out / "summary.json")["hierarchy_digest"], load_hierarchy(CROP).digest())

    def test_requires_out(self):
        with redirect_stderr(StringIO()):
            with self.assertRaises(SystemExit):
                main(["gen-data", *SCENE])


class TestDeriveLabels(CommandCase):
    def test_finest_raster(self):
        """Test that a finest-level raster gains every coarser level with valid paths."""
        raster = np.random.default_rng(0).integers(0, 18, (2, 4, 4))
        write_htf(self.out / "fine.htf", raster)
        code, _, err = run("derive-labels", "--hierarchy", MM5B, "--labels", self.out / "fine.htf", "--out", self.out / "run")
        self.assertEqual(code, 0, err)
        summary = read_json(self.out / "run" / "summary.json")
        self.assertEqual(summary["levels"], ["L1", "L2", "L3"])
        self.assertEqual(summary["path_validity_rate"], 1.0)
        labels = read_level_rasters(self.out / "run" / "labels", load_hierarchy(MM5B))
        np.testing.assert_array_equal(labels[2], raster)

    def test_middle_level(self):
        """Test that an L2 raster fills L1 only and reports no path validity."""
        write_htf(self.out / "mid.htf", np.zeros((4, 4)))
        code, _, _ = run(
            "derive-labels", "--hierarchy", MM5B, "--labels", self.out / "mid.htf", "--level", "L2", "--out", self.out / "run"
        )
        self.assertEqual(code, 0)
        summary = read_json(self.out / "run" / "summary.json")
        self.assertEqual(summary["levels"], ["L1", "L2"])
        self.assertIsNone(summary["path_validity_rate"])

    def test_out_of_range(self):
        """Test that a class index beyond the level exits 2."""
        write_htf(self.out / "bad.htf", np.full((2, 2), 40))
        code, _, err = run("derive-labels", "--hierarchy", MM5B, "--labels", self.out / "bad.htf", "--out", self.out / "run")
        self.assertEqual(code, 2)
        self.assertIn("40", err)


class TestTrain(CommandCase):
    def test_artifacts(self):
        """Test that training writes a checkpoint, its config and an evaluation report."""
        summary = read_json(self.root / "train" / "summary.json")
        self.assertEqual(summary["model"]["fusion"], "bidirectional")
        self.assertEqual(summary["train"]["loss"], "hsc")
        self.assertEqual(summary["result"]["iterations"], 2)
        self.assertEqual(len(summary["result"]["evaluations"]), 2)
        self.assertEqual([r["level"] for r in summary["report"]["levels"]], ["L1", "L2", "L3"])
        self.assertTrue((self.checkpoint / "manifest.json").is_file())

    def test_flat_defaults(self):
        """Test that a flat head defaults to ce without fusion."""
        code, _, err = run("train", "--data", self.data, "--out", self.out, "--head", "flat", "--iterations", 1, *NET)
        self.assertEqual(code, 0, err)
        summary = read_json(self.out / "summary.json")
        self.assertEqual((summary["model"]["fusion"], summary["train"]["loss"]), ("none", "ce"))

    def test_rejected_combinations(self):
        """Test that hierarchical options on a flat head exit 2 before any work starts."""
        for flags in (["--loss", "hsc"], ["--fusion", "c2f"], ["--mode", "jsps"]):
            with self.subTest(flags=flags):
                out = self.out / flags[1]
                code, _, err = run("train", "--data", self.data, "--out", out, "--head", "flat", *flags, *NET)
                self.assertEqual(code, 2)
                self.assertIn("--head bhccm", err)
                self.assertFalse((out / "config.json").exists())

    def test_hierarchy_mismatch(self):
        code, _, _ = run("train", "--data", self.data, "--hierarchy", CROP, "--out", self.out, "--iterations", 1, *NET)
        self.assertEqual(code, 2)


class TestDecodeAndEval(CommandCase):
    def test_checkpoint_to_rasters_to_report(self):
        """Test decoding a trained model with jsps, then scoring the rasters."""
        code, _, err = run(
            "decode", "--checkpoint", self.checkpoint, "--data", self.data, "--out", self.out / "dec", "--save-logits"
        )
        self.assertEqual(code, 0, err)
        summary = read_json(self.out / "dec" / "summary.json")
        self.assertEqual((summary["mode"], summary["count"]), ("jsps", 4))
        self.assertEqual(summary["consistency_rate"], 1.0)

        code, out, err = run("eval", "--pred", self.out / "dec" / "pred", "--data", self.data, "--out", self.out / "eval")
        self.assertEqual(code, 0, err)
        self.assertIn("consistency rate: 100.00%", out)
        report = read_json(self.out / "eval" / "report.json")
        self.assertEqual(report["consistency_rate"], 1.0)

    def test_saved_logits(self):
        """Test that written logits decode the same as the model run."""
        run("decode", "--checkpoint", self.checkpoint, "--data", self.data, "--out", self.out / "a", "--save-logits")
        code, _, err = run("decode", "--logits", self.out / "a" / "logits", "--hierarchy", MM5B, "--out", self.out / "b")
        self.assertEqual(code, 0, err)
        h = load_hierarchy(MM5B)
        first = read_level_rasters(self.out / "a" / "pred", h)
        second = read_level_rasters(self.out / "b" / "pred", h)
        for level in range(3):
            np.testing.assert_array_equal(first[level], second[level])

    def test_eval_checkpoint(self):
        code, _, err = run("eval", "--checkpoint", self.checkpoint, "--data", self.data, "--out", self.out)
        self.assertEqual(code, 0, err)
        self.assertEqual(read_json(self.out / "summary.json")["mode"], "argmax")

    def test_decode_flag_errors(self):
        """Test that --logits needs --hierarchy and --checkpoint needs --data."""
        code, _, _ = run("decode", "--logits", self.out, "--out", self.out / "x")
        self.assertEqual(code, 2)
        code, _, _ = run("decode", "--checkpoint", self.checkpoint, "--out", self.out / "y")
        self.assertEqual(code, 2)
        code, _, _ = run("decode", "--logits", self.out / "none", "--hierarchy", MM5B, "--out", self.out / "z")
        self.assertEqual(code, 4)


class TestTransfer(CommandCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        code, _, err = run("gen-data", "--task", "crop", "--out", cls.root / "crop", *SCENE)
        assert code == 0, err
        cls.crop = cls.root / "crop" / "data"

    def transfer(self, *flags):
        return run(
            "transfer", "--data", self.crop, "--branch2", self.checkpoint, "--out", self.out,
            "--iterations", 1, "--batch-size", 2, "--val-fraction", 0.5, *flags,
        )

    def test_full_variant(self):
        """Test that knowledge sharing with alignment trains and saves a reloadable model."""
        code, out, err = self.transfer("--cdsa")
        self.assertEqual(code, 0, err)
        self.assertIn("variant cdks+cdsa", out)
        self.assertEqual(read_json(self.out / "checkpoint" / "manifest.json")["model"]["kind"], "translu")
        code, _, err = run("eval", "--checkpoint", self.out / "checkpoint", "--data", self.crop, "--out", self.out / "eval")
        self.assertEqual(code, 0, err)

    def test_scratch_variant(self):
        code, _, err = self.transfer("--no-cdks", "--init", "scratch")
        self.assertEqual(code, 0, err)
        self.assertEqual(read_json(self.out / "summary.json")["variant"], "scratch")

    def test_rejected_combinations(self):
        """Test that alignment without sharing and sharing from scratch exit 2."""
        self.assertEqual(self.transfer("--no-cdks", "--cdsa")[0], 2)
        self.assertEqual(self.transfer("--init", "scratch")[0], 2)


class TestAblate(CommandCase):
    def test_jsps_suite(self):
        """Test a one-seed decoding suite end to end."""
        code, out, err = run(
            "ablate", "--suite", "jsps", "--seeds", 1, "--iterations", 1, "--n-images", 4, "--image-size", 16,
            "--widths", 4, 8, "--decoder-dim", 8, "--batch-size", 2, "--workers", 1, "--out", self.out,
        )
        self.assertEqual(code, 0, err)
        self.assertIn("jsps: L3 mIoU (%)", out)
        result = read_json(self.out / "ablation.json")
        self.assertEqual([c["row"] for c in result["cells"]], ["argmax", "jsps"])
        self.assertEqual(result["cells"][1]["consistency_rate"], 1.0)
        self.assertTrue((self.out / "ablation.txt").is_file())


class TestRunConfig(unittest.TestCase):
    def test_inputs_are_sorted(self):
        config = RunConfig(command="x", inputs=(("b", 1), ("a", 2)))
        self.assertEqual(config.inputs, (("a", 2), ("b", 1)))
        self.assertEqual(config.get("a"), 2)
        self.assertEqual(config.to_dict()["inputs"], {"a": 2, "b": 1})

    def test_flag_combinations(self):
        """Test the cross-flag rules enforced when the config is frozen."""
        with self.assertRaises(ValidationError):
            RunConfig(command="train", head="flat", loss="hce")
        with self.assertRaises(ValidationError):
            RunConfig(command="transfer", cdks=False, cdsa=True)
        RunConfig(command="train", head="flat", fusion="none", loss="ce")


class TestVerboseLogging(unittest.TestCase):
    def test_verbose_flag_enables_debug(self):
        """Test that -v logs per-module debug lines."""
        stderr = StringIO()
        try:
            with redirect_stderr(stderr):
                code = main(["-v", "validate-hierarchy", str(MM5B)], stdout=StringIO())
            self.assertEqual(code, 0)
            self.assertEqual(logging.getLogger("hieraseg").level, logging.DEBUG)
            self.assertIn("hieraseg.commands.base", stderr.getvalue())
        finally:
            logging.getLogger("hieraseg").setLevel(logging.INFO)


if __name__ == "__main__":
    unittest.main()
