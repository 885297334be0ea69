from __future__ import annotations

import argparse
from pathlib import Path
from typing import Any, Optional

from hieraseg import settings
from hieraseg.datagen import load_dataset
from hieraseg.decode import DECODE_MODES, read_level_rasters
from hieraseg.evalkit import evaluate
from hieraseg.exceptions import ShapeError
from hieraseg.hierarchy import aggregate_flat_prediction, load_hierarchy
from hieraseg.training import evaluate_model

from .base import BaseCommand, RunConfig, load_model, write_json


class Command(BaseCommand):
    name = "eval"
    help = "Score predictions against a dataset: per-level mIoU/mAcc and the consistency rate."

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument("--pred", type=Path, help="Directory of L{k}.htf predicted rasters")
        source.add_argument("--checkpoint", type=Path, help="Predict with a trained model")
        parser.add_argument("--data", type=Path, required=True, help="Dataset with the ground truth")
        parser.add_argument("--hierarchy", type=Path, help="Must match the dataset hierarchy")
        parser.add_argument("--mode", dest="decode", choices=DECODE_MODES, default="argmax", help="With --checkpoint")
        parser.add_argument("--batch-size", type=int, default=settings.BATCH_SIZE)

    def handle(self, config: RunConfig, out: Optional[Path]) -> dict[str, Any]:
        hierarchy = load_hierarchy(config.get("hierarchy")) if config.get("hierarchy") else None
        dataset = load_dataset(config.get("data"), hierarchy=hierarchy)
        hierarchy = dataset.hierarchy
        if config.get("pred") is not None:
            pred = read_level_rasters(config.get("pred"), hierarchy)
            if not pred.is_complete:
                pred = aggregate_flat_prediction(hierarchy, pred)
            if pred.shape != dataset.labels.shape:
                raise ShapeError("eval", pred.shape, dataset.labels.shape)
            report = evaluate(hierarchy, pred, dataset.labels)
            mode = None
        else:
            model = load_model(config.get("checkpoint"), hierarchy)
            report = evaluate_model(model, dataset, hierarchy, mode=config.decode, batch_size=config.get("batch_size"))
            mode = config.decode
        write_json(out / "report.json", report.to_dict())
        self.write(report.to_table())
        return {"mode": mode, **report.to_dict()}
