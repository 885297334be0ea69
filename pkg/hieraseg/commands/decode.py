from __future__ import annotations

import argparse
from pathlib import Path
from typing import Any, Optional

from hieraseg import settings
from hieraseg.datagen import load_dataset
from hieraseg.decode import (
    DECODE_MODES,
    SCORE_MODES,
    consistency_rate,
    read_level_logits,
    write_level_logits,
    write_level_rasters,
)
from hieraseg.exceptions import ValidationError
from hieraseg.hierarchy import load_hierarchy
from hieraseg.training import predict

from .base import BaseCommand, RunConfig, load_model, run_model


class Command(BaseCommand):
    name = "decode"
    help = "Turn per-level logits into label rasters (independent argmax or joint path selection)."

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument("--logits", type=Path, help="Directory of L{k}.htf logits, (B, C_k, H, W)")
        source.add_argument("--checkpoint", type=Path, help="Run a trained model over --data")
        parser.add_argument("--data", type=Path, help="Dataset whose images are decoded (with --checkpoint)")
        parser.add_argument("--hierarchy", type=Path, help="Required with --logits")
        parser.add_argument("--mode", dest="decode", choices=DECODE_MODES, default="jsps")
        parser.add_argument("--scores", choices=SCORE_MODES, default="sigmoid")
        parser.add_argument("--batch-size", type=int, default=settings.BATCH_SIZE)
        parser.add_argument("--save-logits", action="store_true", help="Also write the model logits (with --checkpoint)")
        parser.add_argument("--previews", action="store_true", help="Also write palette PNGs")

    def resolve(self, args: argparse.Namespace) -> None:
        if args.logits is not None and args.hierarchy is None:
            raise ValidationError("--logits needs --hierarchy")
        if args.checkpoint is not None and args.data is None:
            raise ValidationError("--checkpoint needs --data")

    def handle(self, config: RunConfig, out: Optional[Path]) -> dict[str, Any]:
        if config.get("logits") is not None:
            hierarchy = load_hierarchy(config.get("hierarchy"))
            logits = read_level_logits(config.get("logits"), hierarchy)
        else:
            hierarchy = load_hierarchy(config.get("hierarchy")) if config.get("hierarchy") else None
            dataset = load_dataset(config.get("data"), hierarchy=hierarchy)
            hierarchy = dataset.hierarchy
            model = load_model(config.get("checkpoint"), hierarchy)
            logits = run_model(model, dataset.images, config.get("batch_size"))
            if config.get("save_logits"):
                write_level_logits(logits, out / "logits")
        if len(logits) == 1 and config.decode == "jsps" and hierarchy.num_levels > 1:
            raise ValidationError("--mode jsps needs per-level logits; this model has a flat head")

        labels = predict(logits, hierarchy, mode=config.decode, scores=config.scores)
        write_level_rasters(labels, out / "pred", hierarchy, previews=config.get("previews"))
        rate = consistency_rate(labels, hierarchy)
        self.write(f"decoded {labels.shape[0]} image(s) with {config.decode}; consistency rate {rate:.4f}")
        return {
            "mode": config.decode,
            "scores": config.scores,
            "count": int(labels.shape[0]),
            "pred": str(out / "pred"),
            "consistency_rate": rate,
        }
