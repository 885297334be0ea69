from __future__ import annotations

import argparse
from pathlib import Path
from typing import Any, Optional

from hieraseg import settings
from hieraseg.ablation import SUITES, AblationConfig, run_ablation

from .base import BaseCommand, RunConfig, write_json


class Command(BaseCommand):
    name = "ablate"
    help = "Run an ablation suite over several seeds and tabulate the finest-level mIoU."

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--suite", choices=tuple(SUITES), required=True)
        parser.add_argument("--seeds", type=int, default=5, help="Number of seeds, counted up from --seed")
        parser.add_argument("--iterations", type=int, default=settings.ITERATIONS)
        parser.add_argument("--transfer-iterations", type=int, default=300)
        parser.add_argument("--n-images", type=int, default=40)
        parser.add_argument("--image-size", type=int, default=settings.IMAGE_SIZE)
        parser.add_argument("--batch-size", type=int, default=settings.BATCH_SIZE)
        parser.add_argument("--lr", type=float, default=settings.LEARNING_RATE)
        parser.add_argument("--momentum", type=float, default=settings.MOMENTUM)
        parser.add_argument("--alpha", type=float, default=1.0)
        parser.add_argument("--widths", type=int, nargs="+", default=list(settings.ENCODER_WIDTHS))
        parser.add_argument("--decoder-dim", type=int, default=settings.DECODER_DIM)
        parser.add_argument("--source-hierarchy", type=Path)
        parser.add_argument("--target-hierarchy", type=Path)
        parser.add_argument("--mapping", type=Path)
        parser.add_argument("--workers", type=int, default=settings.THREADS)

    def handle(self, config: RunConfig, out: Optional[Path]) -> dict[str, Any]:
        opt = config.get
        cfg = AblationConfig(
            suite=opt("suite"),
            seeds=tuple(range(config.seed, config.seed + opt("seeds"))),
            iterations=config.iterations,
            transfer_iterations=opt("transfer_iterations"),
            n_images=opt("n_images"),
            image_size=opt("image_size"),
            batch_size=opt("batch_size"),
            lr=config.lr,
            momentum=config.momentum,
            alpha=config.alpha,
            widths=opt("widths"),
            decoder_dim=opt("decoder_dim"),
            source_hierarchy=opt("source_hierarchy"),
            target_hierarchy=opt("target_hierarchy"),
            mapping=opt("mapping"),
        )
        result = run_ablation(cfg, workers=opt("workers"))
        write_json(out / "ablation.json", result.to_dict())
        table = result.to_table()
        (out / "ablation.txt").write_text(table, encoding="utf-8")
        self.write(table)
        return result.to_dict()
