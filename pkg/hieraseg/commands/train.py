from __future__ import annotations

import argparse
from pathlib import Path
from typing import Any, Optional

from hieraseg import settings
from hieraseg.datagen import load_dataset
from hieraseg.hierarchy import load_hierarchy
from hieraseg.models import FUSION_MODES, HEAD_MODES, NetConfig, ToySegNet, save_checkpoint
from hieraseg.training import evaluate_model, train_model

from .base import BaseCommand, RunConfig, add_training_arguments, train_config


class Command(BaseCommand):
    name = "train"
    help = "Train a flat or hierarchical network on a generated dataset."

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--data", type=Path, required=True)
        parser.add_argument("--hierarchy", type=Path, help="Must match the dataset hierarchy")
        parser.add_argument("--head", choices=HEAD_MODES, default="bhccm")
        parser.add_argument("--fusion", choices=FUSION_MODES, help="Default: bidirectional (none for --head flat)")
        parser.add_argument("--widths", type=int, nargs="+", default=list(settings.ENCODER_WIDTHS))
        parser.add_argument("--decoder-dim", type=int, default=settings.DECODER_DIM)
        add_training_arguments(parser)

    def resolve(self, args: argparse.Namespace) -> None:
        flat = args.head == "flat"
        if args.fusion is None:
            args.fusion = "none" if flat else "bidirectional"
        if args.loss is None:
            args.loss = "ce" if flat else "hsc"

    def handle(self, config: RunConfig, out: Optional[Path]) -> dict[str, Any]:
        hierarchy = load_hierarchy(config.get("hierarchy")) if config.get("hierarchy") else None
        dataset = load_dataset(config.get("data"), hierarchy=hierarchy)
        hierarchy = dataset.hierarchy
        train, val = dataset.split(config.get("val_fraction"))

        net_config = NetConfig.for_hierarchy(
            hierarchy,
            in_channels=dataset.images.shape[1],
            widths=config.get("widths"),
            decoder_dim=config.get("decoder_dim"),
            head=config.head,
            fusion=config.fusion,
        )
        net = ToySegNet(net_config, seed=config.seed)
        cfg = train_config(config)
        result = train_model(net, net.trainable_parameters(), train, hierarchy, cfg, val=val)
        report = evaluate_model(net, val, hierarchy, mode=cfg.decode, batch_size=cfg.batch_size)
        save_checkpoint(net, out / "checkpoint", hierarchy, net_config.to_dict(), extra={"train": cfg.to_dict()})

        self.write(report.to_table())
        return {
            "checkpoint": str(out / "checkpoint"),
            "model": net_config.to_dict(),
            "train": cfg.to_dict(),
            "result": result.to_dict(),
            "report": report.to_dict(),
        }
