from __future__ import annotations

import argparse
from pathlib import Path
from typing import Any, Optional

from hieraseg.datagen import load_dataset
from hieraseg.exceptions import ValidationError
from hieraseg.hierarchy import fixture_path, load_hierarchy
from hieraseg.models import NetConfig, ToySegNet, load_segnet, save_checkpoint
from hieraseg.training import evaluate_model
from hieraseg.translu import build_translu, load_mapping, transfer_train, translu_config

from .base import BaseCommand, RunConfig, add_training_arguments, train_config


def variant_of(cdks: bool, cdsa: bool, init: str) -> str:
    if cdks:
        return "cdks+cdsa" if cdsa else "cdks"
    return init


class Command(BaseCommand):
    name = "transfer"
    help = "Train Branch 1 on a cross-domain task next to a frozen pretrained Branch 2."

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--data", type=Path, required=True, help="Target task dataset")
        parser.add_argument("--branch2", type=Path, required=True, help="Checkpoint of the pretrained hierarchical network")
        parser.add_argument("--source-hierarchy", type=Path, help="Hierarchy of Branch 2 (default: bundled mm5b)")
        parser.add_argument("--mapping", type=Path, help="Cross-domain mapping (default: bundled crop mapping)")
        parser.add_argument("--cdks", action=argparse.BooleanOptionalAction, default=True, help="Interaction units")
        parser.add_argument("--cdsa", action=argparse.BooleanOptionalAction, default=False, help="Semantic alignment masks")
        parser.add_argument("--residual-cdsa", action="store_true", help="Multiply by (1 + mask) instead of mask")
        parser.add_argument(
            "--init",
            choices=("scratch", "pretrained"),
            default="pretrained",
            help="Branch 1 initialization without --cdks",
        )
        add_training_arguments(parser)
        parser.set_defaults(iterations=300)

    def resolve(self, args: argparse.Namespace) -> None:
        if args.loss is None:
            args.loss = "hsc"
        if args.cdsa and not args.cdks:
            raise ValidationError("--cdsa is only available together with --cdks")
        if args.cdks and args.init == "scratch":
            raise ValidationError("--init scratch excludes --cdks; interaction variants start from Branch 2 weights")
        args.variant = variant_of(args.cdks, args.cdsa, args.init)

    def handle(self, config: RunConfig, out: Optional[Path]) -> dict[str, Any]:
        source = load_hierarchy(config.get("source_hierarchy") or fixture_path("mm5b.json"))
        dataset = load_dataset(config.get("data"))
        target = dataset.hierarchy
        mapping = load_mapping(config.get("mapping") or fixture_path("crop_mapping.json"), source, target)
        branch2 = load_segnet(config.get("branch2"), source)

        branch1_config = NetConfig.for_hierarchy(
            target,
            in_channels=branch2.config.in_channels,
            widths=branch2.config.widths,
            decoder_dim=branch2.config.decoder_dim,
        )
        branch1 = ToySegNet(branch1_config, seed=config.seed, label="branch1")
        variant = config.get("variant")
        model = build_translu(
            variant, branch2, branch1, mapping=mapping, residual_cdsa=config.get("residual_cdsa"), seed=config.seed
        )
        train, val = dataset.split(config.get("val_fraction"))
        cfg = train_config(config)
        result = transfer_train(model, train, target, cfg, val=val)
        report = evaluate_model(model, val, target, mode=cfg.decode, batch_size=cfg.batch_size)
        save_checkpoint(model, out / "checkpoint", target, translu_config(model), extra={"train": cfg.to_dict(), "variant": variant})

        self.write(f"variant {variant}")
        self.write(report.to_table())
        return {
            "variant": variant,
            "checkpoint": str(out / "checkpoint"),
            "train": cfg.to_dict(),
            "result": result.to_dict(),
            "report": report.to_dict(),
        }
