"""
`hieraseg` command base.

Each subcommand is a `BaseCommand` subclass with `add_arguments` and `handle`,
in the manner of Django management commands. `execute` resolves a frozen
`RunConfig` from the parsed flags (rejecting invalid combinations before any
work starts), writes it as `config.json` under `--out`, runs `handle` and
writes the returned summary as `summary.json`.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Optional, TextIO

import numpy as np

from hieraseg import settings
from hieraseg.decode import DECODE_MODES
from hieraseg.exceptions import StorageError, ValidationError
from hieraseg.hierarchy import Hierarchy
from hieraseg.losses import LOSS_MODES, PATH_TARGET_MODES
from hieraseg.models import load_segnet, read_manifest
from hieraseg.numeric.nn import Module
from hieraseg.training import TrainConfig
from hieraseg.translu import load_translu

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
SUMMARY_FILE = "summary.json"


@dataclass(frozen=True)
class RunConfig:
    """
    Resolved parameters of one invocation. Flags shared by several
    subcommands have fields of their own; everything else (mostly paths)
    lives in `inputs`, sorted by name.
    """

    command: str
    seed: int = settings.DEFAULT_SEED
    out: Optional[str] = None
    iterations: Optional[int] = None
    lr: Optional[float] = None
    momentum: Optional[float] = None
    level_weights: Optional[tuple[float, ...]] = None
    alpha: Optional[float] = None
    head: Optional[str] = None
    fusion: Optional[str] = None
    loss: Optional[str] = None
    decode: Optional[str] = None
    scores: Optional[str] = None
    cdks: Optional[bool] = None
    cdsa: Optional[bool] = None
    inputs: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self):
        if self.level_weights is not None:
            object.__setattr__(self, "level_weights", tuple(float(w) for w in self.level_weights))
        object.__setattr__(self, "inputs", tuple(sorted(self.inputs)))
        if self.head == "flat":
            if self.fusion not in (None, "none"):
                raise ValidationError(f"--fusion {self.fusion} needs --head bhccm")
            if self.loss in ("hce", "hsc"):
                raise ValidationError(f"--loss {self.loss} needs --head bhccm; a flat head trains with ce")
            if self.decode == "jsps":
                raise ValidationError("--mode jsps needs per-level logits (--head bhccm)")
        if self.cdsa and self.cdks is False:
            raise ValidationError("--cdsa is only available together with --cdks")

    @classmethod
    def from_namespace(cls, command: str, args: argparse.Namespace) -> "RunConfig":
        own = {f.name for f in fields(cls)} - {"command", "inputs"}
        values: dict[str, Any] = {}
        inputs = []
        for name, value in sorted(vars(args).items()):
            if name in ("verbose", "handler", "command"):
                continue
            if isinstance(value, Path):
                value = str(value)
            if isinstance(value, list):
                value = tuple(value)
            if name in own:
                values[name] = value
            elif value is not None:
                inputs.append((name, value))
        return cls(command=command, inputs=tuple(inputs), **values)

    def get(self, name: str, default: Any = None) -> Any:
        return dict(self.inputs).get(name, default)

    def to_dict(self) -> dict[str, Any]:
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "inputs"}
        if self.level_weights is not None:
            data["level_weights"] = list(self.level_weights)
        data["inputs"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.inputs}
        return data


def finite(value: Any) -> Any:
    """Replace non-finite floats (NaN metrics of absent classes) by None for strict JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Mapping):
        return {k: finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [finite(v) for v in value]
    return value


def write_json(path: Path, data: Mapping[str, Any]) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(finite(data), fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")
    except OSError as exc:
        raise StorageError(f"Cannot write {path}: {exc}") from exc
    return path


class BaseCommand:
    name = ""
    help = ""
    # Subcommands that produce artifacts refuse to run without --out
    requires_out = True

    def __init__(self, stdout: Optional[TextIO] = None):
        self.stdout = stdout or sys.stdout

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        pass

    def resolve(self, args: argparse.Namespace) -> None:
        """Fill defaults that depend on other flags, before the config is frozen."""

    def handle(self, config: RunConfig, out: Optional[Path]) -> dict[str, Any]:
        raise NotImplementedError

    def create_parser(self, subparsers) -> argparse.ArgumentParser:
        parser = subparsers.add_parser(self.name, help=self.help, description=self.help)
        parser.add_argument("--seed", type=int, default=settings.DEFAULT_SEED, help="Root seed of every random draw")
        parser.add_argument("--out", type=Path, required=self.requires_out, help="Output directory")
        self.add_arguments(parser)
        parser.set_defaults(handler=self)
        return parser

    def write(self, text: str) -> None:
        self.stdout.write(text if text.endswith("\n") else text + "\n")

    def execute(self, args: argparse.Namespace) -> dict[str, Any]:
        self.resolve(args)
        config = RunConfig.from_namespace(self.name, args)
        out = Path(config.out) if config.out else None
        if out is not None:
            write_json(out / CONFIG_FILE, config.to_dict())
        logger.debug("Running %s with %s", self.name, config)
        summary = self.handle(config, out)
        if out is not None:
            write_json(out / SUMMARY_FILE, summary)
            logger.info("%s finished; summary in %s", self.name, out / SUMMARY_FILE)
        return summary


def add_training_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training")
    group.add_argument("--iterations", type=int, default=settings.ITERATIONS)
    group.add_argument("--batch-size", type=int, default=settings.BATCH_SIZE)
    group.add_argument("--lr", type=float, default=settings.LEARNING_RATE)
    group.add_argument("--momentum", type=float, default=settings.MOMENTUM)
    group.add_argument(
        "--lambda", dest="level_weights", type=float, nargs="+", metavar="W", help="Per-level weights of the hierarchical cross-entropy"
    )
    group.add_argument("--alpha", type=float, default=1.0, help="Weight of the path consistency term")
    group.add_argument("--loss", choices=LOSS_MODES, help="Default: hsc (ce for a flat head)")
    group.add_argument("--path-target", choices=PATH_TARGET_MODES, default="normalized")
    group.add_argument("--eval-every", type=int, default=settings.EVAL_EVERY)
    group.add_argument("--val-fraction", type=float, default=0.2)
    group.add_argument("--mode", dest="decode", choices=DECODE_MODES, default="argmax", help="Decoding used for evaluation")


def train_config(config: RunConfig) -> TrainConfig:
    return TrainConfig(
        iterations=config.iterations,
        batch_size=config.get("batch_size"),
        lr=config.lr,
        momentum=config.momentum,
        loss=config.loss,
        level_weights=config.level_weights,
        alpha=config.alpha,
        path_target=config.get("path_target"),
        decode=config.decode,
        eval_every=config.get("eval_every"),
        seed=config.seed,
    )


def load_model(directory, hierarchy: Hierarchy) -> Module:
    """A trained network or transfer model, whichever the checkpoint holds."""
    if read_manifest(directory)["model"].get("kind") == "translu":
        return load_translu(directory, hierarchy)
    return load_segnet(directory, hierarchy)


def run_model(model: Module, images: np.ndarray, batch_size: int = settings.BATCH_SIZE) -> list[np.ndarray]:
    """Per-level logits of `model` over `images`, batch by batch."""
    batches = [
        [logits.data for logits in model(images[start : start + batch_size])]
        for start in range(0, len(images), batch_size)
    ]
    return [np.concatenate([batch[level] for batch in batches]) for level in range(len(batches[0]))]
