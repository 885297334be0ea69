"""
`hieraseg` training loop.

One loop serves plain training, the ablation grid, Branch 2 pretraining and
transfer training: seeded minibatch sampling, a loss from `build_loss`, SGD
with momentum, NaN detection and periodic evaluation on a held-out split.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from hieraseg import settings
from hieraseg.datagen import Dataset
from hieraseg.decode import decode
from hieraseg.evalkit import HierarchicalConfusion, HierarchicalReport
from hieraseg.exceptions import NumericalError, ValidationError
from hieraseg.hierarchy import Hierarchy, LevelLabels, aggregate_flat_prediction
from hieraseg.losses import LOSS_MODES, LossConfig, build_loss
from hieraseg.numeric.nn import Parameter
from hieraseg.numeric.optim import SgdOptimizer
from hieraseg.numeric.rng import derive_rng
from hieraseg.numeric.tensor import Tensor

logger = logging.getLogger(__name__)

Forward = Callable[[np.ndarray], Sequence[Tensor]]


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = settings.ITERATIONS
    batch_size: int = settings.BATCH_SIZE
    lr: float = settings.LEARNING_RATE
    momentum: float = settings.MOMENTUM
    loss: str = "hsc"
    level_weights: Optional[tuple[float, ...]] = None
    alpha: float = 1.0
    path_target: str = "normalized"
    decode: str = "argmax"
    eval_every: int = settings.EVAL_EVERY
    seed: int = settings.DEFAULT_SEED

    def __post_init__(self):
        if self.iterations < 0:
            raise ValidationError(f"iterations must be non-negative, got {self.iterations}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.loss not in LOSS_MODES:
            raise ValidationError(f"Unknown loss mode {self.loss!r}; expected one of {LOSS_MODES}")
        if self.level_weights is not None:
            object.__setattr__(self, "level_weights", tuple(float(w) for w in self.level_weights))
        self.loss_config()

    def loss_config(self) -> LossConfig:
        return LossConfig(level_weights=self.level_weights, alpha=self.alpha, path_target=self.path_target)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        if self.level_weights is not None:
            data["level_weights"] = list(self.level_weights)
        return data


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    evaluations: list[dict[str, Any]] = field(default_factory=list)
    final_report: Optional[HierarchicalReport] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "iterations": len(self.losses),
            "final_loss": self.losses[-1] if self.losses else None,
            "evaluations": self.evaluations,
            "final_report": None if self.final_report is None else self.final_report.to_dict(),
        }


def predict(
    logits: Sequence,
    hierarchy: Hierarchy,
    mode: str = "argmax",
    scores: str = "sigmoid",
) -> LevelLabels:
    """
    Labels at every level. Flat (single-output) logits are decoded at the
    finest level and lifted through the tree.
    """
    if len(logits) == 1 and hierarchy.num_levels > 1:
        finest = hierarchy.num_levels - 1
        data = logits[0].data if isinstance(logits[0], Tensor) else np.asarray(logits[0])
        fine = LevelLabels.single(data.argmax(axis=1), finest, hierarchy.num_levels)
        return aggregate_flat_prediction(hierarchy, fine)
    return decode(logits, hierarchy, mode=mode, scores=scores)


def evaluate_model(
    forward: Forward,
    dataset: Dataset,
    hierarchy: Hierarchy,
    mode: str = "argmax",
    batch_size: int = settings.BATCH_SIZE,
) -> HierarchicalReport:
    confusion = HierarchicalConfusion(hierarchy)
    for start in range(0, len(dataset), batch_size):
        images, truth = dataset.batch(np.arange(start, min(start + batch_size, len(dataset))))
        confusion.accumulate(predict(forward(images), hierarchy, mode), truth)
    return confusion.report()


def train_model(
    forward: Forward,
    params: Sequence[Parameter],
    train: Dataset,
    hierarchy: Hierarchy,
    cfg: TrainConfig,
    val: Optional[Dataset] = None,
    label: str = "train",
) -> TrainResult:
    """
    :param forward: Maps an image batch (B, C, H, W) to per-level logits
        (a single tensor for flat networks).
    :param params: Parameters the optimizer updates; frozen ones are refused.
    :param label: Names the minibatch stream, so two loops sharing a seed
        still draw independent batches.
    """
    result = TrainResult()
    if cfg.iterations == 0:
        return result
    if len(train) == 0:
        raise ValidationError("Training set is empty")
    loss_fn = build_loss(cfg.loss, cfg.loss_config())
    optimizer = SgdOptimizer(params, lr=cfg.lr, momentum=cfg.momentum)
    rng = derive_rng(cfg.seed, f"{label}/batches")

    for iteration in range(1, cfg.iterations + 1):
        indices = rng.choice(len(train), size=cfg.batch_size, replace=len(train) < cfg.batch_size)
        images, labels = train.batch(np.sort(indices))
        logits = forward(images)
        if cfg.loss != "ce" and len(logits) != hierarchy.num_levels:
            raise ValidationError(f"Loss {cfg.loss!r} needs logits for every level; the network is flat")
        loss = loss_fn(logits, labels)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericalError(f"Loss became {value} at iteration {iteration}")
        loss.backward()
        optimizer.step()
        result.losses.append(value)
        logger.debug("%s iteration %d loss %.6f", label, iteration, value)

        if val is not None and cfg.eval_every and (iteration % cfg.eval_every == 0 or iteration == cfg.iterations):
            report = evaluate_model(forward, val, hierarchy, cfg.decode, cfg.batch_size)
            result.evaluations.append({"iteration": iteration, "loss": value, **report.to_dict()})
            result.final_report = report
            logger.info(
                "%s iteration %d: loss %.4f, finest mIoU %.4f",
                label,
                iteration,
                value,
                report.levels[-1].miou,
            )
    return result
