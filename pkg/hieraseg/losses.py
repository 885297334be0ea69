"""
`hieraseg` hierarchical semantic consistency losses.

    ce_level   mean pixel cross-entropy at one level
    hce        sum_i lambda_i * ce_level(level i)
    hpc        KL(target || softmax(concat of all level logits)) per pixel, where
               the target concatenates the one-hot vectors of every level
               (divided by L in `normalized` mode, left summing to L in `raw` mode)
    hsc        hce + alpha * hpc

All means run over non-ignore pixels only, pooled across the batch. In hpc
a pixel is ignored when any of its levels is.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from hieraseg import settings
from hieraseg.exceptions import ShapeError, ValidationError
from hieraseg.hierarchy import LevelLabels
from hieraseg.numeric import ops
from hieraseg.numeric.tensor import Tensor

logger = logging.getLogger(__name__)

PATH_TARGET_MODES = ("normalized", "raw")
LOSS_MODES = ("ce", "hce", "hsc")

LossFn = Callable[[Sequence[Tensor], LevelLabels], Tensor]


@dataclass(frozen=True)
class LossConfig:
    """
    :param level_weights: lambda_i per level; None means 1.0 everywhere.
    :param alpha: Weight of the path consistency term in hsc.
    :param path_target: `normalized` (target sums to 1) or `raw` (sums to L).
    """

    level_weights: Optional[tuple[float, ...]] = None
    alpha: float = 1.0
    ignore_index: int = settings.IGNORE_INDEX
    path_target: str = "normalized"

    def __post_init__(self):
        if self.level_weights is not None:
            object.__setattr__(self, "level_weights", tuple(float(w) for w in self.level_weights))
            if any(w < 0 for w in self.level_weights):
                raise ValidationError(f"Level weights must be non-negative, got {self.level_weights}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be non-negative, got {self.alpha}")
        if self.path_target not in PATH_TARGET_MODES:
            raise ValidationError(
                f"Unknown path target mode {self.path_target!r}; expected one of {PATH_TARGET_MODES}"
            )

    def weights_for(self, num_levels: int) -> tuple[float, ...]:
        if self.level_weights is None:
            return (1.0,) * num_levels
        if len(self.level_weights) != num_levels:
            raise ValidationError(
                f"{len(self.level_weights)} level weights given for {num_levels} levels"
            )
        return self.level_weights


def _one_hot(target: np.ndarray, num_classes: int, ignore_index: int) -> tuple[np.ndarray, np.ndarray]:
    """(B, C, H, W) one-hot of `target` (zeros at ignore pixels) and the valid mask."""
    valid = target != ignore_index
    bad = valid & ((target < 0) | (target >= num_classes))
    if bad.any():
        coord = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(
            f"Label {int(target[coord])} at {coord} outside [0, {num_classes})"
        )
    safe = np.where(valid, target, 0)
    onehot = (safe[:, None] == np.arange(num_classes)[None, :, None, None]) & valid[:, None]
    return onehot.astype(np.float64), valid


def _check_pair(logits: Tensor, target: np.ndarray, op: str) -> None:
    if logits.ndim != 4 or target.shape != (logits.shape[0], *logits.shape[2:]):
        raise ShapeError(op, logits.shape, target.shape)


def ce_level(logits, target, ignore_index: int = settings.IGNORE_INDEX) -> Tensor:
    """
    Mean over non-ignore pixels of -log softmax(logits)[label].

    :param logits: (B, C, H, W) tensor.
    :param target: (B, H, W) integer labels.
    """
    logits = ops.as_tensor(logits)
    target = np.asarray(target)
    _check_pair(logits, target, "ce_level")
    onehot, valid = _one_hot(target, logits.shape[1], ignore_index)
    count = int(valid.sum())
    if count == 0:
        raise ValidationError("Every pixel is ignored; cross-entropy is undefined")
    picked = ops.reduce_sum(ops.mul(ops.log_softmax(logits, axis=1), onehot))
    return ops.scale(picked, -1.0 / count)


def _check_levels(per_level_logits: Sequence[Tensor], labels: LevelLabels) -> None:
    if len(per_level_logits) != labels.num_levels:
        raise ValidationError(
            f"Got logits for {len(per_level_logits)} levels and labels for {labels.num_levels}"
        )


def hce(per_level_logits: Sequence[Tensor], labels: LevelLabels, cfg: LossConfig = LossConfig()) -> Tensor:
    _check_levels(per_level_logits, labels)
    weights = cfg.weights_for(labels.num_levels)
    total: Optional[Tensor] = None
    for level, (logits, weight) in enumerate(zip(per_level_logits, weights)):
        if weight == 0.0:
            continue
        term = ops.scale(ce_level(logits, labels[level], cfg.ignore_index), weight)
        total = term if total is None else ops.add(total, term)
    if total is None:
        # All-zero weights: a zero loss still wired to the logits
        return ops.scale(ops.reduce_sum(ops.as_tensor(per_level_logits[0])), 0.0)
    return total


def hpc(per_level_logits: Sequence[Tensor], labels: LevelLabels, cfg: LossConfig = LossConfig()) -> Tensor:
    _check_levels(per_level_logits, labels)
    if not labels.is_complete:
        missing = [i + 1 for i in range(labels.num_levels) if labels.rasters[i] is None]
        raise ValidationError(f"Path consistency needs labels at every level; missing {missing}")
    levels = labels.num_levels
    mass = 1.0 / levels if cfg.path_target == "normalized" else 1.0

    valid = ~labels.ignore_mask()
    count = int(valid.sum())
    if count == 0:
        raise ValidationError("Every pixel is ignored; path consistency is undefined")

    targets = []
    for level, logits in enumerate(per_level_logits):
        logits = ops.as_tensor(logits)
        _check_pair(logits, labels[level], "hpc")
        raster = np.where(valid, labels[level], cfg.ignore_index)
        onehot, _ = _one_hot(raster, logits.shape[1], cfg.ignore_index)
        targets.append(onehot * mass)
    target = np.concatenate(targets, axis=1)

    log_q = ops.log_softmax(ops.concat(list(per_level_logits), axis=1), axis=1)
    cross = ops.scale(ops.reduce_sum(ops.mul(log_q, target)), -1.0 / count)
    # sum t log t is the same for every valid pixel: L entries of `mass`
    entropy_term = levels * mass * np.log(mass)
    return ops.add(cross, entropy_term)


def hsc(per_level_logits: Sequence[Tensor], labels: LevelLabels, cfg: LossConfig = LossConfig()) -> Tensor:
    total = hce(per_level_logits, labels, cfg)
    if cfg.alpha == 0.0:
        return total
    return ops.add(total, ops.scale(hpc(per_level_logits, labels, cfg), cfg.alpha))


def build_loss(mode: str, cfg: LossConfig = LossConfig()) -> LossFn:
    """
    `ce` trains the finest level only (flat networks); `hce` and `hsc` need
    logits for every level.
    """
    if mode == "ce":
        return lambda logits, labels: ce_level(logits[-1], labels[labels.num_levels - 1], cfg.ignore_index)
    if mode == "hce":
        return lambda logits, labels: hce(logits, labels, cfg)
    if mode == "hsc":
        return lambda logits, labels: hsc(logits, labels, cfg)
    raise ValidationError(f"Unknown loss mode {mode!r}; expected one of {LOSS_MODES}")
