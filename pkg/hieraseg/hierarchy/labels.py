"""
`hieraseg` per-level label rasters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from hieraseg import settings
from hieraseg.exceptions import ValidationError

from .tree import Hierarchy

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LevelLabels:
    """
    Class-index rasters for some or all levels of a hierarchy.

    `rasters[i]` is an integer array for level i, or None when that level is
    absent. Present rasters share one shape `(..., H, W)`; leading axes are
    batch axes. `ignore_index` marks unlabeled pixels at every level.
    """

    rasters: tuple[Optional[np.ndarray], ...]
    ignore_index: int = settings.IGNORE_INDEX

    def __post_init__(self):
        rasters = tuple(
            None if r is None else np.asarray(r).astype(np.int64, copy=False)
            for r in self.rasters
        )
        shapes = {r.shape for r in rasters if r is not None}
        if not shapes:
            raise ValidationError("LevelLabels needs at least one present level")
        if len(shapes) != 1:
            raise ValidationError(f"Level rasters disagree in shape: {sorted(shapes)}")
        if len(next(iter(shapes))) < 2:
            raise ValidationError("Label rasters need at least 2 dims (H, W)")
        object.__setattr__(self, "rasters", rasters)

    @classmethod
    def single(
        cls,
        raster: np.ndarray,
        level: int,
        num_levels: int,
        ignore_index: int = settings.IGNORE_INDEX,
    ) -> "LevelLabels":
        rasters: list[Optional[np.ndarray]] = [None] * num_levels
        rasters[level] = raster
        return cls(tuple(rasters), ignore_index)

    @property
    def num_levels(self) -> int:
        return len(self.rasters)

    @property
    def shape(self) -> tuple[int, ...]:
        return next(r.shape for r in self.rasters if r is not None)

    @property
    def height(self) -> int:
        return self.shape[-2]

    @property
    def width(self) -> int:
        return self.shape[-1]

    @property
    def present(self) -> tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.rasters) if r is not None)

    @property
    def is_complete(self) -> bool:
        return len(self.present) == self.num_levels

    @property
    def finest_present(self) -> int:
        return self.present[-1]

    def __getitem__(self, level: int) -> np.ndarray:
        raster = self.rasters[level]
        if raster is None:
            raise ValidationError(f"Level {level + 1} labels are missing")
        return raster

    def ignore_mask(self) -> np.ndarray:
        """True where any present level is the ignore value."""
        mask = np.zeros(self.shape, dtype=bool)
        for level in self.present:
            mask |= self.rasters[level] == self.ignore_index
        return mask

    def take(self, index) -> "LevelLabels":
        """Select along the leading (batch) axis."""
        return LevelLabels(
            tuple(None if r is None else r[index] for r in self.rasters),
            self.ignore_index,
        )

    def validate(self, hierarchy: Hierarchy) -> None:
        if self.num_levels != hierarchy.num_levels:
            raise ValidationError(
                f"Labels have {self.num_levels} levels, hierarchy has {hierarchy.num_levels}"
            )
        for level in self.present:
            _check_range(self.rasters[level], level, hierarchy.num_classes[level], self.ignore_index)


def _check_range(raster: np.ndarray, level: int, num_classes: int, ignore_index: int):
    bad = (raster != ignore_index) & ((raster < 0) | (raster >= num_classes))
    if bad.any():
        coord = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(
            f"Invalid class index {int(raster[coord])} at pixel {coord} for level "
            f"{level + 1} ({num_classes} classes)"
        )


def stack_labels(items: Sequence[LevelLabels]) -> LevelLabels:
    """Stack same-shaped labels along a new leading axis."""
    assert items, "Nothing to stack"
    first = items[0]
    rasters = []
    for level in range(first.num_levels):
        if first.rasters[level] is None:
            rasters.append(None)
        else:
            rasters.append(np.stack([item[level] for item in items]))
    return LevelLabels(tuple(rasters), first.ignore_index)


def derive_coarse_labels(hierarchy: Hierarchy, fine: LevelLabels) -> LevelLabels:
    """
    Fill every level coarser than the finest present level of `fine` with
    the ancestor of each fine pixel. Ignore pixels stay ignore at every level.
    Levels finer than the source level stay absent.
    """
    if fine.num_levels != hierarchy.num_levels:
        raise ValidationError(
            f"Labels have {fine.num_levels} levels, hierarchy has {hierarchy.num_levels}"
        )
    source_level = fine.finest_present
    source = fine[source_level]
    _check_range(source, source_level, hierarchy.num_classes[source_level], fine.ignore_index)

    ignored = source == fine.ignore_index
    safe = np.where(ignored, 0, source)
    rasters: list[Optional[np.ndarray]] = [None] * hierarchy.num_levels
    rasters[source_level] = source
    for level in range(source_level):
        ancestors = hierarchy.ancestor_map(source_level, level)[safe]
        rasters[level] = np.where(ignored, fine.ignore_index, ancestors)
    logger.debug(
        "Derived %d coarse level(s) from level %d over %d pixels (%d ignored)",
        source_level,
        source_level + 1,
        source.size,
        int(ignored.sum()),
    )
    return LevelLabels(tuple(rasters), fine.ignore_index)


def aggregate_flat_prediction(hierarchy: Hierarchy, fine_pred: LevelLabels) -> LevelLabels:
    """
    Lift a flat (finest-level only) prediction to every level of the tree;
    the evaluation path for models without a hierarchical head.
    """
    return derive_coarse_labels(hierarchy, fine_pred)


def path_validity_rate(hierarchy: Hierarchy, labels: LevelLabels) -> float:
    """
    Fraction of non-ignore pixels whose per-level tuple is a valid path.
    A raster with no evaluable pixels is vacuously consistent (1.0).
    """
    if not labels.is_complete:
        raise ValidationError("Path validity needs labels at every level")
    evaluated = ~labels.ignore_mask()
    total = int(evaluated.sum())
    if total == 0:
        return 1.0
    valid = hierarchy.valid_path_mask([labels[i] for i in range(labels.num_levels)])
    return float((valid & evaluated).sum()) / total
