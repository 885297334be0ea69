"""
`hieraseg` multi-level decoding.

`argmax_per_level` decodes every level independently and may produce
label tuples that are not paths of the hierarchy. `jsps_decode` scores every
valid path at every pixel as the sum over levels of sigmoid(logit of the
path's class) and keeps the best one, so its output is always consistent.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image

from hieraseg import settings
from hieraseg.exceptions import ShapeError, StorageError, ValidationError
from hieraseg.hierarchy import Hierarchy, LevelLabels, path_validity_rate
from hieraseg.numeric.htf import read_htf, write_htf
from hieraseg.numeric.ops import stable_sigmoid
from hieraseg.numeric.tensor import Tensor

logger = logging.getLogger(__name__)

DECODE_MODES = ("argmax", "jsps")
SCORE_MODES = ("sigmoid", "softmax")


def _as_arrays(per_level_logits: Sequence) -> list[np.ndarray]:
    arrays = [
        np.asarray(l.data if isinstance(l, Tensor) else l, dtype=np.float64) for l in per_level_logits
    ]
    if not arrays:
        raise ValidationError("No logits to decode")
    for array in arrays:
        if array.ndim != 4 or array.shape[0] != arrays[0].shape[0] or array.shape[2:] != arrays[0].shape[2:]:
            raise ShapeError("decode", arrays[0].shape, array.shape)
    return arrays


def _check_channels(arrays: Sequence[np.ndarray], hierarchy: Hierarchy) -> None:
    if len(arrays) != hierarchy.num_levels:
        raise ValidationError(f"Got logits for {len(arrays)} levels, hierarchy has {hierarchy.num_levels}")
    for level, array in enumerate(arrays):
        if array.shape[1] != hierarchy.num_classes[level]:
            raise ShapeError(
                f"decode (level {level + 1} channels)",
                array.shape,
                (array.shape[0], hierarchy.num_classes[level], *array.shape[2:]),
            )


def level_scores(logits: np.ndarray, scores: str = "sigmoid") -> np.ndarray:
    """Per-class scores of one level: sigmoid of the logits, or the class softmax."""
    if scores == "sigmoid":
        return stable_sigmoid(logits)
    if scores == "softmax":
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        return exp / exp.sum(axis=1, keepdims=True)
    raise ValidationError(f"Unknown score mode {scores!r}; expected one of {SCORE_MODES}")


def argmax_per_level(per_level_logits: Sequence) -> LevelLabels:
    """Independent argmax per level; ties go to the lower class index."""
    arrays = _as_arrays(per_level_logits)
    return LevelLabels(tuple(array.argmax(axis=1) for array in arrays))


def consistency_rate(pred: LevelLabels, hierarchy: Hierarchy) -> float:
    return path_validity_rate(hierarchy, pred)


@dataclass(frozen=True)
class PathScores:
    """
    `scores[b, p, y, x]` is the joint score of `paths[p]` at one pixel; path
    order is `Hierarchy.paths` order.
    """

    scores: np.ndarray
    paths: np.ndarray

    @property
    def num_paths(self) -> int:
        return self.paths.shape[0]

    def best(self) -> np.ndarray:
        """Index of the highest-scoring path per pixel (lowest index on ties)."""
        return self.scores.argmax(axis=1)


def _joint_scores(level_arrays: Sequence[np.ndarray], paths: np.ndarray) -> np.ndarray:
    total = level_arrays[0][:, paths[:, 0]]
    for level in range(1, len(level_arrays)):
        total = total + level_arrays[level][:, paths[:, level]]
    return total


def path_scores(per_level_logits: Sequence, hierarchy: Hierarchy, scores: str = "sigmoid") -> PathScores:
    arrays = _as_arrays(per_level_logits)
    _check_channels(arrays, hierarchy)
    paths = hierarchy.paths_array
    return PathScores(_joint_scores([level_scores(a, scores) for a in arrays], paths), paths)


def jsps_decode(
    per_level_logits: Sequence,
    hierarchy: Hierarchy,
    scores: str = "sigmoid",
    tile_rows: int = settings.DECODE_TILE_ROWS,
) -> LevelLabels:
    """
    Joint path selection. Rasters are processed in bands of `tile_rows` rows;
    every band is independent so the result does not depend on the tiling.
    """
    arrays = _as_arrays(per_level_logits)
    _check_channels(arrays, hierarchy)
    assert tile_rows > 0, f"tile_rows must be positive, got {tile_rows}"
    paths = hierarchy.paths_array
    batch, _, height, width = arrays[0].shape
    best = np.empty((batch, height, width), dtype=np.int64)
    for top in range(0, height, tile_rows):
        band = slice(top, min(top + tile_rows, height))
        level_arrays = [level_scores(a[:, :, band], scores) for a in arrays]
        best[:, band] = _joint_scores(level_arrays, paths).argmax(axis=1)
    decoded = LevelLabels(tuple(paths[best, level] for level in range(hierarchy.num_levels)))
    logger.debug("JSPS decoded %d pixels over %d paths", best.size, paths.shape[0])
    return decoded


def decode(per_level_logits: Sequence, hierarchy: Hierarchy, mode: str = "jsps", scores: str = "sigmoid") -> LevelLabels:
    if mode == "jsps":
        return jsps_decode(per_level_logits, hierarchy, scores=scores)
    if mode == "argmax":
        arrays = _as_arrays(per_level_logits)
        _check_channels(arrays, hierarchy)
        return argmax_per_level(arrays)
    raise ValidationError(f"Unknown decode mode {mode!r}; expected one of {DECODE_MODES}")


# -- outputs -------------------------------------------------------------------


def render_preview(raster: np.ndarray, hierarchy: Hierarchy, level: int, ignore_index: int = settings.IGNORE_INDEX) -> Image.Image:
    """Indexed ('P' mode) image of one (H, W) label raster, coloured by the hierarchy palette."""
    num_classes = hierarchy.num_classes[level]
    if num_classes >= 255:
        raise ValidationError(f"Level {level + 1} has too many classes for an indexed preview")
    palette = [0] * (256 * 3)
    for cls in range(num_classes):
        palette[3 * cls : 3 * cls + 3] = hierarchy.color_of(level, cls)
    indexed = np.where(raster == ignore_index, 255, raster).astype(np.uint8)
    image = Image.frombytes("P", (indexed.shape[1], indexed.shape[0]), np.ascontiguousarray(indexed).tobytes())
    image.putpalette(palette)
    return image


def write_level_rasters(
    labels: LevelLabels,
    directory: Union[str, os.PathLike],
    hierarchy: Hierarchy,
    previews: bool = False,
) -> list[Path]:
    """
    Write `L{k}.htf` per level (float64 class indices, shape (B, H, W)) and,
    with `previews`, `previews/L{k}_{b}.png` for every batch item.
    """
    directory = Path(directory)
    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        if previews:
            (directory / "previews").mkdir(exist_ok=True)
    except OSError as exc:
        raise StorageError(f"Cannot create {directory}: {exc}") from exc
    for level in labels.present:
        raster = labels[level]
        path = directory / f"L{level + 1}.htf"
        write_htf(path, raster)
        written.append(path)
        if not previews:
            continue
        stack = raster.reshape(-1, *raster.shape[-2:])
        for index, item in enumerate(stack):
            preview = directory / "previews" / f"L{level + 1}_{index}.png"
            try:
                render_preview(item, hierarchy, level, labels.ignore_index).save(preview)
            except OSError as exc:
                raise StorageError(f"Cannot write {preview}: {exc}") from exc
            written.append(preview)
    return written


def write_level_logits(per_level_logits: Sequence, directory: Union[str, os.PathLike]) -> list[Path]:
    """One `L{k}.htf` per level, shape (B, C_k, H, W)."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"Cannot create {directory}: {exc}") from exc
    written = []
    for level, logits in enumerate(_as_arrays(per_level_logits)):
        path = directory / f"L{level + 1}.htf"
        write_htf(path, logits)
        written.append(path)
    return written


def read_level_logits(directory: Union[str, os.PathLike], hierarchy: Hierarchy) -> list[np.ndarray]:
    directory = Path(directory)
    arrays = [read_htf(directory / f"L{level + 1}.htf") for level in range(hierarchy.num_levels)]
    _check_channels(arrays, hierarchy)
    return arrays


def read_level_rasters(directory: Union[str, os.PathLike], hierarchy: Hierarchy) -> LevelLabels:
    """Labels written by `write_level_rasters`; missing levels stay absent."""
    directory = Path(directory)
    rasters = []
    for level in range(hierarchy.num_levels):
        path = directory / f"L{level + 1}.htf"
        rasters.append(read_htf(path).astype(np.int64) if path.exists() else None)
    if all(r is None for r in rasters):
        raise StorageError(f"No level rasters in {directory}")
    labels = LevelLabels(tuple(rasters))
    labels.validate(hierarchy)
    return labels
