"""
`hieraseg` synthetic hierarchical scenes.

A scene is a Voronoi partition of the image into `regions` cells. Every cell
gets a finest-level class and every pixel is that class's spectral mean plus
Gaussian noise; coarser labels are derived through the hierarchy. Spectral
means are drawn top-down (level-1 centres, then offsets per level), so
siblings are closer to each other than to cousins, and leaf means are
re-drawn until they are at least `min_mean_distance` apart.

The crop target task reuses the source spectral model: its crop leaves sit
next to the source cropland leaves, and every non-crop cell borrows the
spectrum of a random source leaf outside the cropland's level-1 branch.

On disk a dataset is:

    images/0000.htf             (C, H, W)
    labels/L1/0000.htf          (H, W) class indices, one directory per level
    hierarchy.json
    manifest.json               seed, spec echo, separability, sha256 checksums
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from hieraseg import settings
from hieraseg.exceptions import StorageError, ValidationError
from hieraseg.hierarchy import (
    Hierarchy,
    LevelLabels,
    derive_coarse_labels,
    dump_hierarchy,
    load_hierarchy,
)
from hieraseg.numeric.htf import decode_htf, encode_htf, read_htf
from hieraseg.numeric.rng import derive_rng

logger = logging.getLogger(__name__)

DATASET_FORMAT = 1

# Spread of the level-1 centres and of each finer level's offsets
LEVEL_SPREAD = (3.0, 1.5, 1.0)
MAX_DRAWS = 1000


@dataclass(frozen=True)
class SceneSpec:
    image_size: int = settings.IMAGE_SIZE
    channels: int = settings.IMAGE_CHANNELS
    regions: int = settings.SCENE_REGIONS
    noise: float = settings.SCENE_NOISE
    seed: int = settings.DEFAULT_SEED
    min_mean_distance: float = settings.SCENE_MIN_MEAN_DISTANCE
    min_separability: float = settings.SCENE_MIN_SEPARABILITY

    def __post_init__(self):
        if self.image_size < 2 or self.channels < 1 or self.regions < 1:
            raise ValidationError(f"Invalid scene spec {self}")
        if self.noise < 0:
            raise ValidationError(f"Noise scale must be non-negative, got {self.noise}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class SpectralModel:
    """
    `means[k]` is a spectral mean owned by finest-level class `owners[k]`;
    a class may own several means (multimodal background classes).
    """

    means: np.ndarray
    owners: np.ndarray

    def means_of(self, leaf: int) -> np.ndarray:
        return np.flatnonzero(self.owners == leaf)


@dataclass
class Dataset:
    images: np.ndarray
    labels: LevelLabels
    hierarchy: Hierarchy
    meta: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.images.shape[0]

    def batch(self, indices) -> tuple[np.ndarray, LevelLabels]:
        indices = np.asarray(indices)
        return self.images[indices], self.labels.take(indices)

    def split(self, val_fraction: float) -> tuple["Dataset", "Dataset"]:
        """Deterministic head/tail split: the last `val_fraction` of items is validation."""
        if not 0.0 < val_fraction < 1.0:
            raise ValidationError(f"val_fraction must lie in (0, 1), got {val_fraction}")
        n_val = max(1, int(round(len(self) * val_fraction)))
        if n_val >= len(self):
            raise ValidationError(f"Cannot split {len(self)} items with val_fraction {val_fraction}")
        cut = len(self) - n_val
        head = Dataset(self.images[:cut], self.labels.take(slice(None, cut)), self.hierarchy, dict(self.meta))
        tail = Dataset(self.images[cut:], self.labels.take(slice(cut, None)), self.hierarchy, dict(self.meta))
        return head, tail


# -- spectra -------------------------------------------------------------------


def _draw_separated(rng, centre: np.ndarray, spread: float, existing: list[np.ndarray], min_distance: float) -> np.ndarray:
    for _ in range(MAX_DRAWS):
        candidate = centre + rng.normal(0.0, spread, centre.shape)
        if all(np.linalg.norm(candidate - other) >= min_distance for other in existing):
            return candidate
    raise ValidationError(
        f"Could not place a spectral mean {min_distance} away from {len(existing)} others; "
        f"lower min_mean_distance or add channels"
    )


def source_spectra(spec: SceneSpec, hierarchy: Hierarchy) -> SpectralModel:
    rng = derive_rng(spec.seed, "spectra")
    finest = hierarchy.num_levels - 1
    means: list[np.ndarray] = []
    for level in range(hierarchy.num_levels):
        spread = LEVEL_SPREAD[min(level, len(LEVEL_SPREAD) - 1)]
        level_means = []
        for cls in range(hierarchy.num_classes[level]):
            centre = np.zeros(spec.channels) if level == 0 else means[hierarchy.parent_of[level][cls]]
            if level == finest:
                level_means.append(_draw_separated(rng, centre, spread, level_means, spec.min_mean_distance))
            else:
                level_means.append(centre + rng.normal(0.0, spread, spec.channels))
        means = level_means
    return SpectralModel(np.stack(means), np.arange(len(means)))


def nearest_mean_accuracy(images: np.ndarray, leaves: np.ndarray, model: SpectralModel) -> float:
    """Pixel accuracy of assigning each pixel the owner of its nearest mean."""
    pixels = np.moveaxis(images, 1, -1).reshape(-1, images.shape[1])
    distances = ((pixels[:, None, :] - model.means[None, :, :]) ** 2).sum(axis=-1)
    predicted = model.owners[distances.argmin(axis=1)]
    return float((predicted == leaves.reshape(-1)).mean())


# -- scenes --------------------------------------------------------------------


def _voronoi(rng, size: int, regions: int) -> np.ndarray:
    seeds = rng.uniform(0, size, (regions, 2))
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    d = (yy[..., None] - seeds[:, 0]) ** 2 + (xx[..., None] - seeds[:, 1]) ** 2
    return d.argmin(axis=-1)


def _balanced(rng, choices: int, count: int) -> np.ndarray:
    """`count` draws from range(choices) covering every choice as evenly as possible."""
    cycled = np.concatenate([rng.permutation(choices) for _ in range(-(-count // choices))])
    return rng.permutation(cycled[:count])


def _render(rng, cells: np.ndarray, region_means: np.ndarray, noise: float) -> np.ndarray:
    image = np.moveaxis(region_means[cells], -1, 0)
    if noise:
        image = image + rng.normal(0.0, noise, image.shape)
    return image


def _source_scene(args) -> tuple[np.ndarray, np.ndarray]:
    spec, model, num_leaves, index = args
    rng = derive_rng(spec.seed, f"scene/{index}")
    cells = _voronoi(rng, spec.image_size, spec.regions)
    region_leaves = _balanced(rng, num_leaves, spec.regions)
    region_means = np.stack([model.means[rng.choice(model.means_of(leaf))] for leaf in region_leaves])
    return _render(rng, cells, region_means, spec.noise), region_leaves[cells]


def _crop_scene(args) -> tuple[np.ndarray, np.ndarray]:
    spec, model, crop_leaves, background_leaf, crop_fraction, index = args
    rng = derive_rng(spec.seed, f"crop-scene/{index}")
    cells = _voronoi(rng, spec.image_size, spec.regions)
    is_crop = rng.random(spec.regions) < crop_fraction
    crops = np.asarray(crop_leaves)[_balanced(rng, len(crop_leaves), spec.regions)]
    region_leaves = np.where(is_crop, crops, background_leaf)
    region_means = np.stack([model.means[rng.choice(model.means_of(leaf))] for leaf in region_leaves])
    return _render(rng, cells, region_means, spec.noise), region_leaves[cells]


def _run(worker, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [worker(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, jobs))


def _assemble(
    images: list[np.ndarray],
    leaves: list[np.ndarray],
    hierarchy: Hierarchy,
    model: SpectralModel,
    spec: SceneSpec,
    meta: dict[str, Any],
) -> Dataset:
    image_stack = np.stack(images)
    leaf_stack = np.stack(leaves)
    fine = LevelLabels.single(leaf_stack, hierarchy.num_levels - 1, hierarchy.num_levels)
    labels = derive_coarse_labels(hierarchy, fine)
    separability = nearest_mean_accuracy(image_stack, leaf_stack, model)
    if separability < spec.min_separability:
        raise ValidationError(
            f"Scenes are not separable enough: nearest-mean accuracy {separability:.3f} "
            f"< {spec.min_separability} (noise {spec.noise})"
        )
    meta = {**meta, "spec": spec.to_dict(), "separability": separability, "count": len(images)}
    logger.info("Generated %d scenes, nearest-mean accuracy %.4f", len(images), separability)
    return Dataset(image_stack, labels, hierarchy, meta)


def generate(spec: SceneSpec, hierarchy: Hierarchy, n_images: int, workers: int = settings.THREADS) -> Dataset:
    if n_images < 1:
        raise ValidationError(f"n_images must be at least 1, got {n_images}")
    model = source_spectra(spec, hierarchy)
    if model.means.shape[1] != spec.channels:
        raise ValidationError("Spectral model does not match the spec channel count")
    num_leaves = hierarchy.num_classes[-1]
    jobs = [(spec, model, num_leaves, index) for index in range(n_images)]
    results = _run(_source_scene, jobs, workers)
    return _assemble(
        [image for image, _ in results],
        [leaves for _, leaves in results],
        hierarchy,
        model,
        spec,
        {"task": "source", "hierarchy_digest": hierarchy.digest()},
    )


def _finest_descendants(hierarchy: Hierarchy, name: str) -> tuple[int, list[int]]:
    for level in range(hierarchy.num_levels):
        if name in hierarchy.class_names(level):
            cls = hierarchy.class_index(level, name)
            finest = hierarchy.num_levels - 1
            mapping = hierarchy.ancestor_map(finest, level)
            return level, [int(leaf) for leaf in np.flatnonzero(mapping == cls)]
    raise ValidationError(f"Class {name!r} is not in the hierarchy")


def crop_spectra(
    spec: SceneSpec,
    source_hierarchy: Hierarchy,
    crop_hierarchy: Hierarchy,
    crop_class: str = "cropland",
) -> tuple[SpectralModel, list[int], int]:
    """
    Spectral model of the crop task, its crop leaves, and the single
    background leaf that every non-crop cell is labelled with.
    """
    source = source_spectra(spec, source_hierarchy)
    crop_level, source_crop = _finest_descendants(source_hierarchy, crop_class)
    # Background cells never borrow from the crop class's root branch
    root = source_hierarchy.ancestor(crop_level, source_hierarchy.class_index(crop_level, crop_class), 0)
    roots = source_hierarchy.ancestor_map(source_hierarchy.num_levels - 1, 0)
    _, crop_leaves = _finest_descendants(crop_hierarchy, crop_class)
    background = sorted(set(range(crop_hierarchy.num_classes[-1])) - set(crop_leaves))
    if len(background) != 1:
        raise ValidationError(
            f"The crop hierarchy needs exactly one leaf outside {crop_class!r}, found {len(background)}"
        )
    rng = derive_rng(spec.seed, "crop-spectra")
    placed = list(source.means)
    means, owners = [], []
    for k, leaf in enumerate(crop_leaves):
        centre = source.means[source_crop[k % len(source_crop)]]
        mean = _draw_separated(rng, centre, LEVEL_SPREAD[-1], placed, spec.min_mean_distance)
        placed.append(mean)
        means.append(mean)
        owners.append(leaf)
    for source_leaf in range(source_hierarchy.num_classes[-1]):
        if roots[source_leaf] != root:
            means.append(source.means[source_leaf])
            owners.append(background[0])
    if len(owners) == len(crop_leaves):
        raise ValidationError(f"The source hierarchy has no leaves outside the root branch of {crop_class!r}")
    return SpectralModel(np.stack(means), np.asarray(owners)), crop_leaves, background[0]


def make_crop_target(
    spec_src: SceneSpec,
    source_hierarchy: Hierarchy,
    crop_hierarchy: Hierarchy,
    n_images: int,
    crop_fraction: float = 0.6,
    crop_class: str = "cropland",
    workers: int = settings.THREADS,
) -> Dataset:
    """
    Scenes labelled under `crop_hierarchy` whose `crop_class` leaves split
    the source task's `crop_class` leaves into new crop types.
    """
    if n_images < 1:
        raise ValidationError(f"n_images must be at least 1, got {n_images}")
    if not 0.0 < crop_fraction <= 1.0:
        raise ValidationError(f"crop_fraction must lie in (0, 1], got {crop_fraction}")
    model, crop_leaves, background = crop_spectra(spec_src, source_hierarchy, crop_hierarchy, crop_class)
    jobs = [(spec_src, model, crop_leaves, background, crop_fraction, index) for index in range(n_images)]
    results = _run(_crop_scene, jobs, workers)
    return _assemble(
        [image for image, _ in results],
        [leaves for _, leaves in results],
        crop_hierarchy,
        model,
        spec_src,
        {
            "task": "crop",
            "crop_fraction": crop_fraction,
            "crop_class": crop_class,
            "source_hierarchy_digest": source_hierarchy.digest(),
            "hierarchy_digest": crop_hierarchy.digest(),
        },
    )


# -- storage -------------------------------------------------------------------


def _put(directory: Path, relative: str, array: np.ndarray, checksums: dict[str, str]) -> None:
    data = encode_htf(array)
    path = directory / relative
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise StorageError(f"Cannot write {path}: {exc}") from exc
    checksums[relative] = hashlib.sha256(data).hexdigest()


def save_dataset(dataset: Dataset, directory: Union[str, os.PathLike]) -> Path:
    directory = Path(directory)
    checksums: dict[str, str] = {}
    for index in range(len(dataset)):
        name = f"{index:04d}.htf"
        _put(directory, f"images/{name}", dataset.images[index], checksums)
        for level in dataset.labels.present:
            _put(directory, f"labels/L{level + 1}/{name}", dataset.labels[level][index], checksums)
    dump_hierarchy(dataset.hierarchy, directory / "hierarchy.json")
    manifest = {
        "format": DATASET_FORMAT,
        **dataset.meta,
        "count": len(dataset),
        "levels": [level + 1 for level in dataset.labels.present],
        "checksums": dict(sorted(checksums.items())),
    }
    try:
        with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise StorageError(f"Cannot write dataset manifest in {directory}: {exc}") from exc
    logger.info("Wrote %d scenes to %s", len(dataset), directory)
    return directory


def _get(directory: Path, relative: str, checksums: dict[str, str], verify: bool) -> np.ndarray:
    path = directory / relative
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"Cannot read {path}: {exc}") from exc
    if verify:
        expected = checksums.get(relative)
        if expected is None:
            raise StorageError(f"{relative} is not listed in the dataset manifest")
        if hashlib.sha256(data).hexdigest() != expected:
            raise StorageError(f"Checksum mismatch for {path}")
    return decode_htf(data)


def load_dataset(
    directory: Union[str, os.PathLike],
    verify: bool = True,
    hierarchy: Optional[Hierarchy] = None,
) -> Dataset:
    directory = Path(directory)
    try:
        with open(directory / "manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise StorageError(f"Cannot read dataset manifest in {directory}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StorageError(f"Corrupt dataset manifest in {directory}: {exc}") from exc
    if manifest.get("format") != DATASET_FORMAT:
        raise StorageError(f"Unsupported dataset format {manifest.get('format')!r}")

    stored = load_hierarchy(directory / "hierarchy.json")
    if hierarchy is not None and hierarchy.digest() != stored.digest():
        raise ValidationError(f"Dataset {directory} uses a different hierarchy")
    hierarchy = hierarchy or stored

    checksums = manifest.get("checksums", {})
    count = int(manifest["count"])
    images = np.stack([_get(directory, f"images/{i:04d}.htf", checksums, verify) for i in range(count)])
    rasters: list[Optional[np.ndarray]] = [None] * hierarchy.num_levels
    for level_number in manifest["levels"]:
        rasters[level_number - 1] = np.stack(
            [
                _get(directory, f"labels/L{level_number}/{i:04d}.htf", checksums, verify)
                for i in range(count)
            ]
        ).astype(np.int64)
    labels = LevelLabels(tuple(rasters))
    labels.validate(hierarchy)
    meta = {k: v for k, v in manifest.items() if k not in ("checksums", "format", "levels")}
    logger.debug("Loaded %d scenes from %s", count, directory)
    return Dataset(images, labels, hierarchy, meta)


def load_images(paths: Sequence[Union[str, os.PathLike]]) -> np.ndarray:
    """Stack individual (C, H, W) HTF images into a batch."""
    return np.stack([read_htf(path) for path in paths])
