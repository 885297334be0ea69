from __future__ import annotations

import argparse
from pathlib import Path
from typing import Any, Optional

from hieraseg import settings
from hieraseg.datagen import SceneSpec, generate, make_crop_target, save_dataset
from hieraseg.hierarchy import fixture_path, load_hierarchy

from .base import BaseCommand, RunConfig


class Command(BaseCommand):
    name = "gen-data"
    help = "Generate a synthetic scene dataset (source task or crop target task)."

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--task", choices=("source", "crop"), default="source")
        parser.add_argument("--hierarchy", type=Path, help="Hierarchy of the generated labels")
        parser.add_argument("--source-hierarchy", type=Path, help="Source hierarchy the crop task is derived from")
        parser.add_argument("--n-images", type=int, default=40)
        parser.add_argument("--image-size", type=int, default=settings.IMAGE_SIZE)
        parser.add_argument("--channels", type=int, default=settings.IMAGE_CHANNELS)
        parser.add_argument("--regions", type=int, default=settings.SCENE_REGIONS)
        parser.add_argument("--noise", type=float, default=settings.SCENE_NOISE)
        parser.add_argument("--crop-fraction", type=float, default=0.6)
        parser.add_argument("--crop-class", default="cropland")
        parser.add_argument("--workers", type=int, default=settings.THREADS)

    def handle(self, config: RunConfig, out: Optional[Path]) -> dict[str, Any]:
        spec = SceneSpec(
            image_size=config.get("image_size"),
            channels=config.get("channels"),
            regions=config.get("regions"),
            noise=config.get("noise"),
            seed=config.seed,
        )
        workers = min(config.get("workers"), settings.THREADS)
        if config.get("task") == "source":
            hierarchy = load_hierarchy(config.get("hierarchy") or fixture_path("mm5b.json"))
            dataset = generate(spec, hierarchy, config.get("n_images"), workers=workers)
        else:
            source = load_hierarchy(config.get("source_hierarchy") or fixture_path("mm5b.json"))
            hierarchy = load_hierarchy(config.get("hierarchy") or fixture_path("crop.json"))
            dataset = make_crop_target(
                spec,
                source,
                hierarchy,
                config.get("n_images"),
                crop_fraction=config.get("crop_fraction"),
                crop_class=config.get("crop_class"),
                workers=workers,
            )
        save_dataset(dataset, out / "data")
        self.write(f"{len(dataset)} scenes, separability {dataset.meta['separability']:.3f}")
        return {"count": len(dataset), "data": str(out / "data"), **dataset.meta}
