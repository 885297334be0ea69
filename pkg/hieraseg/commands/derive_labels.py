from __future__ import annotations

import argparse
from pathlib import Path
from typing import Any, Optional

import numpy as np

from hieraseg import settings
from hieraseg.decode import write_level_rasters
from hieraseg.hierarchy import LevelLabels, derive_coarse_labels, load_hierarchy, path_validity_rate
from hieraseg.numeric.htf import read_htf

from .base import BaseCommand, RunConfig


class Command(BaseCommand):
    name = "derive-labels"
    help = "Fill the coarser levels of a fine label raster from the hierarchy."

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--hierarchy", type=Path, required=True)
        parser.add_argument("--labels", type=Path, required=True, help="HTF raster of class indices, (H, W) or (B, H, W)")
        parser.add_argument("--level", help="Level name of the raster (default: finest)")
        parser.add_argument("--ignore-index", type=int, default=settings.IGNORE_INDEX)
        parser.add_argument("--previews", action="store_true", help="Also write palette PNGs")

    def handle(self, config: RunConfig, out: Optional[Path]) -> dict[str, Any]:
        hierarchy = load_hierarchy(config.get("hierarchy"))
        level_name = config.get("level")
        level = hierarchy.level_index(level_name) if level_name else hierarchy.num_levels - 1
        raster = read_htf(config.get("labels")).astype(np.int64)
        fine = LevelLabels.single(raster, level, hierarchy.num_levels, config.get("ignore_index"))
        labels = derive_coarse_labels(hierarchy, fine)
        write_level_rasters(labels, out / "labels", hierarchy, previews=config.get("previews"))
        rate = path_validity_rate(hierarchy, labels) if labels.is_complete else None
        self.write(f"derived {level} coarser level(s)" + ("" if rate is None else f"; path validity {rate:.4f}"))
        return {
            "source_level": hierarchy.level_names[level],
            "levels": [hierarchy.level_names[k] for k in labels.present],
            "path_validity_rate": rate,
            "ignored_pixels": int(labels.ignore_mask().sum()),
        }
