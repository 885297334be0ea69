from __future__ import annotations

import argparse
from pathlib import Path
from typing import Any, Optional

from hieraseg.hierarchy import load_hierarchy
from hieraseg.translu import load_mapping

from .base import BaseCommand, RunConfig


class Command(BaseCommand):
    name = "validate-hierarchy"
    help = "Check a hierarchy document (and optionally a cross-domain mapping onto it)."
    requires_out = False

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("hierarchy", type=Path)
        parser.add_argument("--mapping", type=Path, help="Cross-domain mapping whose Branch 1 side is this hierarchy")
        parser.add_argument("--source-hierarchy", type=Path, help="Branch 2 hierarchy of the mapping")

    def handle(self, config: RunConfig, out: Optional[Path]) -> dict[str, Any]:
        hierarchy = load_hierarchy(config.get("hierarchy"))
        self.write(hierarchy.summary())
        summary = {
            "levels": list(hierarchy.level_names),
            "num_classes": list(hierarchy.num_classes),
            "num_paths": len(hierarchy.paths),
            "digest": hierarchy.digest(),
        }
        mapping_path = config.get("mapping")
        if mapping_path is not None:
            source_path = config.get("source_hierarchy")
            source = load_hierarchy(source_path) if source_path else hierarchy
            entries = load_mapping(mapping_path, source, hierarchy)
            self.write(f"mapping: {len(entries)} constrained nodes")
            summary["mapping_nodes"] = [entry.node for entry in entries]
        return summary
