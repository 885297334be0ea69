from pathlib import Path

from .tree import Level, Hierarchy, load_hierarchy, dump_hierarchy
from .labels import (
    LevelLabels,
    stack_labels,
    derive_coarse_labels,
    aggregate_flat_prediction,
    path_validity_rate,
)

FIXTURES_DIR = Path(__file__).resolve().parent.parent / "fixtures"


def fixture_path(name: str) -> Path:
    """Path of a bundled document, e.g. `fixture_path("mm5b.json")`."""
    return FIXTURES_DIR / name
