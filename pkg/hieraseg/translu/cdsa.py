"""
`hieraseg` cross-domain semantic alignment.

The frozen Branch 2 predicts coarse classes that also exist in the target
task (vegetation, cropland, ...). Its softmax probability for such a class
is a soft region-of-interest mask, multiplied into the matching channel of
Branch 1's head input at the matching level. Unmapped channels and the
finest Branch 1 level pass through unchanged.

A mapping document is a JSON list:

    [{"node": "cropland",
      "branch2_level": "L2", "branch2_class": "cropland",
      "branch1_level": "L2", "branch1_class": "cropland"}, ...]
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Mapping, Sequence, Union

import numpy as np

from hieraseg.exceptions import ShapeError, StorageError, ValidationError
from hieraseg.hierarchy import Hierarchy
from hieraseg.numeric import ops
from hieraseg.numeric.tensor import Tensor

logger = logging.getLogger(__name__)

MAPPING_KEYS = ("node", "branch2_level", "branch2_class", "branch1_level", "branch1_class")


@dataclass(frozen=True)
class MappingEntry:
    node: str
    branch2_level: int
    branch2_class: int
    branch1_level: int
    branch1_class: int


def resolve_mapping(
    document: Sequence[Mapping[str, Any]],
    branch2: Hierarchy,
    branch1: Hierarchy,
) -> tuple[MappingEntry, ...]:
    """Resolve names to indices; every node maps exactly once and never onto the finest Branch 1 level."""
    if not isinstance(document, list):
        raise ValidationError("Cross-domain mapping must be a JSON list")
    entries = []
    seen_nodes: set[str] = set()
    seen_targets: set[tuple[int, int]] = set()
    for raw in document:
        if not isinstance(raw, Mapping) or set(raw) != set(MAPPING_KEYS):
            raise ValidationError(f"Mapping entry {raw!r} must have exactly the keys {MAPPING_KEYS}")
        node = raw["node"]
        if node in seen_nodes:
            raise ValidationError(f"Node {node!r} is mapped more than once")
        seen_nodes.add(node)
        level2 = branch2.level_index(raw["branch2_level"])
        level1 = branch1.level_index(raw["branch1_level"])
        entry = MappingEntry(
            node=node,
            branch2_level=level2,
            branch2_class=branch2.class_index(level2, raw["branch2_class"]),
            branch1_level=level1,
            branch1_class=branch1.class_index(level1, raw["branch1_class"]),
        )
        if level1 == branch1.num_levels - 1:
            raise ValidationError(f"Node {node!r} targets the finest Branch 1 level, which is never constrained")
        if (level1, entry.branch1_class) in seen_targets:
            raise ValidationError(f"Node {node!r} constrains a Branch 1 channel that is already constrained")
        seen_targets.add((level1, entry.branch1_class))
        entries.append(entry)
    logger.debug("Resolved %d cross-domain mapping entries", len(entries))
    return tuple(entries)


def load_mapping(
    source: Union[str, os.PathLike],
    branch2: Hierarchy,
    branch1: Hierarchy,
) -> tuple[MappingEntry, ...]:
    try:
        with open(source, encoding="utf-8") as fh:
            document = json.load(fh)
    except OSError as exc:
        raise StorageError(f"Cannot read mapping {source}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"Mapping {source} is not valid JSON: {exc}") from exc
    return resolve_mapping(document, branch2, branch1)


def _softmax_channel(logits: np.ndarray, channel: int) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp[:, channel : channel + 1] / exp.sum(axis=1, keepdims=True)


def cdsa_masks(
    branch2_logits: Sequence,
    mapping: Sequence[MappingEntry],
) -> dict[str, np.ndarray]:
    """(B, 1, H, W) soft mask per mapped node: Branch 2's class softmax at the mapped channel."""
    masks = {}
    for entry in mapping:
        if entry.branch2_level >= len(branch2_logits):
            raise ValidationError(f"Node {entry.node!r}: Branch 2 has no level {entry.branch2_level + 1}")
        logits = branch2_logits[entry.branch2_level]
        logits = np.asarray(logits.data if isinstance(logits, Tensor) else logits)
        if not 0 <= entry.branch2_class < logits.shape[1]:
            raise ValidationError(
                f"Node {entry.node!r}: class {entry.branch2_class} out of range for "
                f"{logits.shape[1]} Branch 2 channels"
            )
        masks[entry.node] = _softmax_channel(logits, entry.branch2_class)
    return masks


def cdsa_fuse(
    z_in: Sequence[Tensor],
    masks: Mapping[str, np.ndarray],
    mapping: Sequence[MappingEntry],
    residual: bool = False,
) -> list[Tensor]:
    """
    Multiply each mapped Branch 1 channel by its mask (by 1 + mask when
    `residual`). Levels without a mapped node are returned as-is.
    """
    fused = list(z_in)
    multipliers: dict[int, np.ndarray] = {}
    for entry in mapping:
        level = entry.branch1_level
        if level >= len(z_in) - 1:
            raise ValidationError(f"Node {entry.node!r} targets the finest level, which passes through")
        z = z_in[level]
        mask = np.asarray(masks[entry.node])
        if mask.shape != (z.shape[0], 1, *z.shape[2:]):
            raise ShapeError(f"cdsa_fuse ({entry.node})", z.shape, mask.shape)
        if not 0 <= entry.branch1_class < z.shape[1]:
            raise ShapeError(f"cdsa_fuse ({entry.node} channel {entry.branch1_class})", z.shape)
        multiplier = multipliers.setdefault(level, np.ones(z.shape))
        multiplier[:, entry.branch1_class : entry.branch1_class + 1] = 1.0 + mask if residual else mask
    for level, multiplier in multipliers.items():
        fused[level] = ops.mul(z_in[level], multiplier)
    return fused
