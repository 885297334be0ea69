"""
`hieraseg` tree-structured label hierarchies.

A hierarchy document is UTF-8 JSON:

    {
      "levels": [{"name": "L1", "classes": ["vegetation", ...]}, ...],
      "edges": [["cropland", "vegetation"], ...],
      "palette": {"vegetation": [34, 139, 34], ...}      (optional)
    }

Each edge is `[child, parent]`; a child at level i must name a parent at
level i-1. Class names are unique across the whole document, and class
indices follow document order within each level.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Any, Mapping, Optional, Sequence, Union

import numpy as np

from hieraseg.exceptions import HierarchyError, StorageError

logger = logging.getLogger(__name__)

HierarchySource = Union[str, bytes, os.PathLike, IO, Mapping[str, Any]]


@dataclass(frozen=True)
class Level:
    name: str
    classes: tuple[str, ...]

    @property
    def num_classes(self) -> int:
        return len(self.classes)


@dataclass(frozen=True, eq=False)
class Hierarchy:
    """
    An immutable, validated label tree.

    `parent_of[i][c]` is the index, at level i-1, of the parent of class c at
    level i; `parent_of[0]` is empty. `paths` lists every root-to-leaf tuple
    of class indices in lexicographic order (level 1 first), which is also
    the order path decoding uses to break ties.

    Use `load_hierarchy` (or `Hierarchy.from_document`) rather than building
    instances by hand; the constructor trusts its inputs.
    """

    levels: tuple[Level, ...]
    parent_of: tuple[tuple[int, ...], ...]
    palette: Optional[Mapping[str, tuple[int, int, int]]] = field(default=None)

    # -- shape ---------------------------------------------------------------

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def num_classes(self) -> tuple[int, ...]:
        return tuple(level.num_classes for level in self.levels)

    @property
    def level_names(self) -> tuple[str, ...]:
        return tuple(level.name for level in self.levels)

    def class_names(self, level: int) -> tuple[str, ...]:
        return self.levels[level].classes

    def level_index(self, level: Union[int, str]) -> int:
        if isinstance(level, int):
            if not 0 <= level < self.num_levels:
                raise HierarchyError(f"Level index {level} out of range")
            return level
        try:
            return self.level_names.index(level)
        except ValueError:
            raise HierarchyError(f"Unknown level {level!r}", level=level) from None

    def class_index(self, level: Union[int, str], name: str) -> int:
        level = self.level_index(level)
        try:
            return self.levels[level].classes.index(name)
        except ValueError:
            raise HierarchyError(
                f"Unknown class {name!r} at level {self.levels[level].name}",
                class_name=name,
                level=self.levels[level].name,
            ) from None

    # -- tree queries --------------------------------------------------------

    def children(self, level: int, cls: int) -> tuple[int, ...]:
        if level + 1 >= self.num_levels:
            return ()
        return tuple(
            child for child, parent in enumerate(self.parent_of[level + 1])
            if parent == cls
        )

    def ancestor_map(self, from_level: int, to_level: int) -> np.ndarray:
        """
        Return an int64 array mapping every class index at `from_level` to
        its ancestor at `to_level` (identity when the levels are equal).
        """
        assert (
            0 <= to_level <= from_level < self.num_levels
        ), f"Cannot map level {from_level} to level {to_level}"
        mapping = np.arange(self.num_classes[from_level], dtype=np.int64)
        for level in range(from_level, to_level, -1):
            mapping = np.asarray(self.parent_of[level], dtype=np.int64)[mapping]
        return mapping

    def ancestor(self, from_level: int, cls: int, to_level: int) -> int:
        while from_level > to_level:
            cls = self.parent_of[from_level][cls]
            from_level -= 1
        return cls

    def ancestor_table(self) -> np.ndarray:
        """(C_leaf, L) int64 array; row c holds leaf c's class at every level."""
        finest = self.num_levels - 1
        return np.stack(
            [self.ancestor_map(finest, level) for level in range(self.num_levels)], axis=1
        )

    @cached_property
    def paths(self) -> tuple[tuple[int, ...], ...]:
        finest = self.num_levels - 1
        paths = [
            tuple(self.ancestor(finest, leaf, level) for level in range(self.num_levels))
            for leaf in range(self.num_classes[finest])
        ]
        return tuple(sorted(paths))

    @cached_property
    def paths_array(self) -> np.ndarray:
        """`paths` as an int64 array of shape (num_paths, num_levels)."""
        array = np.asarray(self.paths, dtype=np.int64).reshape(-1, self.num_levels)
        array.setflags(write=False)
        return array

    def valid_path_mask(self, tuples: Sequence[np.ndarray]) -> np.ndarray:
        """
        Elementwise test of whether per-level class rasters form valid paths.
        Values outside a level's class range are invalid.
        """
        assert len(tuples) == self.num_levels, "One raster per level required"
        valid = np.ones(np.shape(tuples[0]), dtype=bool)
        for level, raster in enumerate(tuples):
            raster = np.asarray(raster)
            in_range = (raster >= 0) & (raster < self.num_classes[level])
            valid &= in_range
            if level == 0:
                continue
            parents = np.asarray(self.parent_of[level], dtype=np.int64)
            safe = np.where(in_range, raster, 0)
            valid &= parents[safe] == np.asarray(tuples[level - 1])
        return valid

    # -- serialization -------------------------------------------------------

    def to_document(self) -> dict:
        document = {
            "levels": [
                {"name": level.name, "classes": list(level.classes)}
                for level in self.levels
            ],
            "edges": [
                [self.levels[level].classes[child], self.levels[level - 1].classes[parent]]
                for level in range(1, self.num_levels)
                for child, parent in enumerate(self.parent_of[level])
            ],
        }
        if self.palette:
            document["palette"] = {name: list(rgb) for name, rgb in self.palette.items()}
        return document

    def digest(self) -> str:
        canonical = json.dumps(self.to_document(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def color_of(self, level: int, cls: int) -> tuple[int, int, int]:
        name = self.levels[level].classes[cls]
        if self.palette and name in self.palette:
            return tuple(self.palette[name])
        # Stable fallback colour derived from the class name
        digest = hashlib.blake2b(name.encode("utf-8"), digest_size=3).digest()
        return (digest[0], digest[1], digest[2])

    def summary(self) -> str:
        counts = "/".join(str(n) for n in self.num_classes)
        noun = "level" if self.num_levels == 1 else "levels"
        return f"{self.num_levels} {noun}, {counts} classes, {len(self.paths)} paths"

    def structurally_equal(self, other: "Hierarchy") -> bool:
        return self.levels == other.levels and self.parent_of == other.parent_of

    def __repr__(self):
        return f"Hierarchy({self.summary()})"

    # -- construction --------------------------------------------------------

    @classmethod
    def from_document(cls, document: Mapping[str, Any]) -> "Hierarchy":
        if not isinstance(document, Mapping):
            raise HierarchyError("Hierarchy document must be a JSON object")

        raw_levels = document.get("levels")
        if not isinstance(raw_levels, list) or not raw_levels:
            raise HierarchyError("Hierarchy document needs a non-empty 'levels' list")

        levels: list[Level] = []
        where: dict[str, tuple[int, int]] = {}
        for level_idx, raw in enumerate(raw_levels):
            if not isinstance(raw, Mapping):
                raise HierarchyError(f"Level #{level_idx + 1} must be an object")
            name = raw.get("name") or f"L{level_idx + 1}"
            classes = raw.get("classes")
            if not isinstance(classes, list) or not classes:
                raise HierarchyError(f"Level {name} is empty", level=name)
            for class_idx, class_name in enumerate(classes):
                if not isinstance(class_name, str) or not class_name:
                    raise HierarchyError(
                        f"Level {name} has a non-string class at position {class_idx}",
                        level=name,
                    )
                if class_name in where:
                    raise HierarchyError(
                        f"Duplicate class name {class_name!r} at level {name}",
                        class_name=class_name,
                        level=name,
                    )
                where[class_name] = (level_idx, class_idx)
            levels.append(Level(name=name, classes=tuple(classes)))

        if len(set(level.name for level in levels)) != len(levels):
            raise HierarchyError("Level names must be unique")

        parents: list[list[Optional[int]]] = [
            [None] * level.num_classes for level in levels
        ]
        edges = document.get("edges", [])
        if not isinstance(edges, list):
            raise HierarchyError("'edges' must be a list of [child, parent] pairs")
        for edge in edges:
            if not isinstance(edge, (list, tuple)) or len(edge) != 2:
                raise HierarchyError(f"Malformed edge {edge!r}; expected [child, parent]")
            child, parent = edge
            if child not in where:
                raise HierarchyError(f"Edge names unknown class {child!r}", class_name=child)
            if parent not in where:
                raise HierarchyError(f"Edge names unknown class {parent!r}", class_name=parent)
            child_level, child_idx = where[child]
            parent_level, parent_idx = where[parent]
            level_name = levels[child_level].name
            if child_level == 0:
                raise HierarchyError(
                    f"Class {child!r} at root level {level_name} cannot have a parent",
                    class_name=child,
                    level=level_name,
                )
            if parent_level != child_level - 1:
                raise HierarchyError(
                    f"Class {child!r} at level {level_name} must have its parent at "
                    f"level {levels[child_level - 1].name}, got {parent!r} at "
                    f"level {levels[parent_level].name}",
                    class_name=child,
                    level=level_name,
                )
            if parents[child_level][child_idx] is not None:
                raise HierarchyError(
                    f"Class {child!r} at level {level_name} has more than one parent",
                    class_name=child,
                    level=level_name,
                )
            parents[child_level][child_idx] = parent_idx

        for level_idx in range(1, len(levels)):
            for class_idx, parent in enumerate(parents[level_idx]):
                if parent is None:
                    class_name = levels[level_idx].classes[class_idx]
                    raise HierarchyError(
                        f"Orphan class {class_name!r} at level {levels[level_idx].name}",
                        class_name=class_name,
                        level=levels[level_idx].name,
                    )

        # Every non-finest class needs a child so that each leaf path spans all levels
        for level_idx in range(len(levels) - 1):
            has_child = set(parents[level_idx + 1])
            for class_idx, class_name in enumerate(levels[level_idx].classes):
                if class_idx not in has_child:
                    raise HierarchyError(
                        f"Class {class_name!r} at level {levels[level_idx].name} has no "
                        f"children at level {levels[level_idx + 1].name}",
                        class_name=class_name,
                        level=levels[level_idx].name,
                    )

        palette = None
        raw_palette = document.get("palette")
        if raw_palette:
            palette = {}
            for name, rgb in raw_palette.items():
                if name not in where:
                    raise HierarchyError(f"Palette names unknown class {name!r}", class_name=name)
                if len(rgb) != 3 or not all(0 <= int(v) <= 255 for v in rgb):
                    raise HierarchyError(f"Palette entry for {name!r} must be 3 bytes", class_name=name)
                palette[name] = tuple(int(v) for v in rgb)

        hierarchy = cls(
            levels=tuple(levels),
            parent_of=((),) + tuple(tuple(p) for p in parents[1:]),
            palette=palette,
        )
        logger.debug("Loaded hierarchy: %s", hierarchy.summary())
        return hierarchy


def load_hierarchy(source: HierarchySource) -> Hierarchy:
    """
    Load and validate a hierarchy from a path, raw JSON text/bytes, an open
    file, or an already-parsed mapping.
    """
    if isinstance(source, Mapping):
        return Hierarchy.from_document(source)

    if hasattr(source, "read"):
        raw = source.read()
    elif isinstance(source, bytes):
        raw = source
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        raw = source
    else:
        try:
            with open(source, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise StorageError(f"Cannot read hierarchy document {source}: {exc}") from exc

    data = raw if isinstance(raw, bytes) else raw.encode("utf-8")
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise HierarchyError(
            f"Hierarchy document is not UTF-8 (byte offset {exc.start})", offset=exc.start
        ) from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise HierarchyError(
            f"Hierarchy document is not valid JSON at byte offset {offset}: {exc.msg}",
            offset=offset,
        ) from exc
    return Hierarchy.from_document(document)


def dump_hierarchy(hierarchy: Hierarchy, path: Union[str, os.PathLike]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(hierarchy.to_document(), fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise StorageError(f"Cannot write hierarchy document {path}: {exc}") from exc
