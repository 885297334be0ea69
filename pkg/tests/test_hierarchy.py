"""
Tests for hierarchy documents: loading, validation, tree queries and paths.
"""
import io
import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from hieraseg.exceptions import HierarchyError, StorageError
from hieraseg.hierarchy import dump_hierarchy, fixture_path, load_hierarchy


def document(levels, edges=(), palette=None):
    doc = {
        "levels": [{"name": f"L{i + 1}", "classes": list(classes)} for i, classes in enumerate(levels)],
        "edges": [list(edge) for edge in edges],
    }
    if palette is not None:
        doc["palette"] = palette
    return doc


class TestLoadHierarchy(unittest.TestCase):
    def setUp(self):
        self.mm5b = load_hierarchy(fixture_path("mm5b.json"))

    def test_mm5b_shape(self):
        """Test that the bundled three-level tree has 4/9/18 classes and 18 paths."""
        self.assertEqual(self.mm5b.num_levels, 3)
        self.assertEqual(self.mm5b.num_classes, (4, 9, 18))
        self.assertEqual(len(self.mm5b.paths), 18)
        self.assertEqual(self.mm5b.summary(), "3 levels, 4/9/18 classes, 18 paths")
        self.assertEqual(self.mm5b.level_names, ("L1", "L2", "L3"))

    def test_single_level_tree(self):
        """Test that a one-level document has one path per class and no parents."""
        h = load_hierarchy(document([["a", "b", "c", "d", "e"]]))
        self.assertEqual(len(h.paths), 5)
        self.assertEqual(h.parent_of, ((),))
        self.assertEqual(h.summary(), "1 level, 5 classes, 5 paths")

    def test_crop_tree_paths(self):
        """Test that the crop tree has one path per crop plus the others branch."""
        h = load_hierarchy(fixture_path("crop.json"))
        self.assertEqual(len(h.paths), 4)
        rice = h.class_index("L3", "rice")
        self.assertEqual(h.ancestor(2, rice, 0), h.class_index("L1", "vegetation"))
        other = h.class_index("L3", "other")
        self.assertEqual(h.ancestor(2, other, 0), h.class_index("L1", "others"))

    def test_accepts_every_source_kind(self):
        """Test that paths, JSON text, bytes, files and mappings all load the same tree."""
        raw = fixture_path("crop.json").read_text(encoding="utf-8")
        sources = [
            fixture_path("crop.json"),
            str(fixture_path("crop.json")),
            raw,
            raw.encode("utf-8"),
            io.StringIO(raw),
            json.loads(raw),
        ]
        loaded = [load_hierarchy(source) for source in sources]
        for h in loaded[1:]:
            self.assertTrue(h.structurally_equal(loaded[0]))
            self.assertEqual(h.digest(), loaded[0].digest())

    def test_paths_are_sorted_and_valid(self):
        """Test that paths are listed lexicographically and each one is a chain of parents."""
        paths = self.mm5b.paths
        self.assertEqual(list(paths), sorted(paths))
        for path in paths:
            for level in range(1, 3):
                self.assertEqual(self.mm5b.parent_of[level][path[level]], path[level - 1])
        self.assertEqual(self.mm5b.paths_array.shape, (18, 3))
        self.assertFalse(self.mm5b.paths_array.flags.writeable)

    def test_ancestor_map_composes(self):
        """Test that mapping two levels up equals mapping one level up twice."""
        h = self.mm5b
        two_steps = h.ancestor_map(1, 0)[h.ancestor_map(2, 1)]
        np.testing.assert_array_equal(h.ancestor_map(2, 0), two_steps)
        np.testing.assert_array_equal(h.ancestor_map(1, 1), np.arange(9))

    def test_dry_cropland_ancestors(self):
        """Test that dry cropland sits under cropland and vegetation."""
        h = self.mm5b
        dry = h.class_index("L3", "dry_cropland")
        self.assertEqual(h.class_names(1)[h.ancestor(2, dry, 1)], "cropland")
        self.assertEqual(h.class_names(0)[h.ancestor(2, dry, 0)], "vegetation")
        table = h.ancestor_table()
        self.assertEqual(table.shape, (18, 3))
        self.assertEqual(tuple(table[dry]), (0, 0, dry))

    def test_children(self):
        """Test that children lists the next level's classes under a parent."""
        h = self.mm5b
        vegetation = h.class_index("L1", "vegetation")
        names = [h.class_names(1)[c] for c in h.children(0, vegetation)]
        self.assertEqual(names, ["cropland", "forest", "grassland"])
        self.assertEqual(h.children(2, 0), ())

    def test_valid_path_mask(self):
        """Test that water over dry cropland is rejected while a real path is accepted."""
        h = self.mm5b
        water = h.class_index("L1", "water")
        cropland = h.class_index("L2", "cropland")
        dry = h.class_index("L3", "dry_cropland")
        l1 = np.array([[0, water]])
        l2 = np.array([[cropland, cropland]])
        l3 = np.array([[dry, dry]])
        np.testing.assert_array_equal(h.valid_path_mask([l1, l2, l3]), [[True, False]])
        out_of_range = h.valid_path_mask([np.array([99]), np.array([0]), np.array([0])])
        np.testing.assert_array_equal(out_of_range, [False])

    def test_level_and_class_lookup_errors(self):
        """Test that unknown levels and classes raise HierarchyError with context."""
        with self.assertRaises(HierarchyError) as ctx:
            self.mm5b.class_index("L2", "rice")
        self.assertEqual(ctx.exception.class_name, "rice")
        self.assertEqual(ctx.exception.level, "L2")
        with self.assertRaises(HierarchyError):
            self.mm5b.level_index("L9")
        with self.assertRaises(HierarchyError):
            self.mm5b.level_index(3)

    def test_colors(self):
        """Test that palette colours are used and missing ones fall back to a stable colour."""
        self.assertEqual(self.mm5b.color_of(0, 0), tuple(self.mm5b.palette["vegetation"]))
        h = load_hierarchy(document([["a", "b"]]))
        self.assertEqual(h.color_of(0, 1), h.color_of(0, 1))
        self.assertEqual(len(h.color_of(0, 1)), 3)

    def test_dump_round_trip(self):
        """Test that a dumped document loads back into the same tree and digest."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "h.json"
            dump_hierarchy(self.mm5b, path)
            again = load_hierarchy(path)
        self.assertTrue(again.structurally_equal(self.mm5b))
        self.assertEqual(again.digest(), self.mm5b.digest())
        self.assertEqual(again.palette, self.mm5b.palette)


class TestHierarchyValidation(unittest.TestCase):
    def assertRejected(self, doc, class_name=None):
        with self.assertRaises(HierarchyError) as ctx:
            load_hierarchy(doc)
        if class_name is not None:
            self.assertEqual(ctx.exception.class_name, class_name)
        return ctx.exception

    def test_duplicate_class(self):
        """Test that a class name used twice is rejected."""
        self.assertRejected(document([["a", "b"], ["a"]], [("a", "a")]), class_name="a")

    def test_orphan(self):
        """Test that a class with no parent is rejected and named."""
        exc = self.assertRejected(document([["a"], ["b", "c"]], [("b", "a")]), class_name="c")
        self.assertIn("Orphan", str(exc))

    def test_multiple_parents(self):
        """Test that a class with two parents is rejected."""
        doc = document([["a", "b"], ["c", "d"]], [("c", "a"), ("c", "b"), ("d", "b")])
        exc = self.assertRejected(doc, class_name="c")
        self.assertIn("more than one parent", str(exc))

    def test_parent_must_be_one_level_up(self):
        """Test that an edge skipping a level is rejected."""
        doc = document([["a"], ["b"], ["c", "d"]], [("b", "a"), ("c", "b"), ("d", "a")])
        self.assertRejected(doc, class_name="d")

    def test_childless_inner_class(self):
        """Test that a non-finest class without children is rejected."""
        doc = document([["a", "b"], ["c"]], [("c", "a")])
        exc = self.assertRejected(doc, class_name="b")
        self.assertEqual(exc.level, "L1")

    def test_unknown_edge_class(self):
        """Test that an edge naming an unknown class is rejected."""
        self.assertRejected(document([["a"], ["b"]], [("b", "zzz")]), class_name="zzz")

    def test_bad_palette(self):
        """Test that palette entries must name known classes and hold 3 bytes."""
        self.assertRejected(document([["a"]], palette={"zzz": [1, 2, 3]}), class_name="zzz")
        self.assertRejected(document([["a"]], palette={"a": [1, 2, 300]}), class_name="a")

    def test_empty_documents(self):
        """Test that documents without levels or with an empty level are rejected."""
        self.assertRejected({})
        self.assertRejected({"levels": []})
        self.assertRejected(document([[]]))
        self.assertRejected(b"[1, 2]")

    def test_malformed_json_reports_offset(self):
        """Test that broken JSON is reported with its byte offset."""
        exc = self.assertRejected(b'{"levels": [}')
        self.assertEqual(exc.offset, 12)
        self.assertIn("byte offset 12", str(exc))

    def test_missing_file(self):
        """Test that an unreadable path raises StorageError."""
        with self.assertRaises(StorageError):
            load_hierarchy(Path("/nonexistent/hierarchy.json"))


if __name__ == "__main__":
    unittest.main()
