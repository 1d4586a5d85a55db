"""Tree structure and validation tests."""
from __future__ import annotations

import numpy as np
import pytest

from tagforest import InvalidTreeError, TagTree, TreeNode, validate_tree

from conftest import chain_tree, make_tree, random_tree, star_tree


class TestTagTree:
    def test_basic_accessors(self, tiny_tree):
        assert tiny_tree.root_id == 0
        assert tiny_tree.n_nodes == 3
        assert tiny_tree.n_leaves == 2
        np.testing.assert_array_equal(tiny_tree.leaf_ids, [1, 2])
        assert tiny_tree.leaf_pos == {1: 0, 2: 1}
        assert tiny_tree.max_depth() == 1
        assert tiny_tree.node(1).name == "l1"

    def test_ancestors_and_self(self):
        tree = chain_tree(3)
        assert tree.ancestors_and_self(3) == [3, 2, 1, 0]
        assert tree.ancestors_and_self(0) == [0]

    def test_leaf_ids_sorted_ascending(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            tree = random_tree(rng, max_nodes=60)
            leaf_ids = tree.leaf_ids
            assert np.all(np.diff(leaf_ids) > 0)
            for nid in leaf_ids:
                assert tree.node(int(nid)).is_leaf()

    def test_equality_covers_embeddings(self, tiny_tree):
        other = make_tree([None, 0, 0], names=["root", "l1", "l2"])
        assert tiny_tree == other
        other.nodes[1].embedding = np.array([1.0, 0.0])
        assert tiny_tree != other

    def test_cycle_detected_in_ancestor_walk(self):
        nodes = [
            TreeNode(id=0, name="a", parent=1, children=[1], depth=0),
            TreeNode(id=1, name="b", parent=0, children=[0], depth=1),
        ]
        tree = TagTree(nodes=nodes)
        with pytest.raises(InvalidTreeError):
            tree.ancestors_and_self(0)


class TestValidateTree:
    def test_valid_trees_pass(self, tiny_tree):
        assert validate_tree(tiny_tree).ok
        rng = np.random.default_rng(5)
        for _ in range(50):
            assert validate_tree(random_tree(rng, max_nodes=100)).ok

    def test_empty_tree(self):
        report = validate_tree(TagTree(nodes=[]))
        assert not report.ok

    def test_duplicate_ids(self):
        nodes = [
            TreeNode(id=0, name="r", parent=None, children=[0], depth=0),
            TreeNode(id=0, name="x", parent=0, children=[], depth=1),
        ]
        report = validate_tree(TagTree(nodes=nodes))
        assert any("duplicate" in msg for _, _, msg in report.errors)

    def test_non_dense_ids(self):
        nodes = [
            TreeNode(id=0, name="r", parent=None, children=[5], depth=0),
            TreeNode(id=5, name="x", parent=0, children=[], depth=1),
        ]
        report = validate_tree(TagTree(nodes=nodes))
        assert any("dense" in msg for _, _, msg in report.errors)

    def test_multiple_roots(self):
        nodes = [
            TreeNode(id=0, name="r", parent=None, children=[], depth=0),
            TreeNode(id=1, name="s", parent=None, children=[], depth=0),
        ]
        report = validate_tree(TagTree(nodes=nodes))
        assert any("multiple roots" in msg for _, _, msg in report.errors)

    def test_parent_child_mismatch(self):
        nodes = [
            TreeNode(id=0, name="r", parent=None, children=[], depth=0),
            TreeNode(id=1, name="x", parent=0, children=[], depth=1),
        ]
        report = validate_tree(TagTree(nodes=nodes))
        assert any("children" in msg for _, _, msg in report.errors)

    def test_bad_depth_label(self):
        tree = make_tree([None, 0, 0])
        tree.nodes[2].depth = 7
        report = validate_tree(tree)
        assert any("depth" in msg for _, _, msg in report.errors)

    def test_unreachable_cycle(self):
        nodes = [
            TreeNode(id=0, name="r", parent=None, children=[], depth=0),
            TreeNode(id=1, name="a", parent=2, children=[2], depth=1),
            TreeNode(id=2, name="b", parent=1, children=[1], depth=2),
        ]
        report = validate_tree(TagTree(nodes=nodes))
        assert any("unreachable" in msg for _, _, msg in report.errors)

    def test_nonfinite_embedding(self, tiny_tree):
        tiny_tree.nodes[1].embedding = np.array([np.nan, 1.0])
        report = validate_tree(tiny_tree)
        assert any("non-finite" in msg for _, _, msg in report.errors)

    def test_depth_limit(self):
        tree = chain_tree(4)
        assert validate_tree(tree, depth_limit=4).ok
        assert not validate_tree(tree, depth_limit=3).ok

    def test_report_collects_all_violations(self):
        # two independent defects must both be reported, not just the first
        tree = make_tree([None, 0, 0])
        tree.nodes[1].embedding = np.array([np.nan])
        tree.nodes[2].embedding = np.array([np.inf])
        report = validate_tree(tree)
        assert len(report.errors) == 2
