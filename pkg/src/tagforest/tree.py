"""Tag tree structure and validation.

A tag tree is a rooted tree over tag nodes: leaves are the concrete tags
instances can anchor to, internal nodes are broader topics, and a single
root covers everything. Node ids are dense 0-based integers assigned in
breadth-first order at construction time, so they double as row/column
indices for the structural matrices built in :mod:`tagforest.matrices`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "TreeNode",
    "TagTree",
    "ValidationReport",
    "InvalidTreeError",
    "validate_tree",
]


@dataclass(eq=False)
class TreeNode:
    """One node of a tag tree.

    ``parent`` is None exactly for the root. ``children`` holds child node
    ids in a stable order. ``embedding`` is optional; when present it is a
    1-D float vector (leaves carry their tag embedding, internal nodes the
    mean of their members').
    """

    id: int
    name: str
    parent: int | None
    children: list[int] = field(default_factory=list)
    depth: int = 0
    embedding: np.ndarray | None = None

    def is_leaf(self) -> bool:
        return not self.children

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TreeNode):
            return NotImplemented
        if (self.id, self.name, self.parent, self.children, self.depth) != (
            other.id,
            other.name,
            other.parent,
            other.children,
            other.depth,
        ):
            return False
        if self.embedding is None or other.embedding is None:
            return self.embedding is None and other.embedding is None
        return np.array_equal(self.embedding, other.embedding)


@dataclass
class ValidationReport:
    """Accumulates (severity, location, message) entries; empty == valid."""

    entries: list[tuple[str, str, str]] = field(default_factory=list)

    def error(self, location: str, message: str) -> None:
        self.entries.append(("error", location, message))

    def warning(self, location: str, message: str) -> None:
        self.entries.append(("warning", location, message))

    @property
    def errors(self) -> list[tuple[str, str, str]]:
        return [e for e in self.entries if e[0] == "error"]

    @property
    def warnings(self) -> list[tuple[str, str, str]]:
        return [e for e in self.entries if e[0] == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def extend(self, other: "ValidationReport") -> None:
        self.entries.extend(other.entries)

    def __str__(self) -> str:
        if not self.entries:
            return "valid"
        return "\n".join(f"{sev}: {loc}: {msg}" for sev, loc, msg in self.entries)


class InvalidTreeError(ValueError):
    """Raised when an operation requires a valid tree and validation failed."""

    def __init__(self, report: ValidationReport):
        super().__init__(str(report))
        self.report = report


@dataclass(eq=False)
class TagTree:
    """A validated-on-demand rooted tree; ``nodes[i].id == i`` when valid."""

    nodes: list[TreeNode]

    @cached_property
    def root_id(self) -> int:
        roots = [n.id for n in self.nodes if n.parent is None]
        if len(roots) != 1:
            raise InvalidTreeError(validate_tree(self))
        return roots[0]

    @cached_property
    def leaf_ids(self) -> np.ndarray:
        """Node ids of all leaves, ascending. Fixes the leaf column order."""
        return np.array(sorted(n.id for n in self.nodes if n.is_leaf()), dtype=np.int64)

    @cached_property
    def leaf_pos(self) -> dict[int, int]:
        """Map leaf node id -> dense leaf position (column index)."""
        return {int(nid): j for j, nid in enumerate(self.leaf_ids)}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_ids)

    def node(self, node_id: int) -> TreeNode:
        return self.nodes[node_id]

    def max_depth(self) -> int:
        return max(n.depth for n in self.nodes)

    def ancestors_and_self(self, node_id: int) -> list[int]:
        """Path of node ids from ``node_id`` up to the root, inclusive."""
        path = []
        cur: int | None = node_id
        seen = set()
        while cur is not None:
            if cur in seen:  # defensive: cycles are caught by validate_tree
                raise InvalidTreeError(validate_tree(self))
            seen.add(cur)
            path.append(cur)
            cur = self.nodes[cur].parent
        return path

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TagTree):
            return NotImplemented
        return self.nodes == other.nodes


def validate_tree(tree: TagTree, depth_limit: int | None = None) -> ValidationReport:
    """Check every structural invariant; report all violations found.

    Checks: non-empty node list, dense unique 0-based ids, exactly one
    root, parent/children consistency in both directions, reachability
    (which also rules out cycles), correct depth labels, at least one
    leaf, finite embeddings, and optionally a maximum depth.
    """
    report = ValidationReport()
    nodes = tree.nodes
    if not nodes:
        report.error("tree", "node list is empty")
        return report

    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        report.error("tree", f"duplicate node ids: {dupes}")
        return report
    if sorted(ids) != list(range(len(nodes))):
        report.error("tree", "node ids are not dense 0-based integers")
        return report
    if ids != list(range(len(nodes))):
        report.error("tree", "nodes are not listed in id order")
        return report

    by_id = {n.id: n for n in nodes}
    roots = [n for n in nodes if n.parent is None]
    if len(roots) == 0:
        report.error("tree", "no root (every node has a parent)")
    elif len(roots) > 1:
        report.error("tree", f"multiple roots: {sorted(r.id for r in roots)}")

    for n in nodes:
        if n.parent is not None:
            if n.parent not in by_id:
                report.error(f"node {n.id}", f"parent {n.parent} does not exist")
            elif n.id not in by_id[n.parent].children:
                report.error(
                    f"node {n.id}", f"not listed in children of parent {n.parent}"
                )
        if len(set(n.children)) != len(n.children):
            report.error(f"node {n.id}", "duplicate entries in children")
        for c in n.children:
            if c not in by_id:
                report.error(f"node {n.id}", f"child {c} does not exist")
            elif by_id[c].parent != n.id:
                report.error(f"node {n.id}", f"child {c} has parent {by_id[c].parent}")
        if n.embedding is not None and not np.all(np.isfinite(n.embedding)):
            report.error(f"node {n.id}", "embedding has non-finite components")

    if not report.ok:
        return report

    # Reachability from the root; unreachable nodes imply a cycle or a
    # detached component given the parent/children checks above.
    root = roots[0]
    seen = {root.id}
    queue = [root.id]
    while queue:
        cur = queue.pop(0)
        for c in by_id[cur].children:
            if c not in seen:
                seen.add(c)
                queue.append(c)
    if len(seen) != len(nodes):
        missing = sorted(set(by_id) - seen)
        report.error("tree", f"nodes unreachable from root: {missing}")
        return report

    if root.depth != 0:
        report.error(f"node {root.id}", f"root depth is {root.depth}, expected 0")
    for n in nodes:
        for c in n.children:
            if by_id[c].depth != n.depth + 1:
                report.error(
                    f"node {c}",
                    f"depth {by_id[c].depth} does not equal parent depth + 1",
                )

    if not any(n.is_leaf() for n in nodes):
        report.error("tree", "tree has no leaves")

    if depth_limit is not None and report.ok:
        md = max(n.depth for n in nodes)
        if md > depth_limit:
            report.error("tree", f"max depth {md} exceeds limit {depth_limit}")

    return report
