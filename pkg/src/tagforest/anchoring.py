"""Anchoring: map instance tags onto tree leaves and build activation vectors.

Every tag of an instance is matched to its nearest leaf by cosine
similarity (an exact string match to a leaf name short-circuits with
similarity 1.0). Matches below the similarity threshold are dropped and
recorded. The surviving leaves give a binary leaf activation; multiplying
by the ancestry matrix lifts it to integer path counts over all nodes.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .io import EmbeddingTable, Instance, dumps_canonical, fallback_embedding
from .matrices import AncestryMatrix, build_ancestry_matrix
from .tree import TagTree

__all__ = [
    "ActivationProfile",
    "AnchoredRecord",
    "AnchorReport",
    "anchor_instance",
    "anchor_pool",
    "write_anchored",
    "load_anchored",
]

DEFAULT_MIN_SIMILARITY = 0.3


@dataclass
class ActivationProfile:
    """Where one instance lands on the tree.

    ``leaf_ids`` is the sorted tuple of activated leaf node ids (binary
    activation: duplicates collapse). ``node_ids``/``node_counts`` are the
    support and integer values of the lifted path-count vector.
    ``matched`` maps each kept tag to its (leaf id, similarity); dropped
    tags fell below the threshold.
    """

    instance_id: str
    leaf_ids: tuple[int, ...]
    node_ids: np.ndarray
    node_counts: np.ndarray
    matched: dict[str, tuple[int, float]]
    dropped: tuple[str, ...]

    @property
    def unanchorable(self) -> bool:
        return not self.leaf_ids


@dataclass(frozen=True)
class AnchoredRecord:
    """One row of an anchored pool file; what the sampler consumes."""

    id: str
    leaves: tuple[int, ...]
    dropped: tuple[str, ...]
    quality: float
    complexity: float


@dataclass
class AnchorReport:
    """Aggregate outcome of anchoring a pool."""

    anchored: int = 0
    unanchorable_ids: list[str] = field(default_factory=list)
    dropped_tags: Counter = field(default_factory=Counter)


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return mat / safe


def _leaf_vectors(tree: TagTree, embeddings: EmbeddingTable | None) -> np.ndarray:
    """Unit embedding per leaf: node embedding, else table entry, else hash."""
    dim = None
    for nid in tree.leaf_ids:
        emb = tree.node(int(nid)).embedding
        if emb is not None:
            dim = len(emb)
            break
    if dim is None and embeddings is not None:
        dim = embeddings.dimension
    if dim is None:
        dim = 32  # no embedding source at all; hash space is arbitrary but fixed
    rows = []
    for nid in tree.leaf_ids:
        node = tree.node(int(nid))
        vec = node.embedding
        if vec is None and embeddings is not None:
            vec = embeddings.get(node.name)
        if vec is None or float(np.linalg.norm(vec)) == 0.0:
            vec = fallback_embedding(node.name, dim)
        rows.append(np.asarray(vec, dtype=np.float64))
    return _unit_rows(np.vstack(rows))


def _tag_vector(tag: str, embeddings: EmbeddingTable | None, dim: int) -> np.ndarray:
    vec = embeddings.get(tag) if embeddings is not None else None
    if vec is None or float(np.linalg.norm(vec)) == 0.0:
        return fallback_embedding(tag, dim)
    return np.asarray(vec, dtype=np.float64) / float(np.linalg.norm(vec))


def _profile_from_leaves(
    instance_id: str,
    kept: dict[str, tuple[int, float]],
    dropped: list[str],
    ancestry: AncestryMatrix,
    leaf_pos: dict[int, int],
) -> ActivationProfile:
    leaf_ids = tuple(sorted({leaf for leaf, _ in kept.values()}))
    if leaf_ids:
        h_leaf = np.zeros(ancestry.shape[1], dtype=np.int64)
        for leaf in leaf_ids:
            h_leaf[leaf_pos[leaf]] = 1
        counts = ancestry.tree_counts(h_leaf)
        support = np.nonzero(counts)[0].astype(np.int64)
        values = counts[support]
    else:
        support = np.zeros(0, dtype=np.int64)
        values = np.zeros(0, dtype=np.int64)
    return ActivationProfile(
        instance_id=instance_id,
        leaf_ids=leaf_ids,
        node_ids=support,
        node_counts=values,
        matched=kept,
        dropped=tuple(dropped),
    )


def anchor_instance(
    instance: Instance,
    tree: TagTree,
    embeddings: EmbeddingTable | None,
    min_similarity: float = DEFAULT_MIN_SIMILARITY,
    *,
    ancestry: AncestryMatrix | None = None,
    leaf_matrix: np.ndarray | None = None,
) -> ActivationProfile:
    """Anchor a single instance.

    ``ancestry`` and ``leaf_matrix`` can be passed to reuse work across a
    pool; :func:`anchor_pool` does exactly that.
    """
    if ancestry is None:
        ancestry = build_ancestry_matrix(tree)
    if leaf_matrix is None:
        leaf_matrix = _leaf_vectors(tree, embeddings)
    leaf_ids = ancestry.leaf_ids
    name_to_leaf: dict[str, int] = {}
    for nid in leaf_ids:  # ascending ids: first writer wins on name collision
        name = tree.node(int(nid)).name
        name_to_leaf.setdefault(name, int(nid))

    kept: dict[str, tuple[int, float]] = {}
    dropped: list[str] = []
    for tag in dict.fromkeys(instance.tags):  # de-dup, keep order
        if tag in name_to_leaf:
            kept[tag] = (name_to_leaf[tag], 1.0)
            continue
        vec = _tag_vector(tag, embeddings, leaf_matrix.shape[1])
        sims = leaf_matrix @ vec
        best = int(np.argmax(sims))  # ties: first occurrence = lowest leaf id
        sim = float(sims[best])
        if sim < min_similarity:
            dropped.append(tag)
        else:
            kept[tag] = (int(leaf_ids[best]), sim)
    leaf_pos = {int(nid): j for j, nid in enumerate(leaf_ids)}
    return _profile_from_leaves(instance.id, kept, dropped, ancestry, leaf_pos)


def anchor_pool(
    pool: list[Instance],
    tree: TagTree,
    embeddings: EmbeddingTable | None,
    min_similarity: float = DEFAULT_MIN_SIMILARITY,
) -> tuple[list[ActivationProfile], AnchorReport]:
    """Anchor every instance, batching tag lookups across the pool.

    Output order follows the input pool. Instances whose tags all drop are
    flagged unanchorable and listed in the report.
    """
    ancestry = build_ancestry_matrix(tree)
    leaf_matrix = _leaf_vectors(tree, embeddings)
    leaf_ids = ancestry.leaf_ids
    leaf_pos = {int(nid): j for j, nid in enumerate(leaf_ids)}
    name_to_leaf: dict[str, int] = {}
    for nid in leaf_ids:
        name_to_leaf.setdefault(tree.node(int(nid)).name, int(nid))

    # Resolve each distinct non-exact tag once, in chunks to bound memory.
    unique_tags: list[str] = []
    seen: set[str] = set()
    for inst in pool:
        for tag in inst.tags:
            if tag not in seen and tag not in name_to_leaf:
                seen.add(tag)
                unique_tags.append(tag)
    resolution: dict[str, tuple[int, float] | None] = {}
    dim = leaf_matrix.shape[1]
    chunk = 4096
    for start in range(0, len(unique_tags), chunk):
        batch = unique_tags[start : start + chunk]
        mat = np.vstack([_tag_vector(t, embeddings, dim) for t in batch])
        sims = mat @ leaf_matrix.T
        best = np.argmax(sims, axis=1)
        for row, tag in enumerate(batch):
            sim = float(sims[row, best[row]])
            if sim < min_similarity:
                resolution[tag] = None
            else:
                resolution[tag] = (int(leaf_ids[best[row]]), sim)

    report = AnchorReport()
    profiles: list[ActivationProfile] = []
    for inst in pool:
        kept: dict[str, tuple[int, float]] = {}
        dropped: list[str] = []
        for tag in dict.fromkeys(inst.tags):
            if tag in name_to_leaf:
                kept[tag] = (name_to_leaf[tag], 1.0)
                continue
            hit = resolution[tag]
            if hit is None:
                dropped.append(tag)
                report.dropped_tags[tag] += 1
            else:
                kept[tag] = hit
        profile = _profile_from_leaves(inst.id, kept, dropped, ancestry, leaf_pos)
        if profile.unanchorable:
            report.unanchorable_ids.append(inst.id)
        else:
            report.anchored += 1
        profiles.append(profile)
    return profiles, report


def write_anchored(
    profiles: list[ActivationProfile], pool: list[Instance], path
) -> None:
    """Write anchored rows (id, leaves, dropped, quality, complexity)."""
    by_id = {inst.id: inst for inst in pool}
    with open(path, "w", encoding="utf-8") as f:
        for profile in profiles:
            inst = by_id.get(profile.instance_id)
            if inst is None:
                raise ValueError(f"profile id '{profile.instance_id}' not in pool")
            row = {
                "id": profile.instance_id,
                "leaves": list(profile.leaf_ids),
                "dropped": list(profile.dropped),
                "quality": inst.quality,
                "complexity": inst.complexity,
            }
            f.write(dumps_canonical(row))
            f.write("\n")


def load_anchored(path) -> list[AnchoredRecord]:
    """Read anchored rows; raises with the line number on malformed input."""
    records: list[AnchoredRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: invalid JSON: {exc.msg}") from None
            for key in ("id", "leaves", "dropped", "quality", "complexity"):
                if key not in obj:
                    raise ValueError(f"line {lineno}: missing key '{key}'")
            if obj["id"] in seen:
                raise ValueError(f"line {lineno}: duplicate id '{obj['id']}'")
            seen.add(obj["id"])
            records.append(
                AnchoredRecord(
                    id=obj["id"],
                    leaves=tuple(int(x) for x in obj["leaves"]),
                    dropped=tuple(obj["dropped"]),
                    quality=float(obj["quality"]),
                    complexity=float(obj["complexity"]),
                )
            )
    return records
