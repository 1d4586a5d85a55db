"""Dense brute-force reference implementations.

Everything here recomputes from first principles with dense arrays and
plain loops — no code shared with the engine's sparse paths — so tests
can check the optimized implementations against an independent witness.
Complexity is exponential or quadratic by design; keep inputs small.
"""
from __future__ import annotations

import math
from itertools import combinations

import numpy as np

from .tree import TagTree

__all__ = [
    "dense_ancestry",
    "dense_propagation",
    "exact_information",
    "exact_marginal_gain",
    "exhaustive_optimum",
    "greedy_exact",
]

MAX_ENUMERATION = 10**6


def dense_ancestry(tree: TagTree) -> tuple[np.ndarray, list[int]]:
    """Dense |V| x |V_leaf| ancestor-or-self indicator, by parent walking."""
    leaf_ids = sorted(n.id for n in tree.nodes if not n.children)
    mat = np.zeros((len(tree.nodes), len(leaf_ids)), dtype=np.int64)
    for col, leaf in enumerate(leaf_ids):
        node: int | None = leaf
        while node is not None:
            mat[node, col] = 1
            node = tree.nodes[node].parent
    return mat, leaf_ids


def dense_propagation(tree: TagTree) -> np.ndarray:
    """Dense |V| x |V| neighbor-averaging matrix, built entry by entry."""
    n = len(tree.nodes)
    mat = np.zeros((n, n), dtype=np.float64)
    for node in tree.nodes:
        neighbors = list(node.children)
        if node.parent is not None:
            neighbors.append(node.parent)
        w = 1.0 / (1.0 + len(neighbors))
        mat[node.id, node.id] = w
        for q in neighbors:
            mat[node.id, q] = w
    return mat


def _leaves_of(item):
    """Accept AnchoredRecord-likes (``.leaves``) or raw leaf-id iterables."""
    return getattr(item, "leaves", item)


def _total_raw_vector(subset, scores, tree: TagTree) -> np.ndarray:
    ancestry, leaf_ids = dense_ancestry(tree)
    leaf_col = {leaf: j for j, leaf in enumerate(leaf_ids)}
    total = np.zeros(len(tree.nodes), dtype=np.float64)
    for item, score in zip(subset, scores):
        h_leaf = np.zeros(len(leaf_ids), dtype=np.float64)
        for leaf in set(_leaves_of(item)):
            h_leaf[leaf_col[int(leaf)]] = 1.0
        total += float(score) * (ancestry @ h_leaf)
    return total


def exact_information(subset, scores, tree: TagTree, gamma: float) -> float:
    """I(D) recomputed densely from scratch."""
    if len(subset) != len(scores):
        raise ValueError("subset and scores must align")
    total = _total_raw_vector(subset, scores, tree)
    v = dense_propagation(tree) @ total
    return float(sum(x**gamma for x in v))


def exact_marginal_gain(
    subset,
    scores,
    candidate,
    candidate_score: float,
    tree: TagTree,
    gamma: float,
) -> float:
    """I(D + candidate) - I(D), both sides recomputed from scratch."""
    base = exact_information(subset, scores, tree, gamma)
    grown = exact_information(
        list(subset) + [candidate], list(scores) + [candidate_score], tree, gamma
    )
    return grown - base


def _leaf_distribution_kl(
    target: dict[int, float],
    subset,
    tree: TagTree,
    epsilon: float,
) -> float:
    """KL(Q || P(D)) with epsilon smoothing, counted leaf by leaf."""
    leaf_ids = sorted(n.id for n in tree.nodes if not n.children)
    counts = {leaf: 0 for leaf in leaf_ids}
    total = 0
    for item in subset:
        for leaf in set(_leaves_of(item)):
            counts[int(leaf)] += 1
            total += 1
    denom = total + epsilon * len(leaf_ids)
    kl = 0.0
    for leaf, q in target.items():
        if q <= 0.0:
            continue
        p = (counts[leaf] + epsilon) / denom
        kl += q * math.log(q / p)
    return kl


def _subset_value(records, scores, tree, gamma, kl_weight, target, epsilon) -> float:
    value = exact_information(records, scores, tree, gamma)
    if kl_weight > 0.0:
        if target is None:
            raise ValueError("kl_weight > 0 requires a target distribution")
        value -= kl_weight * _leaf_distribution_kl(target, records, tree, epsilon)
    return value


def _record_score(record, alpha: float) -> float:
    return alpha * record.quality + (1.0 - alpha) * record.complexity


def exhaustive_optimum(
    pool,
    budget: int,
    tree: TagTree,
    gamma: float,
    alpha: float = 0.8,
    kl_weight: float = 0.0,
    target: dict[int, float] | None = None,
    epsilon: float = 1e-9,
) -> tuple[tuple[str, ...], float]:
    """Enumerate every subset of the given size; return (ids, best value).

    Pool entries are AnchoredRecord-likes. Refuses blowups beyond 10^6
    combinations. Candidates are enumerated in id order, so exact value
    ties resolve to the lexicographically smallest id tuple regardless of
    pool ordering.
    """
    if budget < 0 or budget > len(pool):
        raise ValueError(f"budget {budget} out of range for pool of {len(pool)}")
    n_combos = math.comb(len(pool), budget)
    if n_combos > MAX_ENUMERATION:
        raise ValueError(f"{n_combos} combinations exceed the {MAX_ENUMERATION} cap")
    ordered = sorted(pool, key=lambda r: r.id)
    best_ids: tuple[str, ...] | None = None
    best_value = -math.inf
    for combo in combinations(ordered, budget):
        scores = [_record_score(r, alpha) for r in combo]
        value = _subset_value(combo, scores, tree, gamma, kl_weight, target, epsilon)
        if value > best_value:
            best_value = value
            best_ids = tuple(r.id for r in combo)
    assert best_ids is not None or budget == 0
    return (best_ids or ()), (best_value if best_ids is not None else 0.0)


def greedy_exact(
    pool,
    budget: int,
    tree: TagTree,
    gamma: float,
    alpha: float = 0.8,
    kl_weight: float = 0.0,
    target: dict[int, float] | None = None,
    epsilon: float = 1e-9,
) -> tuple[tuple[str, ...], float]:
    """Greedy selection scoring every candidate with exact (not first-order)
    gains each iteration; ties break by joint value, then composite score,
    then lowest id — the same documented order the fast sampler uses."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    budget = min(budget, len(pool))
    chosen: list = []
    chosen_scores: list[float] = []
    remaining = sorted(pool, key=lambda r: r.id)
    base_info = 0.0
    for _ in range(budget):
        best = None
        for record in remaining:
            s = _record_score(record, alpha)
            gain = (
                exact_information(
                    chosen + [record], chosen_scores + [s], tree, gamma
                )
                - base_info
            )
            joint = gain
            if kl_weight > 0.0:
                if target is None:
                    raise ValueError("kl_weight > 0 requires a target distribution")
                joint -= kl_weight * _leaf_distribution_kl(
                    target, chosen + [record], tree, epsilon
                )
            key = (-joint, -s, record.id)
            if best is None or key < best[0]:
                best = (key, record, s)
        assert best is not None
        _, record, s = best
        chosen.append(record)
        chosen_scores.append(s)
        remaining.remove(record)
        base_info = exact_information(chosen, chosen_scores, tree, gamma)
    final_value = _subset_value(
        chosen, chosen_scores, tree, gamma, kl_weight, target, epsilon
    )
    return tuple(r.id for r in chosen), final_value
