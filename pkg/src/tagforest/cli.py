"""Command-line interface.

Subcommands cover the full pipeline:

    tagforest build-tree    --tags tags.txt --embeddings emb.tsv -o tree.json
    tagforest anchor        --tree tree.json --pool pool.jsonl -o anchored.jsonl
    tagforest derive-target --anchored ref.jsonl --tree tree.json -o target.json
    tagforest sample        --anchored anchored.jsonl --tree tree.json --budget 100
    tagforest stats         --input subset.jsonl --tree tree.json [--target q.json]

Every output file gets a ``<name>.manifest.json`` sidecar recording the
command, resolved parameters, input digests, seed, version, and wall
clock. Exit codes: 0 success, 2 usage/input error, 1 unexpected failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .anchoring import anchor_pool, load_anchored, write_anchored
from .io import (
    DuplicateIdError,
    dumps_canonical,
    load_embeddings,
    load_instances,
    load_target,
    load_tree,
    normalize_scores,
    save_target,
    save_tree,
    sha256_file,
)
from .matrices import build_ancestry_matrix
from .objective import InfoState, ObjectiveConfig, kl_penalty
from .sampler import (
    SamplerConfig,
    derive_target,
    export_subset,
    sample,
    write_trace,
)
from .tree import InvalidTreeError, ValidationReport
from .treebuild import TreeBuildConfig, build_tree

ENV_THREAD_CAP = "TAGFOREST_THREADS"


class UserError(Exception):
    """Invalid input or arguments; maps to exit code 2."""


def _resolve_workers(requested: int) -> int:
    cap = os.environ.get(ENV_THREAD_CAP)
    if cap is None:
        return max(1, requested)
    try:
        cap_val = int(cap)
    except ValueError:
        raise UserError(f"{ENV_THREAD_CAP} must be an integer, got {cap!r}") from None
    if cap_val < 1:
        raise UserError(f"{ENV_THREAD_CAP} must be >= 1, got {cap_val}")
    return max(1, min(requested, cap_val))


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise UserError(f"{what} not found: {path}")
    return path


def _write_manifest(
    output_path: str,
    command: str,
    parameters: dict,
    inputs: dict[str, str],
    seed: int,
    started: float,
) -> None:
    manifest = {
        "command": command,
        "parameters": parameters,
        "inputs": {path: sha256_file(path) for path in inputs.values()},
        "seed": seed,
        "version": __version__,
        "started_utc": datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        "wall_clock_seconds": time.time() - started,
    }
    with open(f"{output_path}.manifest.json", "w", encoding="utf-8") as f:
        f.write(dumps_canonical(manifest))
        f.write("\n")


def _print_report(report: ValidationReport) -> None:
    for severity, location, message in report.entries:
        print(f"{severity}: {location}: {message}", file=sys.stderr)


def _load_tags(path: str) -> list[str]:
    tags = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            tag = line.strip()
            if tag:
                tags.append(tag)
    if not tags:
        raise UserError(f"no tags found in {path}")
    return tags


def cmd_build_tree(args) -> int:
    started = time.time()
    tags = _load_tags(_require_file(args.tags, "tags file"))
    table = None
    inputs = {"tags": args.tags}
    if args.embeddings:
        table = load_embeddings(_require_file(args.embeddings, "embeddings file"))
        inputs["embeddings"] = args.embeddings
    config = TreeBuildConfig(
        depth_limit=args.depth,
        branching=args.branching,
        seed=args.seed,
        kmeans_iters=args.kmeans_iters,
        kmeans_restarts=args.kmeans_restarts,
    )
    report = ValidationReport()
    tree = build_tree(tags, table, config, report)
    _print_report(report)
    save_tree(tree, args.output)
    params = {
        "tags": args.tags,
        "embeddings": args.embeddings,
        "depth": args.depth,
        "branching": args.branching,
        "kmeans_iters": args.kmeans_iters,
        "kmeans_restarts": args.kmeans_restarts,
        "output": args.output,
    }
    _write_manifest(args.output, "build-tree", params, inputs, args.seed, started)
    n_leaves = len(tree.leaf_ids)
    print(
        f"built tree: {tree.n_nodes} nodes, {n_leaves} leaves, "
        f"max depth {tree.max_depth()} -> {args.output}"
    )
    return 0


def cmd_anchor(args) -> int:
    started = time.time()
    tree = load_tree(_require_file(args.tree, "tree file"))
    pool, report = load_instances(_require_file(args.pool, "pool file"))
    _print_report(report)
    if not pool:
        raise UserError("pool has no parseable instances")
    pool = normalize_scores(pool)
    table = None
    inputs = {"tree": args.tree, "pool": args.pool}
    if args.embeddings:
        table = load_embeddings(_require_file(args.embeddings, "embeddings file"))
        inputs["embeddings"] = args.embeddings
    profiles, anchor_report = anchor_pool(pool, tree, table, args.min_sim)
    write_anchored(profiles, pool, args.output)
    params = {
        "tree": args.tree,
        "pool": args.pool,
        "embeddings": args.embeddings,
        "min_sim": args.min_sim,
        "output": args.output,
    }
    _write_manifest(args.output, "anchor", params, inputs, args.seed, started)
    print(
        f"anchored {anchor_report.anchored}/{len(pool)} instances "
        f"({len(anchor_report.unanchorable_ids)} unanchorable, "
        f"{sum(anchor_report.dropped_tags.values())} tag drops) -> {args.output}"
    )
    if anchor_report.unanchorable_ids:
        shown = ", ".join(anchor_report.unanchorable_ids[:10])
        more = len(anchor_report.unanchorable_ids) - 10
        suffix = f" (+{more} more)" if more > 0 else ""
        print(f"unanchorable: {shown}{suffix}", file=sys.stderr)
    return 0


def cmd_derive_target(args) -> int:
    started = time.time()
    tree = load_tree(_require_file(args.tree, "tree file"))
    records = load_anchored(_require_file(args.anchored, "anchored file"))
    target = derive_target(records, tree)
    save_target(target, tree, args.output)
    params = {"anchored": args.anchored, "tree": args.tree, "output": args.output}
    inputs = {"anchored": args.anchored, "tree": args.tree}
    _write_manifest(args.output, "derive-target", params, inputs, args.seed, started)
    print(f"derived target over {len(target.weights)} leaves -> {args.output}")
    return 0


def cmd_sample(args) -> int:
    started = time.time()
    tree = load_tree(_require_file(args.tree, "tree file"))
    records = load_anchored(_require_file(args.anchored, "anchored file"))
    inputs = {"anchored": args.anchored, "tree": args.tree}

    target = None
    if args.target:
        target = load_target(_require_file(args.target, "target file"), tree)
        inputs["target"] = args.target
    if args.kl_weight > 0.0 and target is None:
        raise UserError("--lambda > 0 requires --target")

    mode = "aligned" if target is not None else "general"
    objective = ObjectiveConfig(
        alpha=args.alpha,
        gamma=args.gamma,
        kl_weight=args.kl_weight,
        epsilon=args.epsilon,
    )
    workers = _resolve_workers(args.workers)
    config = SamplerConfig(
        budget=args.budget,
        objective=objective,
        mode=mode,
        seed=args.seed,
        workers=workers,
    )
    if args.budget > len(records):
        print(
            f"warning: budget {args.budget} exceeds pool size {len(records)}; "
            "selecting everything usable",
            file=sys.stderr,
        )
    selected, trace = sample(records, tree, config, target)

    pool = None
    if args.pool:
        pool, report = load_instances(_require_file(args.pool, "pool file"))
        _print_report(report)
        inputs["pool"] = args.pool
    export_subset(selected, trace, pool, args.output)
    write_trace(trace, args.trace)

    params = {
        "anchored": args.anchored,
        "tree": args.tree,
        "budget": args.budget,
        "alpha": args.alpha,
        "gamma": args.gamma,
        "lambda": args.kl_weight,
        "epsilon": args.epsilon,
        "target": args.target,
        "pool": args.pool,
        "workers": workers,
        "mode": mode,
        "output": args.output,
        "trace": args.trace,
    }
    _write_manifest(args.output, "sample", params, inputs, args.seed, started)
    _write_manifest(args.trace, "sample", params, inputs, args.seed, started)
    kl_text = "n/a" if trace.final_kl is None else format(trace.final_kl, ".6g")
    print(
        f"selected {len(selected)} of {len(records)} "
        f"(final information {trace.final_information:.6g}, final KL {kl_text}) "
        f"-> {args.output}"
    )
    return 0


def _load_leaf_rows(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise UserError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if "leaves" not in obj:
                raise UserError(
                    f"{path}:{lineno}: no 'leaves' field; pass an anchored or "
                    "exported subset file"
                )
            rows.append(obj)
    return rows


def cmd_stats(args) -> int:
    started = time.time()
    tree = load_tree(_require_file(args.tree, "tree file"))
    rows = _load_leaf_rows(_require_file(args.input, "input file"))
    ancestry = build_ancestry_matrix(tree)
    n_leaves = len(ancestry.leaf_ids)
    leaf_pos = tree.leaf_pos

    counts = np.zeros(n_leaves, dtype=np.int64)
    activated_nodes: set[int] = set()
    for row in rows:
        for leaf in set(int(x) for x in row["leaves"]):
            if leaf not in leaf_pos:
                raise UserError(f"row '{row.get('id')}': {leaf} is not a leaf id")
            counts[leaf_pos[leaf]] += 1
            activated_nodes.update(tree.ancestors_and_self(leaf))

    print(f"rows: {len(rows)}")
    print("leaf histogram (leaf id, name, count):")
    for j, nid in enumerate(ancestry.leaf_ids):
        if counts[j] or args.all_leaves:
            print(f"  {int(nid)}\t{tree.node(int(nid)).name}\t{int(counts[j])}")

    by_depth_total: dict[int, int] = {}
    by_depth_hit: dict[int, int] = {}
    for node in tree.nodes:
        by_depth_total[node.depth] = by_depth_total.get(node.depth, 0) + 1
        if node.id in activated_nodes:
            by_depth_hit[node.depth] = by_depth_hit.get(node.depth, 0) + 1
    print("coverage per depth (activated/total):")
    for depth in sorted(by_depth_total):
        print(f"  depth {depth}: {by_depth_hit.get(depth, 0)}/{by_depth_total[depth]}")

    for field in ("quality", "complexity"):
        values = [float(r[field]) for r in rows if field in r]
        if values:
            qs = np.quantile(np.array(values), [0.0, 0.25, 0.5, 0.75, 1.0])
            print(
                f"{field} quantiles: min {qs[0]:.6g}, p25 {qs[1]:.6g}, "
                f"median {qs[2]:.6g}, p75 {qs[3]:.6g}, max {qs[4]:.6g}"
            )

    if args.target:
        target = load_target(_require_file(args.target, "target file"), tree)
        state = InfoState.empty(tree.n_nodes, n_leaves)
        state.leaf_counts = counts
        state.total_leaf_mass = int(counts.sum())
        state.size = len(rows)
        kl = kl_penalty(
            target.dense(ancestry.leaf_ids),
            state,
            np.zeros(0, dtype=np.int64),
            args.epsilon,
        )
        print(f"KL(target || selection): {kl:.6g}")
    print(f"done in {time.time() - started:.2f}s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagforest",
        description="Tree-aware instruction-data selection pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-tree", help="cluster tags into a taxonomy")
    p.add_argument("--tags", required=True, help="text file, one tag per line")
    p.add_argument("--embeddings", default=None, help="TSV embedding table")
    p.add_argument("--depth", type=int, default=10, help="max tree depth (root=0)")
    p.add_argument("--branching", type=float, default=10.0, help="contraction ratio")
    p.add_argument("--kmeans-iters", type=int, default=50)
    p.add_argument("--kmeans-restarts", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="tree.json")
    p.set_defaults(func=cmd_build_tree)

    p = sub.add_parser("anchor", help="map pool instances onto tree leaves")
    p.add_argument("--tree", required=True)
    p.add_argument("--pool", required=True, help="JSONL instance pool")
    p.add_argument("--embeddings", default=None, help="TSV embedding table for tags")
    p.add_argument("--min-sim", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="anchored.jsonl")
    p.set_defaults(func=cmd_anchor)

    p = sub.add_parser("derive-target", help="empirical leaf target from a reference")
    p.add_argument("--anchored", required=True)
    p.add_argument("--tree", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="target.json")
    p.set_defaults(func=cmd_derive_target)

    p = sub.add_parser("sample", help="greedy subset selection")
    p.add_argument("--anchored", required=True)
    p.add_argument("--tree", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--gamma", type=float, default=0.85)
    p.add_argument("--lambda", dest="kl_weight", type=float, default=0.0)
    p.add_argument("--epsilon", type=float, default=1e-9)
    p.add_argument("--target", default=None, help="target.json enabling aligned mode")
    p.add_argument("--pool", default=None, help="original pool for full-record export")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="subset.jsonl")
    p.add_argument("--trace", default="trace.json")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("stats", help="histogram/coverage/KL of a selection")
    p.add_argument("--input", required=True, help="anchored or exported subset JSONL")
    p.add_argument("--tree", required=True)
    p.add_argument("--target", default=None)
    p.add_argument("--epsilon", type=float, default=1e-9)
    p.add_argument("--all-leaves", action="store_true", help="include zero-count leaves")
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DuplicateIdError, InvalidTreeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # pragma: no cover - unexpected failure path
        import traceback

        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
