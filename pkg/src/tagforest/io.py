"""File formats and parsing: instance pools, embeddings, trees, targets.

All JSON emitted by this package goes through :func:`dumps_canonical`,
which formats floats with 17 significant digits so that every value
round-trips exactly and re-serialization of a loaded artifact is
byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .tree import InvalidTreeError, TagTree, TreeNode, ValidationReport, validate_tree

__all__ = [
    "Instance",
    "EmbeddingTable",
    "TargetDistribution",
    "DuplicateIdError",
    "dumps_canonical",
    "fallback_embedding",
    "load_instances",
    "normalize_scores",
    "load_embeddings",
    "write_embeddings",
    "save_tree",
    "load_tree",
    "load_target",
    "save_target",
    "sha256_file",
]


# ---------------------------------------------------------------------------
# canonical JSON


def _fmt_number(value: float) -> str:
    if not math.isfinite(value):
        raise ValueError(f"cannot serialize non-finite number: {value!r}")
    return format(float(value), ".17g")


def dumps_canonical(value) -> str:
    """Serialize to JSON with 17-significant-digit floats, preserving key order."""
    out: list[str] = []
    _write_canonical(value, out)
    return "".join(out)


def _write_canonical(value, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif isinstance(value, bool):
        out.append("true" if value else "false")
    elif isinstance(value, (int, np.integer)):
        out.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        out.append(_fmt_number(float(value)))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, dict):
        out.append("{")
        for i, (k, v) in enumerate(value.items()):
            if not isinstance(k, str):
                raise TypeError(f"JSON object keys must be strings, got {type(k)}")
            if i:
                out.append(",")
            out.append(json.dumps(k, ensure_ascii=False))
            out.append(":")
            _write_canonical(v, out)
        out.append("}")
    elif isinstance(value, (list, tuple, np.ndarray)):
        out.append("[")
        seq = value.tolist() if isinstance(value, np.ndarray) else value
        for i, v in enumerate(seq):
            if i:
                out.append(",")
            _write_canonical(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(value)} canonically")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# instance pools


@dataclass(frozen=True)
class Instance:
    """One pool record. Scores are raw on input, [0, 1] after normalization."""

    id: str
    query: str
    response: str
    tags: tuple[str, ...]
    quality: float
    complexity: float


class DuplicateIdError(ValueError):
    """Two pool records share an id; the pool is not usable as-is."""


_REQUIRED_KEYS = ("id", "query", "response", "tags", "quality", "complexity")


def _parse_instance(obj: dict) -> Instance:
    for key in _REQUIRED_KEYS:
        if key not in obj:
            raise ValueError(f"missing required key '{key}'")
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise ValueError("'id' must be a non-empty string")
    if not isinstance(obj["query"], str) or not isinstance(obj["response"], str):
        raise ValueError("'query' and 'response' must be strings")
    tags = obj["tags"]
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise ValueError("'tags' must be a list of strings")
    quality = obj["quality"]
    complexity = obj["complexity"]
    if not isinstance(quality, (int, float)) or isinstance(quality, bool):
        raise ValueError("'quality' must be a number")
    if not isinstance(complexity, (int, float)) or isinstance(complexity, bool):
        raise ValueError("'complexity' must be a number")
    if not math.isfinite(quality) or not math.isfinite(complexity):
        raise ValueError("scores must be finite")
    return Instance(
        id=obj["id"],
        query=obj["query"],
        response=obj["response"],
        tags=tuple(tags),
        quality=float(quality),
        complexity=float(complexity),
    )


def load_instances(path) -> tuple[list[Instance], ValidationReport]:
    """Parse a JSONL pool file.

    Parsing is total over lines: every line yields either an Instance or a
    located error entry in the report, so len(instances) + len(errors)
    equals the line count. A duplicate id is a hard error and raises
    :class:`DuplicateIdError` immediately.
    """
    instances: list[Instance] = []
    report = ValidationReport()
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            location = f"line {lineno}"
            if not text:
                report.error(location, "blank line")
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                report.error(location, f"invalid JSON: {exc.msg}")
                continue
            if not isinstance(obj, dict):
                report.error(location, "record is not a JSON object")
                continue
            try:
                inst = _parse_instance(obj)
            except ValueError as exc:
                report.error(location, str(exc))
                continue
            if inst.id in seen:
                raise DuplicateIdError(f"{location}: duplicate instance id '{inst.id}'")
            seen.add(inst.id)
            instances.append(inst)
    return instances, report


def normalize_scores(pool: list[Instance], method: str = "min-max") -> list[Instance]:
    """Rescale quality and complexity independently onto [0, 1].

    Min-max per field; a constant field maps to 0.5 everywhere. Non-finite
    input raises with the offending instance id. Idempotent: applying it
    to its own output changes nothing (already-spanning fields keep their
    endpoints, constants stay at 0.5).
    """
    if method != "min-max":
        raise ValueError(f"unknown normalization method: {method!r}")
    if not pool:
        raise ValueError("cannot normalize an empty pool")
    for inst in pool:
        if not math.isfinite(inst.quality) or not math.isfinite(inst.complexity):
            raise ValueError(f"non-finite score on instance '{inst.id}'")

    def _column(values: list[float]) -> list[float]:
        lo, hi = min(values), max(values)
        if hi == lo:
            return [0.5] * len(values)
        span = hi - lo
        return [(v - lo) / span for v in values]

    qualities = _column([i.quality for i in pool])
    complexities = _column([i.complexity for i in pool])
    return [
        replace(inst, quality=q, complexity=c)
        for inst, q, c in zip(pool, qualities, complexities)
    ]


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingTable:
    """Key -> fixed-dimension float vector, all components finite."""

    dimension: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def get(self, key: str) -> np.ndarray | None:
        return self.entries.get(key)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def fallback_embedding(key: str, dimension: int) -> np.ndarray:
    """Deterministic unit vector for keys missing from an embedding table.

    Derived by hashing the key in counter mode (sha256), mapping 4-byte
    words onto [-1, 1) and normalizing; stable across runs and platforms.
    """
    if dimension <= 0:
        raise ValueError("embedding dimension must be positive")
    raw = bytearray()
    counter = 0
    while len(raw) < 4 * dimension:
        block = hashlib.sha256(key.encode("utf-8") + b"\x00" + str(counter).encode()).digest()
        raw.extend(block)
        counter += 1
    words = np.frombuffer(bytes(raw[: 4 * dimension]), dtype="<u4").astype(np.float64)
    vec = words / 2147483648.0 - 1.0
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:  # astronomically unlikely; keep the function total
        vec = np.zeros(dimension)
        vec[0] = 1.0
        return vec
    return vec / norm


def load_embeddings(path) -> EmbeddingTable:
    """Parse a TSV embedding file.

    First line is ``dim=<d> count=<n>``; every following line is
    ``key<TAB>v1 v2 ... vd``. Wrong dimension, non-finite values,
    duplicate keys, or a count mismatch raise with the offending key or
    line named.
    """
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        parts = header.split()
        if (
            len(parts) != 2
            or not parts[0].startswith("dim=")
            or not parts[1].startswith("count=")
        ):
            raise ValueError(f"malformed embedding header: {header!r}")
        try:
            dim = int(parts[0][4:])
            count = int(parts[1][6:])
        except ValueError:
            raise ValueError(f"malformed embedding header: {header!r}") from None
        if dim <= 0:
            raise ValueError(f"embedding dimension must be positive, got {dim}")
        table = EmbeddingTable(dimension=dim)
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            key, sep, rest = line.rstrip("\n").partition("\t")
            if not sep:
                raise ValueError(f"line {lineno}: missing tab separator")
            if key in table.entries:
                raise ValueError(f"line {lineno}: duplicate embedding key '{key}'")
            values = rest.split()
            if len(values) != dim:
                raise ValueError(
                    f"key '{key}': expected {dim} components, got {len(values)}"
                )
            vec = np.array([float(v) for v in values], dtype=np.float64)
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"key '{key}': non-finite embedding component")
            table.entries[key] = vec
    if len(table.entries) != count:
        raise ValueError(
            f"header declares count={count} but file has {len(table.entries)} rows"
        )
    return table


def write_embeddings(table: EmbeddingTable, path) -> None:
    """Inverse of :func:`load_embeddings`; used by fixtures and tooling."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"dim={table.dimension} count={len(table.entries)}\n")
        for key, vec in table.entries.items():
            comps = " ".join(_fmt_number(v) for v in vec)
            f.write(f"{key}\t{comps}\n")


# ---------------------------------------------------------------------------
# tree serialization


def save_tree(tree: TagTree, path) -> None:
    """Write tree JSON; rejects invalid trees rather than persisting them."""
    report = validate_tree(tree)
    if not report.ok:
        raise InvalidTreeError(report)
    payload = {
        "nodes": [
            {
                "id": n.id,
                "name": n.name,
                "parent": n.parent,
                "children": list(n.children),
                "depth": n.depth,
                "embedding": None if n.embedding is None else n.embedding,
            }
            for n in tree.nodes
        ]
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_canonical(payload))
        f.write("\n")


def load_tree(path) -> TagTree:
    """Read tree JSON and validate; never silently repairs a broken file."""
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if not isinstance(payload, dict) or "nodes" not in payload:
        raise ValueError("tree file must be a JSON object with a 'nodes' array")
    raw_nodes = payload["nodes"]
    if not isinstance(raw_nodes, list):
        raise ValueError("'nodes' must be an array")
    nodes: list[TreeNode] = []
    for i, obj in enumerate(raw_nodes):
        if not isinstance(obj, dict):
            raise ValueError(f"node entry {i} is not an object")
        for key in ("id", "name", "parent", "children", "depth"):
            if key not in obj:
                raise ValueError(f"node entry {i}: missing key '{key}'")
        emb = obj.get("embedding")
        nodes.append(
            TreeNode(
                id=int(obj["id"]),
                name=str(obj["name"]),
                parent=None if obj["parent"] is None else int(obj["parent"]),
                children=[int(c) for c in obj["children"]],
                depth=int(obj["depth"]),
                embedding=None if emb is None else np.array(emb, dtype=np.float64),
            )
        )
    nodes.sort(key=lambda n: n.id)
    tree = TagTree(nodes=nodes)
    report = validate_tree(tree)
    if not report.ok:
        raise InvalidTreeError(report)
    return tree


# ---------------------------------------------------------------------------
# target distributions


@dataclass
class TargetDistribution:
    """Probabilities over leaf node ids; zero-weight leaves are omitted."""

    weights: dict[int, float]

    def dense(self, leaf_ids: np.ndarray) -> np.ndarray:
        """Vector aligned to leaf positions (the order of ``leaf_ids``)."""
        out = np.zeros(len(leaf_ids), dtype=np.float64)
        pos = {int(nid): j for j, nid in enumerate(leaf_ids)}
        for nid, w in self.weights.items():
            out[pos[nid]] = w
        return out


def load_target(path, tree: TagTree) -> TargetDistribution:
    """Read a leaf-name-keyed weight map and bind it to the tree's leaves.

    Weights must be non-negative, keys must name leaves unambiguously, and
    the sum must land in [0.999, 1.001]; the distribution is renormalized
    to sum exactly 1.
    """
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if not isinstance(payload, dict):
        raise ValueError("target file must be a JSON object of leaf name -> weight")
    name_to_leaf: dict[str, int] = {}
    ambiguous: set[str] = set()
    for nid in tree.leaf_ids:
        name = tree.node(int(nid)).name
        if name in name_to_leaf:
            ambiguous.add(name)
        else:
            name_to_leaf[name] = int(nid)
    weights: dict[int, float] = {}
    for name, value in payload.items():
        if name in ambiguous:
            raise ValueError(f"leaf name '{name}' is ambiguous in this tree")
        if name not in name_to_leaf:
            raise ValueError(f"'{name}' is not a leaf of this tree")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ValueError(f"weight for '{name}' is not a number")
        w = float(value)
        if not math.isfinite(w) or w < 0:
            raise ValueError(f"weight for '{name}' must be finite and >= 0")
        if w > 0:
            weights[name_to_leaf[name]] = w
    total = sum(weights.values())
    if not (0.999 <= total <= 1.001):
        raise ValueError(f"target weights sum to {total:.6f}, outside [0.999, 1.001]")
    return TargetDistribution(weights={k: v / total for k, v in weights.items()})


def save_target(target: TargetDistribution, tree: TagTree, path) -> None:
    """Write a target keyed by leaf name (ascending leaf id order)."""
    payload: dict[str, float] = {}
    for nid in sorted(target.weights):
        name = tree.node(nid).name
        if name in payload:
            raise ValueError(f"leaf name '{name}' is ambiguous; cannot write by name")
        payload[name] = target.weights[nid]
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_canonical(payload))
        f.write("\n")
