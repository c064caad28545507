"""Knowledge graph storage, dense node index and entity matching.

Retrieval is an exact linear scan over unit-normalized node vectors. A node
matches an entity only when it attains the maximal cosine similarity and that
maximum is strictly above the threshold; ties are all returned.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .ts_entities import EntityMention

Embedder = Callable[[str], Sequence[float]]

INDEX_MAGIC = b"KGIX"
INDEX_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class KGNode:
    id: int
    name: str
    definition: str = ""
    description: str = ""


@dataclass(frozen=True)
class KGEdge:
    head: int
    relation: str
    tail: int


@dataclass(frozen=True)
class KnowledgeGraph:
    nodes: tuple[KGNode, ...]
    edges: tuple[KGEdge, ...] = ()
    _by_id: dict = field(init=False, repr=False, compare=False)
    _incident: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        edges = tuple(self.edges)
        by_id: dict[int, KGNode] = {}
        for node in nodes:
            if node.id in by_id:
                raise ValidationError(f"duplicate node id {node.id}")
            if not node.name.strip():
                raise ValidationError(f"node {node.id} has an empty name")
            by_id[node.id] = node
        incident: dict[int, list[int]] = {}
        for i, edge in enumerate(edges):
            for end in (edge.head, edge.tail):
                if end not in by_id:
                    raise ValidationError(f"edge {i} references unknown node id {end}")
            incident.setdefault(edge.head, []).append(i)
            if edge.tail != edge.head:
                incident.setdefault(edge.tail, []).append(i)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_incident", incident)

    def node(self, node_id: int) -> KGNode:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise ValidationError(f"unknown node id {node_id}") from None

    def __contains__(self, node_id) -> bool:
        return node_id in self._by_id

    def incident_edge_indices(self, node_ids: Iterable[int]) -> list[int]:
        found: set[int] = set()
        for nid in node_ids:
            found.update(self._incident.get(nid, ()))
        return sorted(found)


def load_kg(nodes_path: str | Path, edges_path: str | Path) -> KnowledgeGraph:
    nodes = []
    with open(nodes_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                nodes.append(
                    KGNode(
                        int(obj["id"]),
                        str(obj["name"]),
                        str(obj.get("definition") or ""),
                        str(obj.get("description") or ""),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{nodes_path} line {lineno}: bad node ({exc})") from None
    known = {n.id for n in nodes}
    edges = []
    with open(edges_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                edge = KGEdge(int(obj["head"]), str(obj["relation"]), int(obj["tail"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{edges_path} line {lineno}: bad edge ({exc})") from None
            if edge.head not in known or edge.tail not in known:
                raise ValidationError(
                    f"{edges_path} line {lineno}: dangling edge {edge.head} -> {edge.tail}"
                )
            edges.append(edge)
    return KnowledgeGraph(tuple(nodes), tuple(edges))


def write_kg(kg: KnowledgeGraph, nodes_path: str | Path, edges_path: str | Path) -> None:
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for n in kg.nodes:
            fh.write(
                json.dumps(
                    {"id": n.id, "name": n.name, "definition": n.definition, "description": n.description}
                )
                + "\n"
            )
    with open(edges_path, "w", encoding="utf-8") as fh:
        for e in kg.edges:
            fh.write(json.dumps({"head": e.head, "relation": e.relation, "tail": e.tail}) + "\n")


@dataclass(frozen=True, eq=False)
class NodeEmbeddingIndex:
    vectors: np.ndarray
    node_ids: tuple[int, ...]

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(self.node_ids):
            raise ValidationError("index rows must align with node ids")
        norms = np.linalg.norm(vectors, axis=1)
        if vectors.shape[0] and np.abs(norms - 1.0).max() > 1e-6:
            raise ValidationError("index rows must be unit-normalized")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "node_ids", tuple(int(i) for i in self.node_ids))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.node_ids)

    def similarities(self, query: Sequence[float]) -> np.ndarray:
        q = _as_vector(query, self.dim)
        q = q / np.linalg.norm(q)
        # Row-wise reduction: identical rows always produce identical scores,
        # which keeps tie detection exact.
        return (self.vectors * q).sum(axis=1)

    def save(self, path: str | Path) -> None:
        n, d = self.vectors.shape
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, n, d))
            fh.write(self.vectors.astype("<f4").tobytes(order="C"))
            fh.write(np.asarray(self.node_ids, dtype="<u8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "NodeEmbeddingIndex":
        data = Path(path).read_bytes()
        if len(data) < _HEADER.size:
            raise ValidationError(f"{path}: truncated index header")
        magic, version, n, d = _HEADER.unpack_from(data)
        if magic != INDEX_MAGIC or version != INDEX_VERSION:
            raise ValidationError(f"{path}: not a version {INDEX_VERSION} KGIX index")
        off = _HEADER.size
        expected = off + 4 * n * d + 8 * n
        if len(data) != expected:
            raise ValidationError(f"{path}: expected {expected} bytes, found {len(data)}")
        vecs = np.frombuffer(data, dtype="<f4", count=n * d, offset=off).astype(np.float64)
        ids = np.frombuffer(data, dtype="<u8", count=n, offset=off + 4 * n * d)
        vecs = vecs.reshape(n, d)
        # f32 storage loses a little precision; renormalize on the way in.
        if n:
            vecs = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
        return cls(vecs, tuple(int(i) for i in ids))


def _as_vector(v: Sequence[float], dim: int | None = None) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError("embedding must be a 1-D vector")
    if dim is not None and arr.shape[0] != dim:
        raise ValidationError(f"embedding has dimension {arr.shape[0]}, index expects {dim}")
    if not np.isfinite(arr).all():
        raise ValidationError("embedding contains non-finite values")
    if not arr.any():
        raise ValidationError("zero-norm embedding")
    return arr


def build_index(kg: KnowledgeGraph, embed: Embedder) -> NodeEmbeddingIndex:
    rows = []
    dim = None
    for node in kg.nodes:
        try:
            vec = _as_vector(embed(node.name), dim)
        except ValidationError as exc:
            raise ValidationError(f"node {node.id} ({node.name!r}): {exc}") from None
        dim = vec.shape[0]
        rows.append(vec / np.linalg.norm(vec))
    vectors = np.vstack(rows) if rows else np.zeros((0, dim or 0))
    return NodeEmbeddingIndex(vectors, tuple(n.id for n in kg.nodes))


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    va = _as_vector(a)
    vb = _as_vector(b, va.shape[0])
    value = float(np.dot(va, vb) / (np.linalg.norm(va) * np.linalg.norm(vb)))
    return min(1.0, max(-1.0, value))


@dataclass(frozen=True)
class MatchResult:
    query: EntityMention
    matched_nodes: tuple[int, ...]
    similarity: float

    @property
    def matched(self) -> bool:
        return bool(self.matched_nodes)

    def to_dict(self) -> dict:
        return {
            "surface": self.query.surface,
            "source": self.query.source,
            "node_ids": list(self.matched_nodes),
            "similarity": self.similarity,
        }


def match_entity(
    e: EntityMention, index: NodeEmbeddingIndex, embed: Embedder, eta: float
) -> MatchResult:
    if not 0.0 < eta < 1.0:
        raise ValidationError(f"eta must lie in (0, 1), got {eta}")
    if len(index) == 0:
        return MatchResult(e, (), -1.0)
    theta = index.similarities(embed(e.surface))
    best = float(theta.max())
    if best > eta:
        hits = np.flatnonzero(theta == best)
        nodes = tuple(sorted(index.node_ids[i] for i in hits))
    else:
        nodes = ()
    return MatchResult(e, nodes, best)


def sample_triples(
    kg: KnowledgeGraph, node_ids: Iterable[int], k: int = 10, seed: int = 0
) -> list[KGEdge]:
    """Uniform sample (without replacement) of edges touching any of ``node_ids``."""
    if k < 0:
        raise ValidationError("k must be non-negative")
    candidates = kg.incident_edge_indices(node_ids)
    if k == 0 or not candidates:
        return []
    if len(candidates) <= k:
        chosen = candidates
    else:
        rng = np.random.default_rng(seed)
        chosen = sorted(rng.choice(candidates, size=k, replace=False).tolist())
    return [kg.edges[i] for i in chosen]


def node_knowledge(kg: KnowledgeGraph, node_id: int) -> str:
    node = kg.node(node_id)
    body = " ".join(part.strip() for part in (node.definition, node.description) if part.strip())
    return f"{node.name}: {body}" if body else node.name

