"""Edge-scored bipartite graph over table segments and passages.

Graph values are immutable snapshots: every mutating operation returns a new
graph, so snapshots can be shared freely across concurrent query pipelines.
All orderings are deterministic (score descending, id ascending) so repeated
runs are reproducible bit for bit.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import BipartiteError, ParseError

logger = logging.getLogger(__name__)

EdgeKey = tuple[str, str]  # (segment_id, passage_id)


class NodeKind(str, Enum):
    SEGMENT = "segment"
    PASSAGE = "passage"


@dataclass(frozen=True, order=True)
class NodeRef:
    kind: NodeKind
    id: str


def segment_ref(segment_id: str) -> NodeRef:
    return NodeRef(NodeKind.SEGMENT, segment_id)


def passage_ref(passage_id: str) -> NodeRef:
    return NodeRef(NodeKind.PASSAGE, passage_id)


@dataclass(frozen=True)
class ScoredEdge:
    segment: NodeRef
    passage: NodeRef
    score: float

    def __post_init__(self) -> None:
        if self.segment.kind is not NodeKind.SEGMENT or self.passage.kind is not NodeKind.PASSAGE:
            raise BipartiteError(
                f"edge endpoints must be (segment, passage), got "
                f"({self.segment.kind.value}, {self.passage.kind.value})"
            )
        if not math.isfinite(self.score):
            raise ParseError(f"edge ({self.segment.id}, {self.passage.id}): non-finite score")

    @property
    def key(self) -> EdgeKey:
        return (self.segment.id, self.passage.id)

    def with_score(self, score: float) -> "ScoredEdge":
        return ScoredEdge(self.segment, self.passage, score)


def make_edge(segment_id: str, passage_id: str, score: float = 0.0) -> ScoredEdge:
    return ScoredEdge(segment_ref(segment_id), passage_ref(passage_id), score)


@dataclass(frozen=True)
class Star:
    """One segment center plus its passage leaves, ordered score desc / id asc."""

    center: NodeRef
    leaves: tuple[tuple[NodeRef, float], ...]


@dataclass(frozen=True, eq=True)
class BipartiteGraph:
    nodes: frozenset[NodeRef]
    edges: Mapping[EdgeKey, ScoredEdge]

    # Frozen dataclasses auto-generate __hash__ from fields; the edges mapping
    # is unhashable, so disable hashing explicitly.
    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def empty(cls) -> "BipartiteGraph":
        return cls(nodes=frozenset(), edges={})

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def sorted_nodes(self) -> list[NodeRef]:
        return sorted(self.nodes)

    def sorted_edges(self) -> list[ScoredEdge]:
        return [self.edges[k] for k in sorted(self.edges)]

    def edges_by_rank(self) -> list[ScoredEdge]:
        """Edges ordered by score descending, key ascending."""
        return sorted(self.edges.values(), key=lambda e: (-e.score, e.key))

    def has_edge(self, key: EdgeKey) -> bool:
        return key in self.edges

    def score_map(self) -> dict[EdgeKey, float]:
        return {k: e.score for k, e in self.edges.items()}

    def __iter__(self) -> Iterator[ScoredEdge]:
        return iter(self.sorted_edges())


def merge_edges(edges: Iterable[ScoredEdge], *, extra_nodes: Iterable[NodeRef] = ()) -> BipartiteGraph:
    """Collapse duplicate (segment, passage) pairs keeping the maximum score.

    The node set is the union of edge endpoints plus any ``extra_nodes``
    (used when a graph must carry isolated nodes, e.g. the early-fusion data
    graph that contains every corpus node).
    """
    merged: dict[EdgeKey, ScoredEdge] = {}
    for edge in edges:
        prev = merged.get(edge.key)
        if prev is None or edge.score > prev.score:
            merged[edge.key] = edge
    nodes = set(extra_nodes)
    for edge in merged.values():
        nodes.add(edge.segment)
        nodes.add(edge.passage)
    return BipartiteGraph(nodes=frozenset(nodes), edges=merged)


def add_edges(graph: BipartiteGraph, edges: Iterable[ScoredEdge]) -> BipartiteGraph:
    """Return a new graph with edges added; duplicates keep the higher score."""
    merged = dict(graph.edges)
    nodes = set(graph.nodes)
    for edge in edges:
        prev = merged.get(edge.key)
        if prev is None or edge.score > prev.score:
            merged[edge.key] = edge
        nodes.add(edge.segment)
        nodes.add(edge.passage)
    return BipartiteGraph(nodes=frozenset(nodes), edges=merged)


def remove_edges(graph: BipartiteGraph, edge_keys: Iterable[EdgeKey]) -> BipartiteGraph:
    """Return a new graph without the given edges; endpoints left isolated are dropped.

    Removing an unknown key is a no-op with a warning.
    """
    remaining = dict(graph.edges)
    touched: set[NodeRef] = set()
    for key in edge_keys:
        edge = remaining.pop(key, None)
        if edge is None:
            logger.warning("remove_edges: unknown edge key %r (no-op)", key)
            continue
        touched.add(edge.segment)
        touched.add(edge.passage)
    still_connected: set[NodeRef] = set()
    for edge in remaining.values():
        still_connected.add(edge.segment)
        still_connected.add(edge.passage)
    nodes = {n for n in graph.nodes if n not in touched or n in still_connected}
    return BipartiteGraph(nodes=frozenset(nodes), edges=remaining)


def star_decompose(graph: BipartiteGraph) -> list[Star]:
    """Split a graph into one star per segment node, centers in id order.

    Every edge lands in exactly one star; a passage adjacent to several
    segments appears as a leaf of each. Degree-0 segments yield empty-leaf
    stars so downstream aggregation can still run on them.
    """
    leaves: dict[NodeRef, list[tuple[NodeRef, float]]] = {
        node: [] for node in graph.nodes if node.kind is NodeKind.SEGMENT
    }
    for edge in graph.edges.values():
        leaves.setdefault(edge.segment, []).append((edge.passage, edge.score))
    stars = []
    for center in sorted(leaves):
        ordered = sorted(leaves[center], key=lambda lv: (-lv[1], lv[0].id))
        stars.append(Star(center=center, leaves=tuple(ordered)))
    return stars


def flatten_stars(stars: Sequence[Star]) -> list[ScoredEdge]:
    """Inverse of star_decompose: recover the edge list from stars."""
    edges = []
    for star in stars:
        for leaf, score in star.leaves:
            edges.append(ScoredEdge(star.center, leaf, score))
    return edges


def dump_edges(graph: BipartiteGraph, path: str | Path) -> None:
    """Write edges as line-delimited records, key ascending."""
    with open(path, "w", encoding="utf-8") as fh:
        for edge in graph.sorted_edges():
            fh.write(
                json.dumps(
                    {"segment_id": edge.segment.id, "passage_id": edge.passage.id, "score": edge.score},
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_edges(path: str | Path, *, extra_nodes: Iterable[NodeRef] = ()) -> BipartiteGraph:
    """Read a line-delimited edge dump back into a graph."""
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                edges.append(make_edge(rec["segment_id"], rec["passage_id"], float(rec.get("score", 0.0))))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed edge record: {exc}") from None
    return merge_edges(edges, extra_nodes=extra_nodes)
