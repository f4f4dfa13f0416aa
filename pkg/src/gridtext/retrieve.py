"""Stage 1: edge index construction, exact top-k retrieval, and reranking.

The edge index is an exact exhaustive MaxSim scan — not approximate — so at
any corpus size the oracle "score every edge and sort" describes retrieval
behavior precisely. Ties always break by edge key, making the ranking a
deterministic total order.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus
from .embed import EmbedderHandle, MultiVector, embed, linearize_edge, maxsim, post_json_with_retries
from .errors import ContractError, EmbeddingError, IndexBuildError, TransportError
from .graph import BipartiteGraph, EdgeKey, ScoredEdge, make_edge, merge_edges

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RerankerHandle:
    """A cross-interaction scorer reached over POST /rerank, or a passthrough."""

    kind: str = "passthrough"  # "passthrough" | "remote"
    endpoint: str | None = None
    model: str | None = None
    max_retries: int = 3
    timeout: float = 30.0
    fallback_passthrough: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("passthrough", "remote"):
            raise ContractError(f"unknown reranker kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ContractError("remote reranker requires an endpoint")


@dataclass(frozen=True)
class IndexEntry:
    key: EdgeKey
    vectors: MultiVector


@dataclass(frozen=True, eq=False)
class EdgeIndex:
    entries: tuple[IndexEntry, ...]
    embedder: EmbedderHandle
    built_at: float

    @property
    def num_entries(self) -> int:
        return len(self.entries)


def build_edge_index(data_graph: BipartiteGraph, corpus: Corpus, embedder: EmbedderHandle) -> EdgeIndex:
    """Linearize and embed every edge of the data graph, entries in key order."""
    if data_graph.num_edges == 0:
        raise IndexBuildError("no edges; run linker")
    entries = []
    for edge in data_graph.sorted_edges():
        text = linearize_edge(edge, corpus, embedder.max_tokens)
        try:
            vectors = embed(text, embedder)
        except EmbeddingError as exc:
            raise IndexBuildError(f"embedding failed for edge {edge.key}: {exc}") from exc
        entries.append(IndexEntry(key=edge.key, vectors=vectors))
    return EdgeIndex(entries=tuple(entries), embedder=embedder, built_at=time.time())


def retrieve_edges(query: str, index: EdgeIndex, k1: int) -> list[ScoredEdge]:
    """Exhaustive MaxSim scan: top-k1 edges, score desc, edge key asc on ties."""
    if k1 < 1:
        raise ContractError("k1 must be >= 1")
    try:
        query_vectors = embed(query, index.embedder)
    except EmbeddingError:
        raise ContractError("query is empty after tokenization") from None
    scored = [
        (maxsim(query_vectors, entry.vectors), entry.key) for entry in index.entries
    ]
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [make_edge(key[0], key[1], score) for score, key in scored[:k1]]


def rerank_texts(query: str, candidates: Sequence[str], reranker: RerankerHandle) -> list[float]:
    """Score candidate texts against a query via the remote /rerank protocol."""
    payload: dict = {"query": query, "candidates": list(candidates)}
    if reranker.model:
        payload["model"] = reranker.model
    body = post_json_with_retries(
        f"{reranker.endpoint.rstrip('/')}/rerank",
        payload,
        max_retries=reranker.max_retries,
        timeout=reranker.timeout,
    )
    try:
        scores = [float(s) for s in body["scores"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise TransportError(
            f"malformed /rerank response: {exc}", endpoint=reranker.endpoint, attempts=1
        ) from None
    if len(scores) != len(candidates):
        raise TransportError(
            f"/rerank returned {len(scores)} scores for {len(candidates)} candidates",
            endpoint=reranker.endpoint,
            attempts=1,
        )
    return scores


def rerank_edges(
    query: str,
    edges: Sequence[ScoredEdge],
    reranker: RerankerHandle,
    k2: int,
    corpus: Corpus | None = None,
    max_tokens: int | None = None,
) -> list[ScoredEdge]:
    """Re-score, re-sort, and truncate to k2. Passthrough keeps input scores.

    A remote reranker failure raises TransportError unless the handle is
    configured to fall back to passthrough.
    """
    if k2 < 1:
        raise ContractError("k2 must be >= 1")
    if reranker.kind == "remote":
        if corpus is None:
            raise ContractError("remote reranking requires the corpus to linearize edges")
        texts = [linearize_edge(e, corpus, max_tokens) for e in edges]
        try:
            scores = rerank_texts(query, texts, reranker)
            edges = [e.with_score(s) for e, s in zip(edges, scores)]
        except TransportError:
            if not reranker.fallback_passthrough:
                raise
            logger.warning("remote reranker unavailable; falling back to passthrough scores")
    ordered = sorted(edges, key=lambda e: (-e.score, e.key))
    return list(ordered[:k2])


def score_edges(
    query: str,
    edges: Sequence[ScoredEdge],
    reranker: RerankerHandle,
    corpus: Corpus,
    embedder: EmbedderHandle,
) -> list[ScoredEdge]:
    """Assign entry scores to new edges (expansion or aggregation additions).

    Remote rerankers score the linearized edge text directly; the passthrough
    stand-in scores it with query MaxSim under the primary embedder so all
    score-map values stay on one comparable scale.
    """
    if not edges:
        return []
    texts = [linearize_edge(e, corpus, embedder.max_tokens) for e in edges]
    if reranker.kind == "remote":
        try:
            scores = rerank_texts(query, texts, reranker)
            return [e.with_score(s) for e, s in zip(edges, scores)]
        except TransportError:
            if not reranker.fallback_passthrough:
                raise
            logger.warning("remote reranker unavailable; scoring new edges with MaxSim")
    query_vectors = embed(query, embedder)
    return [e.with_score(maxsim(query_vectors, embed(t, embedder))) for e, t in zip(edges, texts)]


def integrate(edges: Sequence[ScoredEdge]) -> BipartiteGraph:
    """Merge reranked edges into the candidate subgraph, keeping max scores."""
    return merge_edges(edges)


# ---------------------------------------------------------------------------
# Index persistence: a JSON manifest plus one flat .npy of concatenated rows.
# No wall-clock fields are serialized, so rebuilding from identical inputs
# yields byte-identical files.
# ---------------------------------------------------------------------------


def save_edge_index(index: EdgeIndex, path_prefix: str | Path) -> None:
    prefix = Path(path_prefix)
    rows = np.concatenate([entry.vectors.rows for entry in index.entries], axis=0)
    lengths = [entry.vectors.l for entry in index.entries]
    manifest = {
        "keys": [list(entry.key) for entry in index.entries],
        "lengths": lengths,
        "d": index.embedder.d,
        "embedder": {
            "kind": index.embedder.kind,
            "d": index.embedder.d,
            "max_tokens": index.embedder.max_tokens,
            "seed": index.embedder.seed,
            "model": index.embedder.model,
        },
    }
    np.save(str(prefix.with_suffix(".npy")), rows)
    with open(prefix.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, sort_keys=True)
        fh.write("\n")


def load_edge_index(path_prefix: str | Path, embedder: EmbedderHandle) -> EdgeIndex:
    prefix = Path(path_prefix)
    with open(prefix.with_suffix(".json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    rows = np.load(str(prefix.with_suffix(".npy")))
    entries = []
    offset = 0
    for key, length in zip(manifest["keys"], manifest["lengths"]):
        entries.append(
            IndexEntry(key=(key[0], key[1]), vectors=MultiVector(rows[offset : offset + length]))
        )
        offset += length
    built_at = prefix.with_suffix(".npy").stat().st_mtime
    return EdgeIndex(entries=tuple(entries), embedder=embedder, built_at=built_at)
