"""Stage 2: query-relevant node expansion.

A two-step beam grows the candidate subgraph with edges that early fusion
never materialized. First the top-b candidate-graph nodes are selected by
node-reranker score (probabilities softmax-normalized over the whole node
set). Each seed is then expanded: the query is concatenated with the seed's
text and scored against every opposite-kind corpus node, the per-seed scores
are softmax-normalized over the retrieved fanout set, and the top-b (seed,
target) pairs by joint probability enter the graph. Pairs already present are
skipped so b genuinely new edges are attempted; every new edge is scored on
entry by the edge scorer.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import Corpus
from .embed import EmbedderHandle, MultiVector, TEXT_SEPARATOR, embed, maxsim, node_text, truncate_tokens
from .errors import ContractError
from .graph import BipartiteGraph, NodeKind, NodeRef, ScoredEdge, add_edges, make_edge
from .retrieve import RerankerHandle, rerank_texts

logger = logging.getLogger(__name__)


def softmax(scores: Sequence[float]) -> np.ndarray:
    """Numerically stable softmax at temperature 1.0."""
    if len(scores) == 0:
        return np.zeros(0)
    arr = np.asarray(scores, dtype=np.float64)
    arr = arr - arr.max()
    exp = np.exp(arr)
    return exp / exp.sum()


@dataclass(frozen=True)
class SeedCandidate:
    node: NodeRef
    reranker_score: float
    prob: float  # softmax over the whole candidate-graph node set


@dataclass(frozen=True)
class ExpansionCandidate:
    seed: NodeRef
    target: NodeRef
    cond_prob: float  # softmax over this seed's retrieved candidate set
    joint: float  # cond_prob * seed prob


@dataclass(frozen=True, eq=False)
class NodeIndex:
    """Embedded texts of every corpus node of one kind, id ascending."""

    kind: NodeKind
    ids: tuple[str, ...]
    vectors: tuple[MultiVector, ...]
    embedder: EmbedderHandle


def build_node_index(corpus: Corpus, kind: NodeKind, embedder: EmbedderHandle) -> NodeIndex:
    ids = sorted(corpus.segments if kind is NodeKind.SEGMENT else corpus.passages)
    vectors = []
    for node_id in ids:
        text = truncate_tokens(node_text(kind.value, node_id, corpus), embedder.max_tokens)
        vectors.append(embed(text, embedder))
    return NodeIndex(kind=kind, ids=tuple(ids), vectors=tuple(vectors), embedder=embedder)


def node_score_fn(
    corpus: Corpus, node_reranker: RerankerHandle, embedder: EmbedderHandle
) -> Callable[[str, Sequence[NodeRef]], list[float]]:
    """Build the node scorer backing seed selection.

    Remote rerankers score node texts over /rerank; the passthrough stand-in
    scores query-node MaxSim with the primary embedder.
    """

    def score(query: str, nodes: Sequence[NodeRef]) -> list[float]:
        texts = [
            truncate_tokens(node_text(n.kind.value, n.id, corpus), embedder.max_tokens)
            for n in nodes
        ]
        if node_reranker.kind == "remote":
            return rerank_texts(query, texts, node_reranker)
        query_vectors = embed(query, embedder)
        return [maxsim(query_vectors, embed(t, embedder)) for t in texts]

    return score


def select_seeds(
    query: str,
    graph: BipartiteGraph,
    node_scorer: Callable[[str, Sequence[NodeRef]], list[float]],
    b: int,
) -> list[SeedCandidate]:
    """Top-b candidate-graph nodes by node-reranker score.

    Probabilities are softmax-normalized over ALL graph nodes, not just the
    returned prefix; ties in score break by node id so for b' > b the b-run's
    seeds are a prefix of the b'-run's ranking.
    """
    if b < 0:
        raise ContractError("beam width must be >= 0")
    if b == 0:
        return []
    nodes = graph.sorted_nodes()
    if not nodes:
        raise ContractError("cannot select seeds from an empty candidate graph")
    scores = node_scorer(query, nodes)
    probs = softmax(scores)
    ranked = sorted(zip(nodes, scores, probs), key=lambda item: (-item[1], item[0].id))
    return [
        SeedCandidate(node=node, reranker_score=float(score), prob=float(prob))
        for node, score, prob in ranked[:b]
    ]


def expand_seed(
    query: str,
    seed: SeedCandidate,
    corpus: Corpus,
    node_indexes: Mapping[NodeKind, NodeIndex],
    expanders: Mapping[NodeKind, EmbedderHandle],
    fanout: int,
) -> list[ExpansionCandidate]:
    """Score opposite-kind nodes against the expanded query for one seed.

    The expanded query is the query concatenated with the seed node's text.
    A passage seed targets table segments; a segment seed targets passages.
    Conditional probabilities are softmax-normalized over the retrieved
    fanout set.
    """
    target_kind = NodeKind.SEGMENT if seed.node.kind is NodeKind.PASSAGE else NodeKind.PASSAGE
    index = node_indexes[target_kind]
    handle = expanders[target_kind]
    expanded = truncate_tokens(
        f"{query}{TEXT_SEPARATOR}{node_text(seed.node.kind.value, seed.node.id, corpus)}",
        handle.max_tokens,
    )
    query_vectors = embed(expanded, handle)
    scored = [
        (maxsim(query_vectors, vectors), node_id)
        for node_id, vectors in zip(index.ids, index.vectors)
    ]
    scored.sort(key=lambda item: (-item[0], item[1]))
    top = scored[: max(fanout, 0)]
    probs = softmax([s for s, _ in top])
    return [
        ExpansionCandidate(
            seed=seed.node,
            target=NodeRef(target_kind, node_id),
            cond_prob=float(p),
            joint=float(p * seed.prob),
        )
        for (score, node_id), p in zip(top, probs)
    ]


@dataclass(frozen=True)
class BeamResult:
    graph: BipartiteGraph
    seeds: tuple[SeedCandidate, ...]
    added: tuple[ScoredEdge, ...]
    candidates: tuple[ExpansionCandidate, ...]  # joint-ranked pool, diagnostics


def _candidate_edge_key(candidate: ExpansionCandidate) -> tuple[str, str]:
    if candidate.seed.kind is NodeKind.SEGMENT:
        return (candidate.seed.id, candidate.target.id)
    return (candidate.target.id, candidate.seed.id)


def beam_expand(
    query: str,
    graph: BipartiteGraph,
    *,
    b: int,
    fanout: int,
    corpus: Corpus,
    node_indexes: Mapping[NodeKind, NodeIndex],
    expanders: Mapping[NodeKind, EmbedderHandle],
    node_scorer: Callable[[str, Sequence[NodeRef]], list[float]],
    edge_scorer: Callable[[Sequence[ScoredEdge]], list[ScoredEdge]],
) -> BeamResult:
    """Grow the candidate graph with the top-b new edges by joint probability."""
    if b == 0 or graph.num_nodes == 0:
        return BeamResult(graph=graph, seeds=(), added=(), candidates=())
    seeds = select_seeds(query, graph, node_scorer, b)
    pool: list[ExpansionCandidate] = []
    for seed in seeds:
        pool.extend(expand_seed(query, seed, corpus, node_indexes, expanders, fanout))
    pool.sort(key=lambda c: (-c.joint, c.seed.id, c.target.id))

    selected: list[ExpansionCandidate] = []
    chosen_keys: set[tuple[str, str]] = set()
    for candidate in pool:
        if len(selected) >= b:
            break
        key = _candidate_edge_key(candidate)
        if graph.has_edge(key) or key in chosen_keys:
            continue
        chosen_keys.add(key)
        selected.append(candidate)

    new_edges = [make_edge(*_candidate_edge_key(c)) for c in selected]
    scored = edge_scorer(new_edges)
    expanded_graph = add_edges(graph, scored)
    return BeamResult(
        graph=expanded_graph,
        seeds=tuple(seeds),
        added=tuple(scored),
        candidates=tuple(pool),
    )


# ---------------------------------------------------------------------------
# Node index persistence (same flat layout as the edge index).
# ---------------------------------------------------------------------------


def save_node_index(index: NodeIndex, path_prefix: str | Path) -> None:
    prefix = Path(path_prefix)
    rows = np.concatenate([v.rows for v in index.vectors], axis=0)
    manifest = {
        "kind": index.kind.value,
        "ids": list(index.ids),
        "lengths": [v.l for v in index.vectors],
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


def load_node_index(path_prefix: str | Path, embedder: EmbedderHandle) -> NodeIndex:
    prefix = Path(path_prefix)
    with open(prefix.with_suffix(".json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    rows = np.load(str(prefix.with_suffix(".npy")))
    vectors = []
    offset = 0
    for length in manifest["lengths"]:
        vectors.append(MultiVector(rows[offset : offset + length]))
        offset += length
    return NodeIndex(
        kind=NodeKind(manifest["kind"]),
        ids=tuple(manifest["ids"]),
        vectors=tuple(vectors),
        embedder=embedder,
    )
