"""Pipeline configuration and the three-stage query runner.

A query runs: (1) exact edge retrieval and reranking into a candidate
subgraph, (2) beam-based node expansion, (3) star-based refinement, then
ranked output with removed-edge fallback fill. Stage toggles support the
ablations (expansion off passes the candidate graph straight to refinement;
refinement off flattens the expanded graph into its ranked edge list).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import Corpus
from .embed import EmbedderHandle
from .errors import ContractError, ParseError
from .expand import NodeIndex, beam_expand, node_score_fn
from .graph import BipartiteGraph, NodeKind, ScoredEdge
from .linker import LinkerConfig, LinkRecord, row_links_from_provenance
from .refine import RefinerHandle, default_templates, rank_output, refine_graph
from .retrieve import EdgeIndex, RerankerHandle, integrate, rerank_edges, retrieve_edges, score_edges

logger = logging.getLogger(__name__)

ENV_ENDPOINTS = {
    "embedder": "GRIDTEXT_EMBED_ENDPOINT",
    "edge_reranker": "GRIDTEXT_EDGE_RERANK_ENDPOINT",
    "node_reranker": "GRIDTEXT_NODE_RERANK_ENDPOINT",
    "expander_to_segments": "GRIDTEXT_EXPANDER_P2S_ENDPOINT",
    "expander_to_passages": "GRIDTEXT_EXPANDER_S2P_ENDPOINT",
    "refiner": "GRIDTEXT_CHAT_ENDPOINT",
}


@dataclass(frozen=True)
class EmbedderConfig:
    d: int = 64
    max_tokens: int = 256
    seed: int = 13
    endpoint: str | None = None
    model: str | None = None

    def handle(self) -> EmbedderHandle:
        kind = "remote" if self.endpoint else "deterministic"
        return EmbedderHandle(
            kind=kind,
            d=self.d,
            max_tokens=self.max_tokens,
            endpoint=self.endpoint,
            seed=self.seed,
            model=self.model,
        )


@dataclass(frozen=True)
class RerankerConfig:
    endpoint: str | None = None
    model: str | None = None
    fallback_passthrough: bool = False

    def handle(self) -> RerankerHandle:
        kind = "remote" if self.endpoint else "passthrough"
        return RerankerHandle(
            kind=kind,
            endpoint=self.endpoint,
            model=self.model,
            fallback_passthrough=self.fallback_passthrough,
        )


@dataclass(frozen=True)
class RefinerConfig:
    endpoint: str | None = None
    model: str = "refiner"
    temperature: float = 0.0
    max_retries: int = 2

    def handle(self) -> RefinerHandle:
        kind = "remote_chat" if self.endpoint else "rule_oracle"
        return RefinerHandle(
            kind=kind,
            endpoint=self.endpoint,
            model=self.model,
            temperature=self.temperature,
            max_retries=self.max_retries,
            templates=default_templates(),
        )


@dataclass(frozen=True)
class PipelineConfig:
    max_rows: int = 3
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    edge_reranker: RerankerConfig = field(default_factory=RerankerConfig)
    node_reranker: RerankerConfig = field(default_factory=RerankerConfig)
    expander_to_segments: EmbedderConfig = field(default_factory=EmbedderConfig)
    expander_to_passages: EmbedderConfig = field(default_factory=EmbedderConfig)
    refiner: RefinerConfig = field(default_factory=RefinerConfig)
    linker: LinkerConfig = field(default_factory=LinkerConfig)
    retrieve_k: int = 400  # stage-1 candidate pool
    rerank_k: int = 100  # stage-1 output size
    beam_width: int = 10
    fanout: int = 20
    output_k: int = 50
    expansion_enabled: bool = True
    refinement_enabled: bool = True
    hits_budget: int = 4096
    acceptance_thresholds: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.rerank_k > self.retrieve_k:
            raise ContractError(
                f"rerank_k ({self.rerank_k}) must not exceed retrieve_k ({self.retrieve_k})"
            )
        if self.beam_width < 0:
            raise ContractError("beam_width must be >= 0")
        if self.output_k < 1:
            raise ContractError("output_k must be >= 1")
        if self.output_k > self.rerank_k + self.beam_width:
            logger.warning(
                "output_k (%d) exceeds rerank_k + beam_width (%d); output may run short",
                self.output_k,
                self.rerank_k + self.beam_width,
            )

    # -- serialization ------------------------------------------------------

    def to_json_dict(self) -> dict:
        def as_dict(obj):
            return dataclasses.asdict(obj)

        return {
            "max_rows": self.max_rows,
            "embedder": as_dict(self.embedder),
            "edge_reranker": as_dict(self.edge_reranker),
            "node_reranker": as_dict(self.node_reranker),
            "expander_to_segments": as_dict(self.expander_to_segments),
            "expander_to_passages": as_dict(self.expander_to_passages),
            "refiner": as_dict(self.refiner),
            "linker": as_dict(self.linker),
            "retrieve_k": self.retrieve_k,
            "rerank_k": self.rerank_k,
            "beam_width": self.beam_width,
            "fanout": self.fanout,
            "output_k": self.output_k,
            "expansion_enabled": self.expansion_enabled,
            "refinement_enabled": self.refinement_enabled,
            "hits_budget": self.hits_budget,
            "acceptance_thresholds": dict(self.acceptance_thresholds),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "PipelineConfig":
        def build(klass, key):
            return klass(**payload[key]) if key in payload else klass()

        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ParseError(f"unknown config fields: {sorted(unknown)}")
        kwargs = {k: v for k, v in payload.items() if k in known}
        for key, klass in (
            ("embedder", EmbedderConfig),
            ("expander_to_segments", EmbedderConfig),
            ("expander_to_passages", EmbedderConfig),
            ("edge_reranker", RerankerConfig),
            ("node_reranker", RerankerConfig),
            ("refiner", RefinerConfig),
            ("linker", LinkerConfig),
        ):
            if key in kwargs:
                kwargs[key] = klass(**kwargs[key])
        if "acceptance_thresholds" in kwargs:
            kwargs["acceptance_thresholds"] = dict(kwargs["acceptance_thresholds"])
        return cls(**kwargs)

    def canonical_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: malformed config: {exc}") from None
        return cls.from_json_dict(payload)

    def with_env_overrides(self, env: Mapping[str, str] | None = None) -> "PipelineConfig":
        """Apply endpoint overrides from environment variables."""
        env = dict(os.environ if env is None else env)
        updated = self
        for attr, var in ENV_ENDPOINTS.items():
            endpoint = env.get(var)
            if endpoint:
                sub = getattr(updated, attr)
                updated = dataclasses.replace(updated, **{attr: dataclasses.replace(sub, endpoint=endpoint)})
        return updated


@dataclass(frozen=True, eq=False)
class PipelineState:
    """Everything a query needs: corpus, data graph, indexes, and handles."""

    config: PipelineConfig
    corpus: Corpus
    data_graph: BipartiteGraph
    provenance: tuple[LinkRecord, ...]
    edge_index: EdgeIndex
    node_indexes: Mapping[NodeKind, NodeIndex]

    def row_links(self) -> dict[tuple[str, int], tuple[str, ...]]:
        return row_links_from_provenance(self.provenance, self.corpus)


@dataclass(frozen=True, eq=False)
class QueryResult:
    question: str
    ranked: tuple[ScoredEdge, ...]
    provenance: Mapping[tuple[str, str], str]  # edge key -> stage that found it
    corpus: Corpus  # snapshot able to resolve aggregation-added segments
    trace: dict


def _edges_as_rows(edges: Sequence[ScoredEdge]) -> list[list]:
    return [[e.segment.id, e.passage.id, e.score] for e in edges]


def run_query(state: PipelineState, question: str) -> QueryResult:
    """Run the full pipeline for one question, collecting a stage-by-stage trace."""
    config = state.config
    embedder = config.embedder.handle()
    edge_reranker = config.edge_reranker.handle()
    trace: dict = {"question": question}

    # Stage 1: retrieve, rerank, integrate.
    retrieved = retrieve_edges(question, state.edge_index, config.retrieve_k)
    reranked = rerank_edges(
        question,
        retrieved,
        edge_reranker,
        config.rerank_k,
        corpus=state.corpus,
        max_tokens=embedder.max_tokens,
    )
    candidate_graph = integrate(reranked)
    provenance = {e.key: "retrieval" for e in candidate_graph.sorted_edges()}
    trace["stage1"] = _edges_as_rows(candidate_graph.edges_by_rank())

    if candidate_graph.num_edges == 0:
        trace["note"] = "no candidates"
        trace["output"] = []
        return QueryResult(
            question=question, ranked=(), provenance={}, corpus=state.corpus, trace=trace
        )

    # Stage 2: query-relevant node expansion.
    expanded_graph = candidate_graph
    if config.expansion_enabled and config.beam_width > 0:
        scorer = node_score_fn(state.corpus, config.node_reranker.handle(), embedder)
        expanders = {
            NodeKind.SEGMENT: config.expander_to_segments.handle(),
            NodeKind.PASSAGE: config.expander_to_passages.handle(),
        }
        beam = beam_expand(
            question,
            candidate_graph,
            b=config.beam_width,
            fanout=config.fanout,
            corpus=state.corpus,
            node_indexes=state.node_indexes,
            expanders=expanders,
            node_scorer=scorer,
            edge_scorer=lambda edges: score_edges(
                question, edges, edge_reranker, state.corpus, embedder
            ),
        )
        expanded_graph = beam.graph
        for edge in beam.added:
            provenance[edge.key] = "expansion"
        trace["seeds"] = [
            [s.node.kind.value, s.node.id, s.reranker_score, s.prob] for s in beam.seeds
        ]
        trace["expansion_added"] = _edges_as_rows(beam.added)
    else:
        trace["seeds"] = []
        trace["expansion_added"] = []

    # Stage 3: star-based refinement.
    corpus = state.corpus
    removed: tuple[ScoredEdge, ...] = ()
    final_graph = expanded_graph
    if config.refinement_enabled:
        refinement = refine_graph(
            question,
            expanded_graph,
            state.corpus,
            config.refiner.handle(),
            row_links=state.row_links(),
            edge_scorer=lambda q, edges, c: score_edges(q, edges, edge_reranker, c, embedder),
        )
        final_graph = refinement.graph
        removed = refinement.removed
        corpus = refinement.corpus
        for edge in refinement.added_edges:
            provenance[edge.key] = "aggregation"
        trace["aggregation"] = refinement.aggregation
        trace["agg_added_segments"] = [s.id for s in refinement.added_segments]
        trace["agg_added_edges"] = _edges_as_rows(refinement.added_edges)
        trace["verdicts"] = [
            {
                "center": v.center_id,
                "kept": list(v.kept_passages),
                "added_rows": [[t, r] for t, r in v.added_rows],
                "parse_status": v.parse_status,
            }
            for v in refinement.verdicts
        ]
        trace["refiner_outage"] = refinement.outage
        trace["flags"] = list(refinement.flags)
        # Scores as of the pre-verification graph: output must preserve these.
        pre_refine = dict(expanded_graph.score_map())
        for edge in refinement.added_edges:
            pre_refine[edge.key] = edge.score
        trace["pre_refine_scores"] = {f"{k[0]}|{k[1]}": v for k, v in sorted(pre_refine.items())}
    else:
        trace["aggregation"] = False
        trace["agg_added_segments"] = []
        trace["agg_added_edges"] = []
        trace["verdicts"] = []
        trace["refiner_outage"] = False
        trace["flags"] = []
        trace["pre_refine_scores"] = {
            f"{k[0]}|{k[1]}": v for k, v in sorted(expanded_graph.score_map().items())
        }

    trace["removed"] = _edges_as_rows(removed)
    ranked = rank_output(final_graph, removed, config.output_k)
    trace["output"] = [
        [e.segment.id, e.passage.id, e.score, provenance.get(e.key, "retrieval")] for e in ranked
    ]
    return QueryResult(
        question=question,
        ranked=tuple(ranked),
        provenance={e.key: provenance.get(e.key, "retrieval") for e in ranked},
        corpus=corpus,
        trace=trace,
    )
