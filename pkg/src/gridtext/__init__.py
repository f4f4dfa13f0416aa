"""gridtext: hybrid table-text retrieval over bipartite evidence graphs."""

from .corpus import Corpus, Passage, Table, TableSegment, ingest, linearize_segment, restore_table, segment_tables
from .embed import EmbedderHandle, MultiVector, embed, linearize_edge, maxsim, tokenize
from .errors import GridTextError
from .evaluation import QAPair, answer_recall, em_f1, hits_at_tokens, ndcg, run_eval
from .expand import beam_expand, expand_seed, select_seeds
from .graph import BipartiteGraph, NodeKind, NodeRef, ScoredEdge, Star, merge_edges, star_decompose
from .linker import LinkerConfig, link, recognize_mentions
from .pipeline import PipelineConfig, PipelineState, QueryResult, run_query
from .refine import RefinerHandle, classify_aggregation, rank_output, refine_graph, verify_passages
from .retrieve import EdgeIndex, RerankerHandle, build_edge_index, rerank_edges, retrieve_edges

__version__ = "0.1.0"

__all__ = [
    "BipartiteGraph",
    "Corpus",
    "EdgeIndex",
    "EmbedderHandle",
    "GridTextError",
    "LinkerConfig",
    "MultiVector",
    "NodeKind",
    "NodeRef",
    "Passage",
    "PipelineConfig",
    "PipelineState",
    "QAPair",
    "QueryResult",
    "RefinerHandle",
    "RerankerHandle",
    "ScoredEdge",
    "Star",
    "Table",
    "TableSegment",
    "answer_recall",
    "beam_expand",
    "build_edge_index",
    "classify_aggregation",
    "em_f1",
    "embed",
    "expand_seed",
    "hits_at_tokens",
    "ingest",
    "linearize_edge",
    "linearize_segment",
    "link",
    "maxsim",
    "merge_edges",
    "ndcg",
    "rank_output",
    "recognize_mentions",
    "refine_graph",
    "rerank_edges",
    "restore_table",
    "retrieve_edges",
    "run_eval",
    "run_query",
    "segment_tables",
    "select_seeds",
    "star_decompose",
    "tokenize",
    "verify_passages",
]
