"""Staged workspace on disk: ingest -> link -> index -> query/eval.

Each stage reads the previous stage's artifacts and writes its own with
atomic renames. Re-running a stage on unchanged inputs reproduces its files
byte for byte (nothing wall-clock-dependent is serialized).
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from pathlib import Path

from .corpus import Corpus, ingest, segment_tables
from .errors import ContractError
from .expand import NodeIndex, build_node_index, load_node_index, save_node_index
from .graph import BipartiteGraph, NodeKind, dump_edges, load_edges, passage_ref, segment_ref
from .linker import dump_provenance, link, load_provenance
from .pipeline import PipelineConfig, PipelineState
from .retrieve import build_edge_index, load_edge_index, save_edge_index

logger = logging.getLogger(__name__)

CORPUS_FILE = "corpus.json"
CONFIG_FILE = "config.json"
DATA_GRAPH_FILE = "data_graph.jsonl"
PROVENANCE_FILE = "provenance.jsonl"
EDGE_INDEX_PREFIX = "edge_index"
NODE_INDEX_PREFIX = {NodeKind.SEGMENT: "node_index_segment", NodeKind.PASSAGE: "node_index_passage"}


def atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise ContractError(f"missing {path.name}; run `gridtext {producer}` first")
    return path


def write_config(workspace: Path, config: PipelineConfig) -> None:
    workspace.mkdir(parents=True, exist_ok=True)
    atomic_write_text(workspace / CONFIG_FILE, config.canonical_json())


def read_config(workspace: Path) -> PipelineConfig:
    return PipelineConfig.load(_require(workspace / CONFIG_FILE, "ingest"))


def do_ingest(table_file: Path, passage_file: Path, workspace: Path, config: PipelineConfig) -> Corpus:
    """Load the corpus, apply segmentation, persist corpus and config."""
    corpus = segment_tables(ingest(table_file, passage_file), config.max_rows)
    workspace.mkdir(parents=True, exist_ok=True)
    atomic_write_text(
        workspace / CORPUS_FILE,
        json.dumps(corpus.to_json_dict(), ensure_ascii=False, sort_keys=True) + "\n",
    )
    write_config(workspace, config)
    return corpus


def read_corpus(workspace: Path) -> Corpus:
    path = _require(workspace / CORPUS_FILE, "ingest")
    with open(path, encoding="utf-8") as fh:
        return Corpus.from_json_dict(json.load(fh))


def do_link(workspace: Path) -> BipartiteGraph:
    """Run early fusion over the ingested corpus; persist edges and provenance."""
    config = read_config(workspace)
    corpus = read_corpus(workspace)
    result = link(corpus, config.linker)
    tmp_edges = workspace / (DATA_GRAPH_FILE + ".tmp")
    dump_edges(result.graph, tmp_edges)
    os.replace(tmp_edges, workspace / DATA_GRAPH_FILE)
    tmp_prov = workspace / (PROVENANCE_FILE + ".tmp")
    dump_provenance(result.provenance, tmp_prov)
    os.replace(tmp_prov, workspace / PROVENANCE_FILE)
    return result.graph


def read_data_graph(workspace: Path, corpus: Corpus) -> BipartiteGraph:
    path = _require(workspace / DATA_GRAPH_FILE, "link")
    extra = [segment_ref(s) for s in corpus.segments] + [passage_ref(p) for p in corpus.passages]
    return load_edges(path, extra_nodes=extra)


def do_index(workspace: Path) -> None:
    """Embed the data-graph edges and both node collections; persist all indexes."""
    config = read_config(workspace)
    corpus = read_corpus(workspace)
    data_graph = read_data_graph(workspace, corpus)
    embedder = config.embedder.handle()

    edge_index = build_edge_index(data_graph, corpus, embedder)
    _atomic_index_write(
        lambda prefix: save_edge_index(edge_index, prefix), workspace, EDGE_INDEX_PREFIX
    )

    expanders = {
        NodeKind.SEGMENT: config.expander_to_segments.handle(),
        NodeKind.PASSAGE: config.expander_to_passages.handle(),
    }
    for kind, prefix in NODE_INDEX_PREFIX.items():
        node_index = build_node_index(corpus, kind, expanders[kind])
        _atomic_index_write(lambda p, ni=node_index: save_node_index(ni, p), workspace, prefix)


def _atomic_index_write(save_fn, workspace: Path, prefix: str) -> None:
    tmp_prefix = workspace / (prefix + ".tmp")
    save_fn(tmp_prefix)
    for suffix in (".json", ".npy"):
        os.replace(tmp_prefix.with_suffix(suffix), (workspace / prefix).with_suffix(suffix))


def load_state(workspace: Path) -> PipelineState:
    """Assemble the runnable pipeline state from workspace artifacts."""
    config = read_config(workspace)
    corpus = read_corpus(workspace)
    data_graph = read_data_graph(workspace, corpus)
    provenance = load_provenance(_require(workspace / PROVENANCE_FILE, "link"))
    _require((workspace / EDGE_INDEX_PREFIX).with_suffix(".json"), "index")
    edge_index = load_edge_index(workspace / EDGE_INDEX_PREFIX, config.embedder.handle())
    expanders = {
        NodeKind.SEGMENT: config.expander_to_segments.handle(),
        NodeKind.PASSAGE: config.expander_to_passages.handle(),
    }
    node_indexes: dict[NodeKind, NodeIndex] = {}
    for kind, prefix in NODE_INDEX_PREFIX.items():
        _require((workspace / prefix).with_suffix(".json"), "index")
        node_indexes[kind] = load_node_index(workspace / prefix, expanders[kind])
    return PipelineState(
        config=config,
        corpus=corpus,
        data_graph=data_graph,
        provenance=provenance,
        edge_index=edge_index,
        node_indexes=node_indexes,
    )


def build_state(
    corpus: Corpus, config: PipelineConfig, *, data_graph: BipartiteGraph | None = None
) -> PipelineState:
    """In-memory equivalent of ingest + link + index (used by tests and scripts)."""
    if not corpus.segments:
        corpus = segment_tables(corpus, config.max_rows)
    result = link(corpus, config.linker)
    graph = data_graph if data_graph is not None else result.graph
    embedder = config.embedder.handle()
    expanders = {
        NodeKind.SEGMENT: config.expander_to_segments.handle(),
        NodeKind.PASSAGE: config.expander_to_passages.handle(),
    }
    return PipelineState(
        config=config,
        corpus=corpus,
        data_graph=graph,
        provenance=result.provenance,
        edge_index=build_edge_index(graph, corpus, embedder),
        node_indexes={
            kind: build_node_index(corpus, kind, expanders[kind]) for kind in NODE_INDEX_PREFIX
        },
    )
