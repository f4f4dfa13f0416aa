"""Early fusion: build the offline data graph by linking segment cells to passages.

The default strategy is a deterministic lexical linker: a mention is any
non-numeric cell, and it links to every passage whose title matches the
mention surface after normalization. Each edge keeps provenance (which cell
witnessed it) for the verification stage's explainability output and for
attaching passages to aggregation-recovered rows.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .corpus import Corpus, TableSegment, normalize_cell
from .errors import ParseError
from .graph import BipartiteGraph, make_edge, merge_edges, passage_ref, segment_ref

logger = logging.getLogger(__name__)

_NUMERIC = re.compile(r"^[+-]?[\d\s.,%$]*\d[\d\s.,%$]*$")
_TRAILING_PAREN = re.compile(r"\s*\([^)]*\)\s*$")


@dataclass(frozen=True)
class Mention:
    segment_id: str
    row_index: int  # relative to the segment's row slice
    column_index: int
    surface: str


@dataclass(frozen=True)
class LinkerConfig:
    strategy: str = "lexical"  # "lexical" | "remote"
    min_surface_len: int = 2
    case_fold: bool = True
    # Off by default: retry unmatched mentions against titles with a trailing
    # parenthetical disambiguator stripped, e.g. "Funhouse (Pink album)".
    fuzzy_parenthetical: bool = False

    def __post_init__(self) -> None:
        if self.min_surface_len < 1:
            raise ParseError("min_surface_len must be >= 1")


@dataclass(frozen=True)
class LinkRecord:
    """Provenance: one (mention, title) match witnessing an edge."""

    segment_id: str
    passage_id: str
    surface: str
    row: int  # absolute row index in the parent table
    col: int


@dataclass(frozen=True)
class LinkResult:
    graph: BipartiteGraph
    provenance: tuple[LinkRecord, ...]


def _normalize_surface(text: str, case_fold: bool) -> str:
    text = normalize_cell(text)
    return text.casefold() if case_fold else text


def is_numeric_cell(text: str) -> bool:
    return bool(_NUMERIC.match(text.strip()))


def recognize_mentions(segment: TableSegment, config: LinkerConfig) -> list[Mention]:
    """One mention per qualifying cell: non-numeric and long enough after normalization."""
    mentions = []
    for r, row in enumerate(segment.rows):
        for c, cell in enumerate(row):
            surface = normalize_cell(cell)
            if not surface or is_numeric_cell(surface):
                continue
            if len(surface) < config.min_surface_len:
                continue
            mentions.append(Mention(segment_id=segment.id, row_index=r, column_index=c, surface=surface))
    return mentions


def _title_index(corpus: Corpus, config: LinkerConfig) -> dict[str, list[str]]:
    index: dict[str, list[str]] = {}
    for passage in corpus.passages.values():
        index.setdefault(_normalize_surface(passage.title, config.case_fold), []).append(passage.id)
    for ids in index.values():
        ids.sort()
    return index


def link_segment(segment: TableSegment, corpus: Corpus, config: LinkerConfig) -> list[LinkRecord]:
    """Match one segment's mentions against passage titles."""
    return _link_segment(segment, _title_index(corpus, config), config)


def _link_segment(
    segment: TableSegment, titles: dict[str, list[str]], config: LinkerConfig
) -> list[LinkRecord]:
    records = []
    for mention in recognize_mentions(segment, config):
        key = _normalize_surface(mention.surface, config.case_fold)
        matched = titles.get(key, [])
        if not matched and config.fuzzy_parenthetical:
            matched = [
                pid
                for title, pids in titles.items()
                if _TRAILING_PAREN.sub("", title) == key
                for pid in pids
            ]
        for passage_id in matched:
            records.append(
                LinkRecord(
                    segment_id=segment.id,
                    passage_id=passage_id,
                    surface=mention.surface,
                    row=segment.row_offset + mention.row_index,
                    col=mention.column_index,
                )
            )
    return records


def link(corpus: Corpus, config: LinkerConfig | None = None) -> LinkResult:
    """Build the early-fusion data graph over the whole corpus.

    The node set is exactly the corpus node set (isolated nodes included);
    linking only adds edges, all with an initial score of 0.
    """
    config = config or LinkerConfig()
    if config.strategy not in ("lexical", "remote"):
        raise ParseError(f"unknown linker strategy {config.strategy!r}")
    if config.strategy == "remote":
        # Remote linking shares the lexical fallback until a service is wired in.
        logger.warning("remote linker strategy not configured; using lexical matching")

    titles = _title_index(corpus, config)
    records: list[LinkRecord] = []
    for segment_id in sorted(corpus.segments):
        records.extend(_link_segment(corpus.segments[segment_id], titles, config))

    edges = [make_edge(rec.segment_id, rec.passage_id, 0.0) for rec in records]
    all_nodes = [segment_ref(sid) for sid in corpus.segments] + [
        passage_ref(pid) for pid in corpus.passages
    ]
    graph = merge_edges(edges, extra_nodes=all_nodes)
    return LinkResult(graph=graph, provenance=tuple(records))


def row_links_from_provenance(provenance: Iterable[LinkRecord], corpus: Corpus) -> dict[tuple[str, int], tuple[str, ...]]:
    """Group provenance by (table_id, absolute row): the row-level link map."""
    grouped: dict[tuple[str, int], set[str]] = {}
    for rec in provenance:
        table_id = corpus.segment_to_table.get(rec.segment_id)
        if table_id is None:
            continue
        grouped.setdefault((table_id, rec.row), set()).add(rec.passage_id)
    return {key: tuple(sorted(pids)) for key, pids in grouped.items()}


def dump_provenance(records: Iterable[LinkRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "segment_id": rec.segment_id,
                        "passage_id": rec.passage_id,
                        "surface": rec.surface,
                        "row": rec.row,
                        "col": rec.col,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_provenance(path: str | Path) -> tuple[LinkRecord, ...]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                records.append(
                    LinkRecord(
                        segment_id=rec["segment_id"],
                        passage_id=rec["passage_id"],
                        surface=rec["surface"],
                        row=int(rec["row"]),
                        col=int(rec["col"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed provenance record: {exc}") from None
    return tuple(records)
