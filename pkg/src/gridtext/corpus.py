"""Corpus ingestion, table segmentation, and segment-to-table restoration.

The corpus holds two document collections (tables and passages). Tables are
split into contiguous row slices ("segments") so each retrieval unit stays
within model token limits; the segment-to-table mapping lets later stages
restore the full table behind any segment.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ContractError, IngestionError, ParseError, UnknownIdError

logger = logging.getLogger(__name__)

_WS_RUN = re.compile(r"\s+")

CELL_SEPARATOR = " | "


def normalize_cell(text: str) -> str:
    """Trim surrounding whitespace and collapse internal runs to single spaces."""
    return _WS_RUN.sub(" ", text.strip())


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    body: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ParseError("passage id must be non-empty")
        if not self.title.strip():
            raise ParseError(f"passage {self.id!r}: title must be non-empty")


@dataclass(frozen=True)
class Table:
    id: str
    title: str
    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise ParseError("table id must be non-empty")
        for i, row in enumerate(self.rows):
            if len(row) != len(self.header):
                raise ParseError(
                    f"table {self.id!r}: row {i} has {len(row)} cells, "
                    f"header has {len(self.header)}"
                )


@dataclass(frozen=True)
class TableSegment:
    """A contiguous row slice of a table, carrying a copy of the header."""

    id: str
    table_id: str
    title: str
    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    row_offset: int

    def __post_init__(self) -> None:
        if not self.rows:
            raise ParseError(f"segment {self.id!r}: rows must be non-empty")
        if self.row_offset < 0:
            raise ParseError(f"segment {self.id!r}: negative row_offset")


@dataclass(frozen=True, eq=False)
class Corpus:
    """Immutable snapshot of passages, tables, segments, and the segment map."""

    passages: Mapping[str, Passage]
    tables: Mapping[str, Table]
    segments: Mapping[str, TableSegment] = field(default_factory=dict)
    segment_to_table: Mapping[str, str] = field(default_factory=dict)

    def passage(self, passage_id: str) -> Passage:
        try:
            return self.passages[passage_id]
        except KeyError:
            raise UnknownIdError(f"unknown passage id {passage_id!r}") from None

    def table(self, table_id: str) -> Table:
        try:
            return self.tables[table_id]
        except KeyError:
            raise UnknownIdError(f"unknown table id {table_id!r}") from None

    def segment(self, segment_id: str) -> TableSegment:
        try:
            return self.segments[segment_id]
        except KeyError:
            raise UnknownIdError(f"unknown segment id {segment_id!r}") from None

    def with_segments(self, extra: Iterable[TableSegment]) -> "Corpus":
        """Return a new corpus with additional segments (functional update)."""
        segments = dict(self.segments)
        mapping = dict(self.segment_to_table)
        for seg in extra:
            if seg.id in segments:
                raise IngestionError(f"duplicate segment id {seg.id!r}")
            if seg.table_id not in self.tables:
                raise UnknownIdError(f"segment {seg.id!r}: unknown parent table {seg.table_id!r}")
            segments[seg.id] = seg
            mapping[seg.id] = seg.table_id
        return replace(self, segments=segments, segment_to_table=mapping)

    def to_json_dict(self) -> dict:
        return {
            "passages": [
                {"id": p.id, "title": p.title, "body": p.body}
                for p in self.passages.values()
            ],
            "tables": [
                {
                    "id": t.id,
                    "title": t.title,
                    "header": list(t.header),
                    "rows": [list(r) for r in t.rows],
                }
                for t in self.tables.values()
            ],
            "segments": [
                {
                    "id": s.id,
                    "table_id": s.table_id,
                    "title": s.title,
                    "header": list(s.header),
                    "rows": [list(r) for r in s.rows],
                    "row_offset": s.row_offset,
                }
                for s in self.segments.values()
            ],
            "segment_to_table": dict(self.segment_to_table),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "Corpus":
        passages = {
            p["id"]: Passage(id=p["id"], title=p["title"], body=p["body"])
            for p in payload.get("passages", [])
        }
        tables = {
            t["id"]: Table(
                id=t["id"],
                title=t["title"],
                header=tuple(t["header"]),
                rows=tuple(tuple(r) for r in t["rows"]),
            )
            for t in payload.get("tables", [])
        }
        segments = {
            s["id"]: TableSegment(
                id=s["id"],
                table_id=s["table_id"],
                title=s["title"],
                header=tuple(s["header"]),
                rows=tuple(tuple(r) for r in s["rows"]),
                row_offset=s["row_offset"],
            )
            for s in payload.get("segments", [])
        }
        return cls(
            passages=passages,
            tables=tables,
            segments=segments,
            segment_to_table=dict(payload.get("segment_to_table", {})),
        )


def _load_jsonl(path: Path) -> list[tuple[int, dict]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append((lineno, json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: malformed record: {exc}") from None
    return records


def ingest(table_file: str | Path, passage_file: str | Path) -> Corpus:
    """Load line-delimited table and passage records into a fresh corpus.

    Segmentation is not applied here; the returned corpus has no segments.
    """
    table_path, passage_path = Path(table_file), Path(passage_file)

    tables: dict[str, Table] = {}
    for lineno, rec in _load_jsonl(table_path):
        try:
            table = Table(
                id=str(rec["id"]),
                title=str(rec.get("title", "")),
                header=tuple(str(c) for c in rec["header"]),
                rows=tuple(tuple(str(c) for c in row) for row in rec["rows"]),
            )
        except KeyError as exc:
            raise ParseError(f"{table_path}:{lineno}: missing field {exc}") from None
        except ParseError as exc:
            raise ParseError(f"{table_path}:{lineno}: {exc}") from None
        if table.id in tables:
            raise IngestionError(f"duplicate table id {table.id!r} at {table_path}:{lineno}")
        tables[table.id] = table

    passages: dict[str, Passage] = {}
    for lineno, rec in _load_jsonl(passage_path):
        try:
            passage = Passage(id=str(rec["id"]), title=str(rec["title"]), body=str(rec.get("body", "")))
        except KeyError as exc:
            raise ParseError(f"{passage_path}:{lineno}: missing field {exc}") from None
        except ParseError as exc:
            raise ParseError(f"{passage_path}:{lineno}: {exc}") from None
        if passage.id in passages:
            raise IngestionError(f"duplicate passage id {passage.id!r} at {passage_path}:{lineno}")
        passages[passage.id] = passage

    if not tables:
        raise IngestionError(f"empty corpus side: no tables in {table_path}")
    if not passages:
        raise IngestionError(f"empty corpus side: no passages in {passage_path}")

    return Corpus(passages=passages, tables=tables)


def segment_id_for(table_id: str, ordinal: int) -> str:
    return f"{table_id}~{ordinal}"


def segment_tables(corpus: Corpus, max_rows: int) -> Corpus:
    """Partition every table into contiguous segments of at most ``max_rows`` rows.

    Segment ids are deterministic (parent id + ordinal). Zero-row tables are
    kept in the corpus but produce no segments.
    """
    if max_rows < 1:
        raise ContractError("max_rows must be >= 1")
    segments: dict[str, TableSegment] = {}
    mapping: dict[str, str] = {}
    for table in corpus.tables.values():
        if not table.rows:
            logger.warning("table %r has zero rows; producing no segments", table.id)
            continue
        for ordinal, start in enumerate(range(0, len(table.rows), max_rows)):
            seg = TableSegment(
                id=segment_id_for(table.id, ordinal),
                table_id=table.id,
                title=table.title,
                header=table.header,
                rows=table.rows[start : start + max_rows],
                row_offset=start,
            )
            segments[seg.id] = seg
            mapping[seg.id] = table.id
    return replace(corpus, segments=segments, segment_to_table=mapping)


def restore_table(segment_id: str, corpus: Corpus) -> Table:
    """Return the full parent table behind a segment (all rows, not the slice)."""
    try:
        table_id = corpus.segment_to_table[segment_id]
    except KeyError:
        raise UnknownIdError(f"unknown segment id {segment_id!r}") from None
    return corpus.table(table_id)


def linearize_segment(segment: TableSegment) -> str:
    """Flatten a segment to text: title, header cells, then each row's cells.

    Cells are whitespace-normalized; empty cells stay as empty tokens between
    separators. Deterministic and idempotent by construction.
    """
    parts = [normalize_cell(segment.title)]
    parts.extend(normalize_cell(c) for c in segment.header)
    for row in segment.rows:
        parts.extend(normalize_cell(c) for c in row)
    return CELL_SEPARATOR.join(parts)
