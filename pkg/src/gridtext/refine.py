"""Stage 3: star-based refinement of the expanded graph.

A refiner (an LLM service, or a deterministic rule oracle used as the test
substrate) works one star at a time:

1. Classify whether the query needs a column-wise aggregation.
2. If so, restore each star center's full parent table and ask the refiner
   which rows answer the aggregation; result rows enter the graph as fresh
   single-row segments ("+aggN" ids) together with their row-linked passages,
   each new edge scored once on entry.
3. Verify every star's passage leaves; edges whose passage is not kept are
   removed — existing scores are never recalculated. Removed edges are
   returned so ranked output can fall back to them when the kept set runs
   short of k.

Verification fails open: an unparseable or unreachable refiner keeps all
leaves, which the fallback fill can still recover from.
"""

from __future__ import annotations

import ast
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Mapping, Sequence
from weakref import WeakKeyDictionary

from .corpus import Corpus, Table, TableSegment, normalize_cell, restore_table
from .embed import post_json_with_retries, tokenize
from .errors import ContractError, TransportError
from .graph import (
    BipartiteGraph,
    EdgeKey,
    ScoredEdge,
    Star,
    add_edges,
    make_edge,
    remove_edges,
    segment_ref,
    star_decompose,
)

logger = logging.getLogger(__name__)

CLASSIFY_MARKER = "Therefore, the answer is:"
ROWS_MARKER = "Therefore, the relevant rows are:"
PASSAGES_MARKER = "Therefore, relevant passages are:"

AGGREGATION_CUES = frozenset(
    {
        "most",
        "least",
        "highest",
        "lowest",
        "latest",
        "earliest",
        "first",
        "last",
        "third",
        "recent",
        "maximum",
        "minimum",
    }
)

_MAX_CUES = frozenset({"most", "highest", "latest", "recent", "maximum", "last"})
_MIN_CUES = frozenset({"least", "lowest", "earliest", "minimum", "first"})
_TEMPORAL_CUES = frozenset({"latest", "earliest", "recent", "first", "last"})
_ORDINALS = {"first": 1, "second": 2, "third": 3, "fourth": 4, "fifth": 5}

_ORACLE_STOPWORDS = frozenset(
    """a an and are as at be but by did do does for from had has have how in is it its
    of on or that the their there these this those to was were what when where which
    who whose why will with""".split()
) | AGGREGATION_CUES

_MONTHS = {
    name: i + 1
    for i, name in enumerate(
        "january february march april may june july august september october november december".split()
    )
}


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------


def _load_template(name: str) -> str:
    return resources.files("gridtext.prompts").joinpath(name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptTemplates:
    classify: str
    aggregate: str
    verify: str

    def __post_init__(self) -> None:
        required = [
            (self.classify, CLASSIFY_MARKER),
            (self.aggregate, ROWS_MARKER),
            (self.verify, PASSAGES_MARKER),
        ]
        for template, marker in required:
            if marker not in template:
                raise ContractError(f"prompt template is missing its answer phrase {marker!r}")


def default_templates() -> PromptTemplates:
    return PromptTemplates(
        classify=_load_template("aggregation_classify.txt"),
        aggregate=_load_template("column_aggregation.txt"),
        verify=_load_template("passage_verification.txt"),
    )


@dataclass(frozen=True)
class RefinerHandle:
    kind: str = "rule_oracle"  # "rule_oracle" | "remote_chat"
    endpoint: str | None = None
    model: str = "refiner"
    temperature: float = 0.0
    max_retries: int = 2
    timeout: float = 60.0
    templates: PromptTemplates = field(default_factory=default_templates)
    # Rule-oracle knobs: a leaf is kept when it shares a query token that is
    # rare across the passage collection.
    oracle_rare_df_cap: int = 5
    oracle_min_token_len: int = 3

    def __post_init__(self) -> None:
        if self.kind not in ("rule_oracle", "remote_chat"):
            raise ContractError(f"unknown refiner kind {self.kind!r}")
        if self.kind == "remote_chat" and not self.endpoint:
            raise ContractError("remote_chat refiner requires an endpoint")


@dataclass(frozen=True)
class RefinerVerdict:
    center_id: str
    kept_passages: tuple[str, ...] = ()
    added_rows: tuple[tuple[str, int], ...] = ()  # (table_id, 0-based absolute row)
    raw_response: str = ""
    parse_status: str = "ok"  # "ok" | "fallback"


# ---------------------------------------------------------------------------
# Response parsing: tolerate leading explanation text, take the final API call
# after the answer phrase when present.
# ---------------------------------------------------------------------------


def _segment_after_marker(text: str, marker: str) -> str:
    idx = text.rfind(marker)
    return text[idx + len(marker) :] if idx >= 0 else text


def parse_classification(text: str) -> bool | None:
    scope = _segment_after_marker(text, CLASSIFY_MARKER)
    matches = re.findall(r"f_agg\(\[(.*?)\]\)", scope, flags=re.DOTALL)
    if not matches:
        return None
    return "true" in matches[-1].lower()


def parse_rows(text: str) -> list[int] | None:
    scope = _segment_after_marker(text, ROWS_MARKER)
    matches = re.findall(r"f_row\(\[(.*?)\]\)", scope, flags=re.DOTALL)
    if not matches:
        return None
    return [int(n) for n in re.findall(r"row\s*(\d+)", matches[-1], flags=re.IGNORECASE)]


def parse_passages(text: str) -> list[str] | None:
    scope = _segment_after_marker(text, PASSAGES_MARKER)
    matches = re.findall(r"f_passage\(\[(.*?)\]\)", scope, flags=re.DOTALL)
    if not matches:
        return None
    body = matches[-1].strip()
    if not body:
        return []
    try:
        parsed = ast.literal_eval(f"[{body}]")
        return [str(item) for item in parsed]
    except (ValueError, SyntaxError):
        return re.findall(r"[\"']([^\"']+)[\"']", body)


# ---------------------------------------------------------------------------
# Prompt construction (byte-identical for identical inputs).
# ---------------------------------------------------------------------------


def format_table_block(title: str, header: Sequence[str], rows: Sequence[Sequence[str]], row_offset: int = 0) -> str:
    lines = [f"caption : {normalize_cell(title)}", "col : " + " | ".join(normalize_cell(h) for h in header)]
    for i, row in enumerate(rows):
        lines.append(f"row {row_offset + i + 1} : " + " | ".join(normalize_cell(c) for c in row))
    return "\n".join(lines)


def build_classify_prompt(query: str, templates: PromptTemplates) -> str:
    return templates.classify.format(question=query)


def build_aggregation_prompt(
    query: str,
    table: Table,
    row_links: Mapping[tuple[str, int], Sequence[str]],
    corpus: Corpus,
    templates: PromptTemplates,
) -> str:
    blocks = []
    for row_index in range(len(table.rows)):
        pids = row_links.get((table.id, row_index), ())
        if not pids:
            continue
        lines = [f"passages linked to row {row_index + 1}:"]
        for pid in pids:
            passage = corpus.passage(pid)
            lines.append(f"- {passage.title} : {passage.body}")
        blocks.append("\n".join(lines))
    return templates.aggregate.format(
        question=query,
        table=format_table_block(table.title, table.header, table.rows),
        linked_passages="\n\n".join(blocks) if blocks else "no linked passages",
    )


def build_verification_prompt(query: str, star: Star, corpus: Corpus, templates: PromptTemplates) -> str:
    segment = corpus.segment(star.center.id)
    titles = []
    lines = []
    for leaf, _score in star.leaves:
        passage = corpus.passage(leaf.id)
        titles.append(passage.title)
        lines.append(f"title : {passage.title}. content : {passage.body}")
    listed = "list of linked passages: [" + ", ".join(f'"{t}"' for t in titles) + "]"
    return templates.verify.format(
        question=query,
        table=format_table_block(segment.title, segment.header, segment.rows, segment.row_offset),
        linked_passages="\n".join([listed, *lines]),
    )


def chat(refiner: RefinerHandle, prompt: str) -> str:
    payload = {
        "model": refiner.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": refiner.temperature,
    }
    body = post_json_with_retries(
        f"{refiner.endpoint.rstrip('/')}/chat",
        payload,
        max_retries=refiner.max_retries,
        timeout=refiner.timeout,
    )
    content = body.get("content")
    if not isinstance(content, str):
        raise TransportError("malformed /chat response: no content", endpoint=refiner.endpoint, attempts=1)
    return content


# ---------------------------------------------------------------------------
# Rule oracle: the deterministic testing substrate. Not a model of LLM
# behavior — a documented set of lexical/arithmetic rules.
# ---------------------------------------------------------------------------


def parse_numeric_value(cell: str) -> float | None:
    cleaned = normalize_cell(cell).replace(",", "").replace("$", "").replace("%", "").strip()
    if not cleaned:
        return None
    try:
        return float(cleaned)
    except ValueError:
        return None


def parse_temporal_value(cell: str) -> tuple[int, int, int] | None:
    """Parse a cell into a comparable (year, month, day) key, or None."""
    s = normalize_cell(cell).lower()
    if not s:
        return None
    m = re.fullmatch(r"(\d{3,4})", s)
    if m:
        return (int(m.group(1)), 0, 0)
    m = re.fullmatch(r"(\d{4})-(\d{1,2})(?:-(\d{1,2}))?", s)
    if m:
        return (int(m.group(1)), int(m.group(2)), int(m.group(3) or 0))
    m = re.fullmatch(r"([a-z]+)\s+(\d{3,4})", s)
    if m and m.group(1) in _MONTHS:
        return (int(m.group(2)), _MONTHS[m.group(1)], 0)
    m = re.fullmatch(r"(\d{1,2})\s+([a-z]+)\s+(\d{3,4})", s)
    if m and m.group(2) in _MONTHS:
        return (int(m.group(3)), _MONTHS[m.group(2)], int(m.group(1)))
    if s in _MONTHS:  # bare month column alongside a year column
        return (0, _MONTHS[s], 0)
    return None


def _column_values(table: Table, col: int, parser) -> list | None:
    """Parsed column values when >= 80% of non-empty cells parse, else None."""
    parsed, non_empty = [], 0
    for row in table.rows:
        cell = row[col]
        if not normalize_cell(cell):
            parsed.append(None)
            continue
        non_empty += 1
        parsed.append(parser(cell))
    ok = sum(1 for v in parsed if v is not None)
    if non_empty == 0 or ok / non_empty < 0.8 or ok == 0:
        return None
    return parsed


def rule_aggregate_rows(query: str, table: Table) -> list[int]:
    """Pick the row an aggregation cue points at (0-based index).

    Column choice: a parseable column whose header tokens appear in the query;
    else the temporal columns (as a composite key, header order) for temporal
    cues; else the numeric column with the widest value range. Direction and
    rank come from the cue words ("third highest" sorts descending and takes
    the third row).
    """
    tokens = set(tokenize(query))
    cues = tokens & AGGREGATION_CUES
    if not cues or not table.rows:
        return []
    if cues & _MAX_CUES:
        descending = True
    elif cues & _MIN_CUES:
        descending = False
    else:
        descending = True  # bare ordinal cue like "third"
    rank = 1
    for word, k in _ORDINALS.items():
        if word in tokens and (cues - {word}) & (_MAX_CUES | _MIN_CUES):
            rank = k
            break

    numeric_cols = {
        j: values
        for j in range(len(table.header))
        if (values := _column_values(table, j, parse_numeric_value)) is not None
    }
    temporal_cols = {
        j: values
        for j in range(len(table.header))
        if (values := _column_values(table, j, parse_temporal_value)) is not None
    }
    parseable = set(numeric_cols) | set(temporal_cols)

    matched = [j for j, h in enumerate(table.header) if (set(tokenize(h)) & tokens) and j in parseable]
    if matched:
        basis = matched[0]
        values = numeric_cols[basis] if basis in numeric_cols else temporal_cols[basis]
        return _pick_row(values, descending, rank)
    if cues & _TEMPORAL_CUES and temporal_cols:
        # Composite dates (e.g. year + month columns) sort as a tuple, header order.
        ordered = sorted(temporal_cols)
        keyed = []
        for i in range(len(table.rows)):
            if all(temporal_cols[j][i] is None for j in ordered):
                keyed.append(None)
            else:
                keyed.append(tuple(temporal_cols[j][i] or (0, 0, 0) for j in ordered))
        return _pick_row(keyed, descending, rank)
    if numeric_cols:
        basis = max(
            numeric_cols,
            key=lambda j: (
                max(v for v in numeric_cols[j] if v is not None)
                - min(v for v in numeric_cols[j] if v is not None),
                -j,
            ),
        )
        return _pick_row(numeric_cols[basis], descending, rank)
    return []


def _pick_row(values: Sequence, descending: bool, rank: int) -> list[int]:
    indexed = [(v, i) for i, v in enumerate(values) if v is not None]
    if not indexed:
        return []
    indexed.sort(key=lambda item: (item[0],), reverse=descending)
    rank = min(max(rank, 1), len(indexed))
    return [indexed[rank - 1][1]]


_df_cache: "WeakKeyDictionary[Corpus, dict[str, int]]" = WeakKeyDictionary()


def _passage_document_frequency(corpus: Corpus) -> dict[str, int]:
    cached = _df_cache.get(corpus)
    if cached is not None:
        return cached
    df: dict[str, int] = {}
    for passage in corpus.passages.values():
        for token in set(tokenize(f"{passage.title} {passage.body}")):
            df[token] = df.get(token, 0) + 1
    _df_cache[corpus] = df
    return df


def rule_keep_leaf(query: str, leaf_text: str, corpus: Corpus, refiner: RefinerHandle) -> bool:
    """Keep a leaf when it shares a rare, informative query token."""
    df = _passage_document_frequency(corpus)
    leaf_tokens = set(tokenize(leaf_text))
    for token in set(tokenize(query)):
        if len(token) < refiner.oracle_min_token_len or token in _ORACLE_STOPWORDS:
            continue
        if token in leaf_tokens and df.get(token, 0) <= refiner.oracle_rare_df_cap:
            return True
    return False


# ---------------------------------------------------------------------------
# Refinement operations
# ---------------------------------------------------------------------------


def classify_aggregation(query: str, refiner: RefinerHandle) -> bool:
    """True when the query needs column-wise aggregation; unparseable means False."""
    if not query.strip():
        raise ContractError("query must be non-empty")
    if refiner.kind == "rule_oracle":
        return bool(set(tokenize(query)) & AGGREGATION_CUES)
    response = chat(refiner, build_classify_prompt(query, refiner.templates))
    verdict = parse_classification(response)
    if verdict is None:
        logger.warning("aggregation classification unparseable; defaulting to False")
        return False
    return verdict


def aggregate_columns(
    query: str,
    star: Star,
    corpus: Corpus,
    refiner: RefinerHandle,
    row_links: Mapping[tuple[str, int], Sequence[str]] | None = None,
) -> RefinerVerdict:
    """Resolve the aggregation rows for one star's restored parent table."""
    table = restore_table(star.center.id, corpus)
    row_links = row_links or {}
    if refiner.kind == "rule_oracle":
        rows = rule_aggregate_rows(query, table)
        return RefinerVerdict(
            center_id=star.center.id,
            added_rows=tuple((table.id, r) for r in rows),
            parse_status="ok",
        )
    response = chat(refiner, build_aggregation_prompt(query, table, row_links, corpus, refiner.templates))
    parsed = parse_rows(response)
    if parsed is None:
        return RefinerVerdict(center_id=star.center.id, raw_response=response, parse_status="fallback")
    rows = []
    for one_based in parsed:
        if 1 <= one_based <= len(table.rows):
            rows.append(one_based - 1)
        else:
            logger.warning("aggregation returned out-of-range row %d for table %r", one_based, table.id)
    return RefinerVerdict(
        center_id=star.center.id,
        added_rows=tuple((table.id, r) for r in rows),
        raw_response=response,
        parse_status="ok",
    )


def verify_passages(query: str, star: Star, corpus: Corpus, refiner: RefinerHandle) -> RefinerVerdict:
    """Binary per-leaf relevance verdict; fails open (keep all) on parse failure."""
    if not star.leaves:
        return RefinerVerdict(center_id=star.center.id)
    leaf_ids = [leaf.id for leaf, _ in star.leaves]
    if refiner.kind == "rule_oracle":
        kept = [
            pid
            for pid in leaf_ids
            if rule_keep_leaf(
                query,
                f"{corpus.passage(pid).title} {corpus.passage(pid).body}",
                corpus,
                refiner,
            )
        ]
        return RefinerVerdict(center_id=star.center.id, kept_passages=tuple(kept))
    response = chat(refiner, build_verification_prompt(query, star, corpus, refiner.templates))
    parsed = parse_passages(response)
    if parsed is None:
        logger.warning("verification unparseable for star %r; keeping all leaves", star.center.id)
        return RefinerVerdict(
            center_id=star.center.id,
            kept_passages=tuple(leaf_ids),
            raw_response=response,
            parse_status="fallback",
        )
    wanted = {normalize_cell(t).casefold() for t in parsed}
    kept = [pid for pid in leaf_ids if normalize_cell(corpus.passage(pid).title).casefold() in wanted]
    return RefinerVerdict(
        center_id=star.center.id,
        kept_passages=tuple(kept),
        raw_response=response,
        parse_status="ok",
    )


@dataclass(frozen=True)
class RefineResult:
    graph: BipartiteGraph  # refined graph, scores untouched
    removed: tuple[ScoredEdge, ...]
    corpus: Corpus  # may carry aggregation-added segments
    aggregation: bool
    verdicts: tuple[RefinerVerdict, ...]
    added_segments: tuple[TableSegment, ...] = ()
    added_edges: tuple[ScoredEdge, ...] = ()
    outage: bool = False
    flags: tuple[str, ...] = ()


def _row_represented(
    table_id: str,
    row: int,
    graph: BipartiteGraph,
    corpus: Corpus,
    row_links: Mapping[tuple[str, int], Sequence[str]],
) -> bool:
    """True when the row's content AND its linked passages are already in the graph.

    A segment merely covering the row is not enough: expansion can pull in a
    covering segment without the row's passage edges, and the aggregation
    result would then stay unreachable.
    """
    linked = row_links.get((table_id, row), ())
    for node in graph.nodes:
        if node.kind.value != "segment":
            continue
        seg = corpus.segments.get(node.id)
        if seg is None or seg.table_id != table_id:
            continue
        if not (seg.row_offset <= row < seg.row_offset + len(seg.rows)):
            continue
        if all(graph.has_edge((seg.id, pid)) for pid in linked):
            return True
    return False


def single_row_segment(table: Table, row: int, ordinal: int) -> TableSegment:
    """An aggregation-result row as a fresh one-row segment ("+aggN" id)."""
    return TableSegment(
        id=f"{table.id}~r{row}+agg{ordinal}",
        table_id=table.id,
        title=table.title,
        header=table.header,
        rows=(table.rows[row],),
        row_offset=row,
    )


def refine_graph(
    query: str,
    graph: BipartiteGraph,
    corpus: Corpus,
    refiner: RefinerHandle,
    *,
    row_links: Mapping[tuple[str, int], Sequence[str]] | None = None,
    edge_scorer: Callable[[str, Sequence[ScoredEdge], Corpus], Sequence[ScoredEdge]] | None = None,
) -> RefineResult:
    """Run classification, aggregation, and verification over a graph.

    Existing edge scores are never recalculated; aggregation-added edges are
    scored once on entry by ``edge_scorer``. A refiner outage on the initial
    classification leaves the graph unchanged with the outage flag set.
    """
    row_links = row_links or {}
    flags: list[str] = []
    try:
        is_aggregation = classify_aggregation(query, refiner)
    except TransportError as exc:
        logger.warning("refiner outage, graph passed through unrefined: %s", exc)
        return RefineResult(
            graph=graph,
            removed=(),
            corpus=corpus,
            aggregation=False,
            verdicts=(),
            outage=True,
            flags=("refiner outage: classification unavailable",),
        )

    work = graph
    working_corpus = corpus
    verdicts: list[RefinerVerdict] = []
    added_segments: list[TableSegment] = []
    added_edges: list[ScoredEdge] = []

    if is_aggregation:
        seen_tables: set[str] = set()
        agg_ordinal = 0
        for star in star_decompose(graph):
            table_id = corpus.segment_to_table.get(star.center.id)
            if table_id is None or table_id in seen_tables:
                continue
            seen_tables.add(table_id)
            try:
                verdict = aggregate_columns(query, star, working_corpus, refiner, row_links)
            except TransportError as exc:
                flags.append(f"aggregation skipped for {star.center.id}: {exc}")
                continue
            verdicts.append(verdict)
            for tid, row in verdict.added_rows:
                if _row_represented(tid, row, work, working_corpus, row_links):
                    continue
                agg_ordinal += 1
                segment = single_row_segment(working_corpus.table(tid), row, agg_ordinal)
                working_corpus = working_corpus.with_segments([segment])
                added_segments.append(segment)
                protos = [make_edge(segment.id, pid, 0.0) for pid in row_links.get((tid, row), ())]
                if protos and edge_scorer is not None:
                    scored = list(edge_scorer(query, protos, working_corpus))
                elif protos:
                    logger.warning("no edge scorer provided; aggregation edges enter with score 0")
                    scored = protos
                else:
                    scored = []
                work = add_edges(work, scored)
                if not scored:
                    work = BipartiteGraph(
                        nodes=work.nodes | {segment_ref(segment.id)}, edges=work.edges
                    )
                added_edges.extend(scored)

    removed_keys: list[EdgeKey] = []
    for star in star_decompose(work):
        if not star.leaves:
            verdicts.append(RefinerVerdict(center_id=star.center.id))
            continue
        try:
            verdict = verify_passages(query, star, working_corpus, refiner)
        except TransportError as exc:
            flags.append(f"verification failed open for {star.center.id}: {exc}")
            verdict = RefinerVerdict(
                center_id=star.center.id,
                kept_passages=tuple(leaf.id for leaf, _ in star.leaves),
                parse_status="fallback",
            )
        verdicts.append(verdict)
        kept = set(verdict.kept_passages)
        for leaf, _score in star.leaves:
            if leaf.id not in kept:
                removed_keys.append((star.center.id, leaf.id))

    removed = sorted((work.edges[k] for k in removed_keys), key=lambda e: (-e.score, e.key))
    refined = remove_edges(work, removed_keys)
    return RefineResult(
        graph=refined,
        removed=tuple(removed),
        corpus=working_corpus,
        aggregation=is_aggregation,
        verdicts=tuple(verdicts),
        added_segments=tuple(added_segments),
        added_edges=tuple(added_edges),
        flags=tuple(flags),
    )


def rank_output(
    graph: BipartiteGraph,
    removed: Sequence[ScoredEdge],
    k: int,
    score_map: Mapping[EdgeKey, float] | None = None,
) -> list[ScoredEdge]:
    """Kept edges by score desc (key asc ties), then removed edges as filler.

    Removed edges are appended in their own score order until the list reaches
    k or both pools are exhausted.
    """
    if k < 1:
        raise ContractError("k must be >= 1")

    def score_of(edge: ScoredEdge) -> float:
        if score_map is not None and edge.key in score_map:
            return score_map[edge.key]
        return edge.score

    kept = sorted(
        (e.with_score(score_of(e)) for e in graph.edges.values()),
        key=lambda e: (-e.score, e.key),
    )
    kept_keys = {e.key for e in kept}
    fill = sorted(
        (e.with_score(score_of(e)) for e in removed if e.key not in kept_keys),
        key=lambda e: (-e.score, e.key),
    )
    return (kept + fill)[:k]
