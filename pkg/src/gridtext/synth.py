"""Synthetic planted corpus for desk-scale evaluation.

Every fact lives in generated nonsense words, so under the deterministic
hash embedder relevance is a controlled function of token overlap. Three
question families are planted:

* single_link — the gold passage is linked offline (a table cell matches its
  title), so stage 1 alone can retrieve the answer-bearing edge.
* expansion — the gold passage matches no table cell; it is reachable only by
  expanding from the bridge row that names the related organization.
* aggregation — the gold row's passage-bearing edge is engineered to rank
  just below the top edges of its table, so with a tight rerank cut the row
  is absent until column-wise aggregation restores it.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .corpus import Corpus, Passage, Table, segment_id_for
from .evaluation import QAPair
from .pipeline import EmbedderConfig, PipelineConfig

_SYLLABLES = [
    "ba", "ce", "di", "fo", "gu", "ha", "ji", "ko", "lu", "me", "ni", "po",
    "qua", "re", "si", "tu", "ve", "wo", "xa", "ye", "zo", "bran", "crel",
    "dorn", "fell", "grim", "holt", "jarn", "kest", "lorn", "mird", "nolt",
    "prin", "quor", "rast", "sken", "thar", "uld", "vast", "wren", "yorm", "zelt",
]

_RESERVED = frozenset(
    """registry holdings keeper item founded value oversees holding born settlement
    honored gala law chartered province maintains crews shade wear serve""".split()
)

HEADER = ("item", "keeper", "founded", "value")

DEFAULT_SEED = 7
DEFAULT_MAX_ROWS = 3


@dataclass(frozen=True)
class PlantedQuestion:
    pair: QAPair
    category: str  # "single_link" | "expansion" | "aggregation"


@dataclass(frozen=True, eq=False)
class PlantedSuite:
    tables: tuple[Table, ...]
    passages: tuple[Passage, ...]
    questions: tuple[PlantedQuestion, ...]

    def pairs(self, category: str | None = None) -> list[QAPair]:
        return [q.pair for q in self.questions if category is None or q.category == category]

    def write(self, outdir: str | Path) -> dict[str, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {}
        paths["tables"] = outdir / "tables.jsonl"
        with open(paths["tables"], "w", encoding="utf-8") as fh:
            for t in self.tables:
                fh.write(
                    json.dumps(
                        {
                            "id": t.id,
                            "title": t.title,
                            "header": list(t.header),
                            "rows": [list(r) for r in t.rows],
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        paths["passages"] = outdir / "passages.jsonl"
        with open(paths["passages"], "w", encoding="utf-8") as fh:
            for p in self.passages:
                fh.write(
                    json.dumps({"id": p.id, "title": p.title, "body": p.body}, ensure_ascii=False)
                    + "\n"
                )
        for category in (None, "single_link", "expansion", "aggregation"):
            name = f"qa_{category or 'all'}.jsonl"
            paths[name] = outdir / name
            _write_pairs(self.pairs(category), paths[name])
        return paths


def _write_pairs(pairs: Iterable[QAPair], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(
                json.dumps(
                    {
                        "question": pair.question,
                        "answer": pair.answer,
                        "gold_segment_ids": list(pair.gold_segment_ids),
                        "gold_passage_ids": list(pair.gold_passage_ids),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


class _Words:
    def __init__(self, seed: int):
        self._rng = random.Random(seed)
        self._used: set[str] = set()

    def word(self, syllables: int = 3) -> str:
        while True:
            w = "".join(self._rng.choice(_SYLLABLES) for _ in range(syllables))
            if w not in self._used and w not in _RESERVED:
                self._used.add(w)
                return w

    def name(self) -> str:
        return f"{self.word(2)} {self.word(2)}"

    def year(self) -> str:
        while True:
            y = str(self._rng.randint(1000, 9999))
            if y not in self._used:
                self._used.add(y)
                return y

    def amount(self, low: int, high: int) -> int:
        return self._rng.randint(low, high)


def build_planted_suite(
    seed: int = DEFAULT_SEED,
    *,
    max_rows: int = DEFAULT_MAX_ROWS,
    plain_tables: int = 10,
    expansion_tables: int = 20,
    aggregation_tables: int = 10,
    filler_passages: int = 20,
) -> PlantedSuite:
    words = _Words(seed)
    tables: list[Table] = []
    passages: list[Passage] = []
    questions: list[PlantedQuestion] = []

    def gold_segment(table_id: str, row: int) -> str:
        return segment_id_for(table_id, row // max_rows)

    # Plain tables: every keeper has a passage; one question per row.
    for t in range(plain_tables):
        table_id = f"plain{t:02d}"
        topic = words.word()
        rows = []
        for j in range(5):
            item, keeper = words.name(), words.name()
            honor, birthplace = words.word(), words.word()
            rows.append((item, keeper, words.year(), str(words.amount(100, 99_999))))
            pid = f"p-{table_id}-{j}"
            passages.append(
                Passage(
                    id=pid,
                    title=keeper,
                    body=(
                        f"{keeper} oversees the holding {item} within the {topic} registry. "
                        f"{keeper} was honored at the {honor} gala and born in the settlement "
                        f"of {birthplace}."
                    ),
                )
            )
            questions.append(
                PlantedQuestion(
                    pair=QAPair(
                        question=(
                            f"Where was {keeper}, the keeper of {item} honored at the "
                            f"{honor} gala, born?"
                        ),
                        answer=birthplace,
                        gold_segment_ids=(gold_segment(table_id, j),),
                        gold_passage_ids=(pid,),
                    ),
                    category="single_link",
                )
            )
        tables.append(Table(id=table_id, title=f"registry of {topic} holdings", header=HEADER, rows=tuple(rows)))

    # Expansion tables: row 0 names an organization with a linked passage;
    # the org passage names a team whose own passage is never linked.
    for t in range(expansion_tables):
        table_id = f"expan{t:02d}"
        topic = words.word()
        org, team, shade = words.name(), words.name(), words.word()
        rows = [(words.name(), org, words.year(), str(words.amount(100, 99_999)))]
        for _ in range(4):
            rows.append((words.name(), words.name(), words.year(), str(words.amount(100, 99_999))))
        org_pid, team_pid = f"p-{table_id}-org", f"p-{table_id}-team"
        passages.append(
            Passage(
                id=org_pid,
                title=org,
                body=(
                    f"{org} maintains the {topic} registry. The crews of {org} are called "
                    f"the {team}."
                ),
            )
        )
        # Body length stays comparable to the keeper passages so the hash
        # embedder's length-dependent noise floor cannot outvote the match
        # signal; the trailing lore words are unique and match nothing.
        lore = " ".join(words.word() for _ in range(7))
        passages.append(
            Passage(
                id=team_pid,
                title=team,
                body=(
                    f"The {team} serve {org} and maintain the {topic} registry. The crews "
                    f"of {org} wear the shade {shade}. Chronicle: {lore}."
                ),
            )
        )
        questions.append(
            PlantedQuestion(
                pair=QAPair(
                    question=f"What shade do the crews of {org}, keeper of the {topic} registry, wear?",
                    answer=shade,
                    gold_passage_ids=(team_pid,),
                ),
                category="expansion",
            )
        )
        tables.append(Table(id=table_id, title=f"registry of {topic} holdings", header=HEADER, rows=tuple(rows)))

    # Aggregation tables: keepers of rows 0-2 and 4 have passages, row 3 does
    # not; the gold row (4) holds the maximum value. The question names the
    # anchor words planted only in rows 0-2's passages, so those edges outrank
    # the gold row's edge by a stable margin.
    for t in range(aggregation_tables):
        table_id = f"aggrg{t:02d}"
        topic, anchor, province = words.word(), words.word(), words.word()
        values = [words.amount(100, 5_000) for _ in range(4)]
        rows = []
        keepers, items = [], []
        for j in range(5):
            item, keeper = words.name(), words.name()
            keepers.append(keeper)
            items.append(item)
            value = words.amount(50_000, 99_999) if j == 4 else values[j]
            rows.append((item, keeper, words.year(), str(value)))
        for j in (0, 1, 2):
            passages.append(
                Passage(
                    id=f"p-{table_id}-{j}",
                    title=keepers[j],
                    body=(
                        f"{keepers[j]} oversees the holding {items[j]} within the {topic} "
                        f"registry, chartered under {anchor} law in the province of {province}."
                    ),
                )
            )
        birthplace = words.word()
        gold_pid = f"p-{table_id}-4"
        passages.append(
            Passage(
                id=gold_pid,
                title=keepers[4],
                body=(
                    f"{keepers[4]} oversees the holding {items[4]} within the {topic} registry. "
                    f"{keepers[4]} was born in the settlement of {birthplace}."
                ),
            )
        )
        questions.append(
            PlantedQuestion(
                pair=QAPair(
                    question=(
                        f"Under {anchor} law in the province of {province}, where was the keeper "
                        f"of the highest-value holding in the {topic} registry born?"
                    ),
                    answer=birthplace,
                    gold_segment_ids=(gold_segment(table_id, 4),),
                    gold_passage_ids=(gold_pid,),
                ),
                category="aggregation",
            )
        )
        tables.append(Table(id=table_id, title=f"registry of {topic} holdings", header=HEADER, rows=tuple(rows)))

    for i in range(filler_passages):
        lore = " ".join(words.word() for _ in range(10))
        passages.append(
            Passage(id=f"p-fill-{i:02d}", title=words.name(), body=f"Recorded lore: {lore}.")
        )

    return PlantedSuite(tables=tuple(tables), passages=tuple(passages), questions=tuple(questions))


def suite_corpus(suite: PlantedSuite) -> Corpus:
    return Corpus(
        passages={p.id: p for p in suite.passages},
        tables={t.id: t for t in suite.tables},
    )


def planted_config(**overrides) -> PipelineConfig:
    """Desk-scale defaults for the planted suite.

    d=128 keeps the hash embedder's collision noise well below one token of
    match signal; the retrieval cuts are sized to the ~110-edge data graph.
    """
    embedder = EmbedderConfig(d=128)
    base: dict = dict(
        embedder=embedder,
        expander_to_segments=embedder,
        expander_to_passages=embedder,
        retrieve_k=50,
        rerank_k=20,
        beam_width=5,
        fanout=20,
        output_k=10,
    )
    base.update(overrides)
    return PipelineConfig(**base)


def aggregation_probe_config(**overrides) -> PipelineConfig:
    """Tightened cuts for the aggregation sub-suite.

    rerank_k=3 keeps the gold row's own edges outside the candidate graph
    (its table's three anchor edges outrank them by a planted margin), and
    expansion stays off so no beam target can re-introduce the covering
    segment; recovery must come from column-wise aggregation alone.
    """
    return planted_config(rerank_k=3, beam_width=0, output_k=5, **overrides)
