import json
from pathlib import Path

import pytest

from gridtext.corpus import Corpus, Passage, Table, segment_tables
from gridtext.synth import build_planted_suite, planted_config, suite_corpus
from gridtext.workspace import build_state


def make_table(table_id="t1", title="award winners", n_rows=5, header=("year", "artist", "work")):
    rows = tuple((str(1988 + i), f"artist {i}", f"work {i}") for i in range(n_rows))
    return Table(id=table_id, title=title, header=header, rows=rows)


@pytest.fixture
def tiny_corpus() -> Corpus:
    """Two tables and four passages with one planted cell/title match per table."""
    t1 = Table(
        id="t1",
        title="country vocal award",
        header=("year", "artist", "work"),
        rows=(
            ("1988", "J. P. Harlan", "Hold the Line"),
            ("1989", "Mira Voss", "Quiet Rivers"),
            ("1990", "", "Open Road"),
        ),
    )
    t2 = Table(
        id="t2",
        title="rock instrumental award",
        header=("year", "artist", "work"),
        rows=(("1988", "The Granite Set", "Slate"),),
    )
    passages = {
        "p1": Passage(id="p1", title="J. P. Harlan", body="J. P. Harlan is a country singer."),
        "p2": Passage(id="p2", title="Mira Voss", body="Mira Voss recorded Quiet Rivers in 1989."),
        "p3": Passage(id="p3", title="The Granite Set", body="An instrumental rock group."),
        "p4": Passage(id="p4", title="Unrelated Topic", body="Nothing links here."),
    }
    corpus = Corpus(passages=passages, tables={"t1": t1, "t2": t2})
    return segment_tables(corpus, max_rows=2)


@pytest.fixture(scope="session")
def planted_suite():
    return build_planted_suite(seed=7)


@pytest.fixture(scope="session")
def planted_state(planted_suite):
    return build_state(suite_corpus(planted_suite), planted_config())


def write_jsonl(path: Path, records) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return path


@pytest.fixture
def corpus_files(tmp_path):
    tables = write_jsonl(
        tmp_path / "tables.jsonl",
        [
            {
                "id": "t1",
                "title": "first table",
                "header": ["a", "b"],
                "rows": [["1", "x"], ["2", "y"]],
            },
            {
                "id": "t2",
                "title": "second table",
                "header": ["a"],
                "rows": [["only"]],
            },
        ],
    )
    passages = write_jsonl(
        tmp_path / "passages.jsonl",
        [
            {"id": "p1", "title": "alpha", "body": "alpha body"},
            {"id": "p2", "title": "beta", "body": "beta body"},
            {"id": "p3", "title": "gamma", "body": "gamma body"},
        ],
    )
    return tables, passages
