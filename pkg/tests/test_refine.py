import pytest

from gridtext.corpus import Corpus, Passage, Table, segment_tables
from gridtext.errors import ContractError, TransportError
from gridtext.graph import make_edge, merge_edges, star_decompose
from gridtext.refine import (
    PromptTemplates,
    RefinerHandle,
    build_verification_prompt,
    classify_aggregation,
    aggregate_columns,
    default_templates,
    parse_classification,
    parse_passages,
    parse_rows,
    rank_output,
    refine_graph,
    rule_aggregate_rows,
    verify_passages,
)

ORACLE = RefinerHandle()


def fee_table() -> Table:
    return Table(
        id="transfers",
        title="club transfer fees",
        header=("#", "player", "to", "fee", "date"),
        rows=(
            ("1", "alden hult", "harbor city", "9,000,000", "30 january 2008"),
            ("2", "gio bracken", "arsen field", "8,500,000", "20 june 2001"),
            ("3", "jean marek", "north castle", "8,000,000", "1 january 2005"),
            ("4", "carl cueva", "villa verde", "7,800,000", "12 august 2008"),
            ("5", "barry fenwick", "rover glen", "7,500,000", "29 august 2003"),
        ),
    )


def star_corpus():
    """One linked star: segment seg0 with three passages, one containing the answer."""
    table = Table(
        id="alumni",
        title="college alumni list",
        header=("name", "graduated"),
        rows=(("lalit amara", "1960"),),
    )
    passages = {
        "pa": Passage(id="pa", title="lalit amara", body="lalit amara finished in 1960 at the college."),
        "pb": Passage(id="pb", title="law degree", body="a law degree is an academic degree."),
        "pc": Passage(id="pc", title="debate union", body="a debating society in the old city."),
    }
    corpus = segment_tables(Corpus(passages=passages, tables={"alumni": table}), max_rows=3)
    graph = merge_edges(
        [
            make_edge("alumni~0", "pa", 3.0),
            make_edge("alumni~0", "pb", 2.0),
            make_edge("alumni~0", "pc", 1.0),
        ]
    )
    return corpus, graph


class TestParsers:
    def test_classification_true(self):
        text = "Some reasoning here. Therefore, the answer is: f_agg([True])"
        assert parse_classification(text) is True

    def test_classification_false(self):
        assert parse_classification("Therefore, the answer is: f_agg([False])") is False

    def test_classification_missing(self):
        assert parse_classification("no api call at all") is None

    def test_classification_takes_final_call(self):
        text = "f_agg([False]) was my draft. Therefore, the answer is: f_agg([True])"
        assert parse_classification(text) is True

    def test_rows(self):
        text = "explanation... Therefore, the relevant rows are: f_row([row 3, row 5])"
        assert parse_rows(text) == [3, 5]

    def test_rows_missing(self):
        assert parse_rows("nothing structured") is None

    def test_passages(self):
        text = 'Because of X. Therefore, relevant passages are: f_passage(["Lalit Amara", "Other"])'
        assert parse_passages(text) == ["Lalit Amara", "Other"]

    def test_passages_empty_list(self):
        assert parse_passages("Therefore, relevant passages are: f_passage([])") == []

    def test_passages_tolerates_single_quotes(self):
        assert parse_passages("f_passage(['One Title'])") == ["One Title"]


class TestTemplates:
    def test_defaults_carry_markers(self):
        templates = default_templates()
        assert "Therefore, the answer is:" in templates.classify
        assert "Therefore, the relevant rows are:" in templates.aggregate
        assert "Therefore, relevant passages are:" in templates.verify

    def test_missing_marker_rejected(self):
        good = default_templates()
        with pytest.raises(ContractError):
            PromptTemplates(classify="{question}", aggregate=good.aggregate, verify=good.verify)

    def test_prompt_determinism(self):
        corpus, graph = star_corpus()
        (star,) = star_decompose(graph)
        one = build_verification_prompt("q text", star, corpus, default_templates())
        two = build_verification_prompt("q text", star, corpus, default_templates())
        assert one == two


class TestClassify:
    def test_cue_word_triggers(self):
        assert classify_aggregation("when was the third highest paid player born?", ORACLE)

    def test_no_cue_is_false(self):
        assert not classify_aggregation("what is the full name of the 1960 graduate?", ORACLE)

    def test_empty_query_rejected(self):
        with pytest.raises(ContractError):
            classify_aggregation("   ", ORACLE)

    def test_remote_unparseable_defaults_false(self, monkeypatch):
        remote = RefinerHandle(kind="remote_chat", endpoint="http://x")
        monkeypatch.setattr("gridtext.refine.chat", lambda *_: "rambling, no api call")
        assert classify_aggregation("anything at all", remote) is False


class TestRuleAggregate:
    def test_highest_fee_via_ordinal(self):
        # "third highest" plus a header word present in the query
        rows = rule_aggregate_rows("when was the third highest fee paid?", fee_table())
        assert rows == [2]  # jean marek row (0-based)

    def test_highest_value_argmax(self):
        table = Table(
            id="t",
            title="x",
            header=("name", "value"),
            rows=(("a", "10"), ("b", "250"), ("c", "40")),
        )
        assert rule_aggregate_rows("which name holds the highest value?", table) == [1]

    def test_most_recent_uses_year_month(self):
        table = Table(
            id="honors",
            title="monthly honors",
            header=("Year", "Month", "Player"),
            rows=(
                ("2009", "March", "l. okafor"),
                ("2008", "September", "r. tavani"),
                ("2009", "November", "b. almein"),
            ),
        )
        assert rule_aggregate_rows("who is the most recent honoree?", table) == [2]

    def test_no_cue_returns_nothing(self):
        assert rule_aggregate_rows("what is the fee?", fee_table()) == []


class TestVerify:
    def test_keeps_rare_overlap_drops_rest(self):
        corpus, graph = star_corpus()
        (star,) = star_decompose(graph)
        verdict = verify_passages(
            "what is the full name of the lalit amara college graduate?", star, corpus, ORACLE
        )
        assert verdict.kept_passages == ("pa",)

    def test_zero_leaves_noop(self):
        corpus, _ = star_corpus()
        from gridtext.graph import Star, segment_ref

        verdict = verify_passages("q", Star(center=segment_ref("alumni~0"), leaves=()), corpus, ORACLE)
        assert verdict.kept_passages == ()
        assert verdict.parse_status == "ok"

    def test_remote_parse_failure_fails_open(self, monkeypatch):
        corpus, graph = star_corpus()
        (star,) = star_decompose(graph)
        remote = RefinerHandle(kind="remote_chat", endpoint="http://x")
        monkeypatch.setattr("gridtext.refine.chat", lambda *_: "no api call here")
        verdict = verify_passages("q", star, corpus, remote)
        assert set(verdict.kept_passages) == {"pa", "pb", "pc"}
        assert verdict.parse_status == "fallback"

    def test_remote_selection_resolved_by_title(self, monkeypatch):
        corpus, graph = star_corpus()
        (star,) = star_decompose(graph)
        remote = RefinerHandle(kind="remote_chat", endpoint="http://x")
        monkeypatch.setattr(
            "gridtext.refine.chat",
            lambda *_: 'Therefore, relevant passages are: f_passage(["Lalit Amara", "Unlisted"])',
        )
        verdict = verify_passages("q", star, corpus, remote)
        assert verdict.kept_passages == ("pa",)  # unlisted titles cannot be kept


class TestRefineGraph:
    def test_gating_no_aggregation_adds_no_rows(self):
        corpus, graph = star_corpus()
        result = refine_graph(
            "what is the full name of the lalit amara graduate?", graph, corpus, ORACLE
        )
        assert result.aggregation is False
        assert result.added_segments == ()
        assert set(result.graph.edges) | {e.key for e in result.removed} == set(graph.edges)

    def test_score_preservation_and_partition(self):
        corpus, graph = star_corpus()
        result = refine_graph("the lalit amara college graduate?", graph, corpus, ORACLE)
        for key, edge in result.graph.edges.items():
            assert edge.score == graph.edges[key].score
        kept = set(result.graph.edges)
        removed = {e.key for e in result.removed}
        assert kept | removed == set(graph.edges)
        assert kept & removed == set()

    def test_refiner_outage_passes_graph_through(self, monkeypatch):
        corpus, graph = star_corpus()
        remote = RefinerHandle(kind="remote_chat", endpoint="http://x")

        def boom(*_):
            raise TransportError("down", endpoint="http://x", attempts=2)

        monkeypatch.setattr("gridtext.refine.chat", boom)
        result = refine_graph("any question", graph, corpus, remote)
        assert result.outage is True
        assert result.graph == graph
        assert result.removed == ()

    def test_aggregation_adds_single_row_segment_with_row_passages(self):
        table = Table(
            id="ledger",
            title="holdings ledger",
            header=("name", "value"),
            rows=(("first entry", "10"), ("bigger entry", "900")),
        )
        passages = {
            "pwin": Passage(id="pwin", title="bigger entry", body="ledger lore for the bigger entry."),
            "pother": Passage(id="pother", title="first entry", body="ledger lore for the first entry."),
        }
        corpus = segment_tables(Corpus(passages=passages, tables={"ledger": table}), max_rows=1)
        # Only the first row's segment was retrieved; the argmax row is absent.
        graph = merge_edges([make_edge("ledger~0", "pother", 1.0)])
        row_links = {("ledger", 1): ("pwin",), ("ledger", 0): ("pother",)}
        result = refine_graph(
            "which name carries the highest value in the holdings ledger?",
            graph,
            corpus,
            ORACLE,
            row_links=row_links,
            edge_scorer=lambda q, edges, c: [e.with_score(5.0) for e in edges],
        )
        assert result.aggregation is True
        (segment,) = result.added_segments
        assert segment.table_id == "ledger"
        assert segment.rows == (("bigger entry", "900"),)
        assert "+agg" in segment.id
        assert any(e.key == (segment.id, "pwin") for e in result.added_edges)
        assert result.corpus.segments[segment.id] is segment

    def test_covered_row_not_re_added(self):
        corpus, graph = star_corpus()
        result = refine_graph(
            "who is the most recent lalit amara graduate?", graph, corpus, ORACLE
        )
        # the only row of the only table is already in the graph with its links
        assert result.added_segments == ()


class TestRankOutput:
    def edges(self, n, base=10.0, prefix="S"):
        return [make_edge(f"{prefix}{i}", f"P{i}", base - i) for i in range(n)]

    def test_top_k_kept(self):
        kept = merge_edges(self.edges(5))
        out = rank_output(kept, [], k=3)
        assert [e.key for e in out] == [("S0", "P0"), ("S1", "P1"), ("S2", "P2")]

    def test_fill_rule(self):
        kept = merge_edges(self.edges(2))
        removed = self.edges(4, base=100.0, prefix="R")
        out = rank_output(kept, removed, k=5)
        assert [e.key[0] for e in out] == ["S0", "S1", "R0", "R1", "R2"]

    def test_all_removed_degenerate_fill(self):
        from gridtext.graph import BipartiteGraph

        removed = self.edges(4, prefix="R")
        out = rank_output(BipartiteGraph.empty(), removed, k=2)
        assert [e.key[0] for e in out] == ["R0", "R1"]

    def test_score_map_override(self):
        kept = merge_edges(self.edges(2))
        out = rank_output(kept, [], k=2, score_map={("S1", "P1"): 99.0})
        assert out[0].key == ("S1", "P1")
        assert out[0].score == 99.0

    def test_k_validation(self):
        from gridtext.graph import BipartiteGraph

        with pytest.raises(ContractError):
            rank_output(BipartiteGraph.empty(), [], k=0)


class TestRemoteAggregateParsing:
    def test_rows_mapped_back_and_out_of_range_dropped(self, monkeypatch, caplog):
        corpus, graph = star_corpus()
        (star,) = star_decompose(graph)
        remote = RefinerHandle(kind="remote_chat", endpoint="http://x")
        monkeypatch.setattr(
            "gridtext.refine.chat",
            lambda *_: "Therefore, the relevant rows are: f_row([row 1, row 9])",
        )
        with caplog.at_level("WARNING"):
            verdict = aggregate_columns("most recent?", star, corpus, remote)
        assert verdict.added_rows == (("alumni", 0),)
        assert "out-of-range" in caplog.text
