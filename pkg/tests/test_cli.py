"""End-to-end CLI tests over a temporary workspace."""

import json

import pytest

from gridtext.cli import main
from gridtext.synth import build_planted_suite, planted_config


@pytest.fixture(scope="module")
def suite_files(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("suite")
    suite = build_planted_suite(seed=7, plain_tables=3, expansion_tables=2, aggregation_tables=2)
    paths = suite.write(outdir)
    config_path = outdir / "config.json"
    config_path.write_text(planted_config().canonical_json())
    return outdir, paths, config_path


@pytest.fixture(scope="module")
def built_workspace(suite_files, tmp_path_factory):
    outdir, paths, config_path = suite_files
    ws = tmp_path_factory.mktemp("ws")
    assert (
        main(
            [
                "ingest",
                "--tables",
                str(paths["tables"]),
                "--passages",
                str(paths["passages"]),
                "-w",
                str(ws),
                "--config",
                str(config_path),
            ]
        )
        == 0
    )
    assert main(["link", "-w", str(ws)]) == 0
    assert main(["index", "-w", str(ws)]) == 0
    return ws


class TestStaging:
    def test_artifacts_exist(self, built_workspace):
        ws = built_workspace
        for name in (
            "corpus.json",
            "config.json",
            "data_graph.jsonl",
            "provenance.jsonl",
            "edge_index.json",
            "edge_index.npy",
            "node_index_segment.json",
            "node_index_passage.json",
        ):
            assert (ws / name).exists(), name

    def test_link_requires_ingest(self, tmp_path, capsys):
        code = main(["link", "-w", str(tmp_path / "fresh")])
        assert code == 2
        assert "ingest" in capsys.readouterr().err

    def test_query_requires_index(self, suite_files, tmp_path, capsys):
        outdir, paths, config_path = suite_files
        ws = tmp_path / "partial"
        main(
            [
                "ingest",
                "--tables",
                str(paths["tables"]),
                "--passages",
                str(paths["passages"]),
                "-w",
                str(ws),
                "--config",
                str(config_path),
            ]
        )
        code = main(["query", "-w", str(ws), "-q", "anything"])
        assert code == 2
        assert "link" in capsys.readouterr().err

    def test_reindex_byte_identical(self, built_workspace):
        ws = built_workspace
        before = {
            name: (ws / name).read_bytes()
            for name in ("edge_index.json", "edge_index.npy", "node_index_passage.npy")
        }
        assert main(["index", "-w", str(ws)]) == 0
        for name, blob in before.items():
            assert (ws / name).read_bytes() == blob, name


class TestQuery:
    def test_prints_ranked_edges_with_provenance(self, built_workspace, suite_files, capsys):
        outdir, _, _ = suite_files
        question = json.loads((outdir / "qa_single_link.jsonl").read_text().splitlines()[0])
        code = main(["query", "-w", str(built_workspace), "-q", question["question"], "-k", "5"])
        out = capsys.readouterr().out
        assert code == 0
        assert "retrieval" in out
        assert question["gold_passage_ids"][0] in out

    def test_trace_out(self, built_workspace, suite_files, tmp_path, capsys):
        outdir, _, _ = suite_files
        question = json.loads((outdir / "qa_single_link.jsonl").read_text().splitlines()[0])
        trace_path = tmp_path / "trace.json"
        code = main(
            [
                "query",
                "-w",
                str(built_workspace),
                "-q",
                question["question"],
                "--trace-out",
                str(trace_path),
            ]
        )
        assert code == 0
        trace = json.loads(trace_path.read_text())
        assert trace["question"] == question["question"]
        assert trace["output"]


class TestEval:
    def test_writes_report_and_trace(self, built_workspace, suite_files, tmp_path, capsys):
        outdir, _, _ = suite_files
        report_path = tmp_path / "report.json"
        trace_path = tmp_path / "trace.jsonl"
        code = main(
            [
                "eval",
                "-w",
                str(built_workspace),
                "--qa",
                str(outdir / "qa_single_link.jsonl"),
                "--ks",
                "2,5",
                "--report-out",
                str(report_path),
                "--trace-file",
                str(trace_path),
            ]
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["failures"] == 0
        assert report["ar_at"]["5"] >= 0.9
        assert len(trace_path.read_text().splitlines()) == report["num_queries"]

    def test_eval_runs_are_byte_identical(self, built_workspace, suite_files, tmp_path):
        outdir, _, _ = suite_files
        blobs = []
        for run in range(2):
            report_path = tmp_path / f"report{run}.json"
            trace_path = tmp_path / f"trace{run}.jsonl"
            assert (
                main(
                    [
                        "eval",
                        "-w",
                        str(built_workspace),
                        "--qa",
                        str(outdir / "qa_aggregation.jsonl"),
                        "--ks",
                        "5",
                        "--report-out",
                        str(report_path),
                        "--trace-file",
                        str(trace_path),
                    ]
                )
                == 0
            )
            blobs.append((report_path.read_bytes(), trace_path.read_bytes()))
        assert blobs[0] == blobs[1]

    def test_threshold_violation_exit_code(self, built_workspace, suite_files, tmp_path, capsys):
        outdir, paths, _ = suite_files
        ws = tmp_path / "thresh"
        config = planted_config(acceptance_thresholds={"ar@5": 1.01})
        config_path = tmp_path / "strict.json"
        config_path.write_text(config.canonical_json())
        main(
            [
                "ingest",
                "--tables",
                str(paths["tables"]),
                "--passages",
                str(paths["passages"]),
                "-w",
                str(ws),
                "--config",
                str(config_path),
            ]
        )
        main(["link", "-w", str(ws)])
        main(["index", "-w", str(ws)])
        code = main(
            ["eval", "-w", str(ws), "--qa", str(outdir / "qa_single_link.jsonl"), "--ks", "5"]
        )
        assert code == 4
        assert "acceptance violation" in capsys.readouterr().err


class TestUsage:
    def test_missing_required_option(self, capsys):
        assert main(["query", "-q", "hi"]) == 1

    def test_bad_ks(self, built_workspace, suite_files, capsys):
        outdir, _, _ = suite_files
        code = main(
            [
                "eval",
                "-w",
                str(built_workspace),
                "--qa",
                str(outdir / "qa_single_link.jsonl"),
                "--ks",
                "two,five",
            ]
        )
        assert code == 1

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
