#!/usr/bin/env python3
"""Generate the planted synthetic corpus and stage a ready-to-query workspace.

Writes the corpus/QA files under OUTDIR/suite and the staged workspace
(corpus, data graph, indexes) under OUTDIR/workspace.
"""

import argparse
from pathlib import Path

from gridtext.synth import build_planted_suite, planted_config
from gridtext.workspace import do_index, do_ingest, do_link


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("outdir", type=Path)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    suite_dir = args.outdir / "suite"
    workspace = args.outdir / "workspace"
    suite = build_planted_suite(seed=args.seed)
    paths = suite.write(suite_dir)
    print(f"suite: {len(suite.tables)} tables, {len(suite.passages)} passages, "
          f"{len(suite.questions)} questions -> {suite_dir}")

    config = planted_config()
    corpus = do_ingest(paths["tables"], paths["passages"], workspace, config)
    graph = do_link(workspace)
    do_index(workspace)
    print(f"workspace: {len(corpus.segments)} segments, {graph.num_edges} linked edges -> {workspace}")
    print("try: gridtext query -w", workspace, "-q '<question from suite/qa_all.jsonl>'")


if __name__ == "__main__":
    main()
