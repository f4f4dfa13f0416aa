#!/usr/bin/env python3
"""Sweep the expansion beam width and report AR@10 on the expansion sub-suite.

The planted expansion questions are unreachable without the beam, so AR@10
rises from zero as the width grows and saturates once the gold joints fit.
"""

import argparse
import dataclasses

from gridtext.evaluation import run_eval
from gridtext.pipeline import run_query
from gridtext.synth import build_planted_suite, planted_config, suite_corpus
from gridtext.workspace import build_state


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--widths", default="0,1,2,5,10")
    args = parser.parse_args()

    suite = build_planted_suite(seed=args.seed)
    state = build_state(suite_corpus(suite), planted_config())
    pairs = suite.pairs("expansion")

    print(f"{'beam width':<12}AR@10")
    for width in (int(w) for w in args.widths.split(",")):
        config = dataclasses.replace(state.config, beam_width=width)
        report = run_eval(
            lambda q: run_query(dataclasses.replace(state, config=config), q),
            pairs,
            ks=[10],
            corpus_for=lambda r: r.corpus,
        )
        print(f"{width:<12}{report.ar_at[10]:.3f}")


if __name__ == "__main__":
    main()
