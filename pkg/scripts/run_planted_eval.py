#!/usr/bin/env python3
"""Ablation grid on the planted suite: full pipeline vs w/o expansion vs w/o refinement.

Builds everything in memory (no workspace needed) and prints AR@k / nDCG@k
per configuration, plus the aggregation-recovery probe.
"""

import argparse
import dataclasses
import time

from gridtext.evaluation import run_eval
from gridtext.pipeline import run_query
from gridtext.synth import aggregation_probe_config, build_planted_suite, planted_config, suite_corpus
from gridtext.workspace import build_state

KS = (2, 5, 10)


def evaluate(state, pairs):
    return run_eval(
        lambda q: run_query(state, q),
        pairs,
        ks=KS,
        corpus_for=lambda r: r.corpus,
        hits_budget=state.config.hits_budget,
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    started = time.time()
    suite = build_planted_suite(seed=args.seed)
    state = build_state(suite_corpus(suite), planted_config())
    print(f"built planted corpus + indexes in {time.time() - started:.1f}s\n")

    variants = {
        "full": state.config,
        "w/o expansion": dataclasses.replace(state.config, expansion_enabled=False),
        "w/o refinement": dataclasses.replace(state.config, refinement_enabled=False),
    }
    header = f"{'variant':<16}" + "".join(f"AR@{k:<7}" for k in KS) + "".join(f"nDCG@{k:<5}" for k in KS)
    print(header)
    for name, config in variants.items():
        report = evaluate(dataclasses.replace(state, config=config), suite.pairs())
        cells = "".join(f"{report.ar_at[k]:<10.3f}" for k in KS)
        cells += "".join(f"{report.ndcg_at[k]:<10.3f}" for k in KS)
        print(f"{name:<16}{cells}")

    print("\naggregation-recovery probe (tight cuts, expansion off):")
    pairs = suite.pairs("aggregation")
    for label, config in (
        ("refinement on", aggregation_probe_config()),
        ("refinement off", aggregation_probe_config(refinement_enabled=False)),
    ):
        report = evaluate(dataclasses.replace(state, config=config), pairs)
        print(f"  {label:<16} AR@5 = {report.ar_at[5]:.3f}")

    print(f"\ntotal {time.time() - started:.1f}s")


if __name__ == "__main__":
    main()
