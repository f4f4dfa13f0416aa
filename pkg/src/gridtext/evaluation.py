"""Retrieval and end-to-end metrics, plus the batch evaluation harness.

Answer normalization is shared by answer recall, the token-budget hit test,
and EM/F1 so the metrics stay mutually consistent: lowercase, punctuation
replaced by spaces, article tokens dropped, whitespace collapsed.
"""

from __future__ import annotations

import json
import logging
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .corpus import Corpus
from .embed import linearize_edge
from .errors import ContractError, ParseError
from .graph import ScoredEdge

logger = logging.getLogger(__name__)

_PUNCT_TABLE = str.maketrans({ch: " " for ch in string.punctuation})
_ARTICLES = frozenset({"a", "an", "the"})


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str
    gold_segment_ids: tuple[str, ...] = ()
    gold_passage_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.question.strip() or not self.answer.strip():
            raise ParseError("question and answer must be non-empty")


def load_qa_pairs(path) -> list[QAPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pairs.append(
                    QAPair(
                        question=rec["question"],
                        answer=rec["answer"],
                        gold_segment_ids=tuple(rec.get("gold_segment_ids") or ()),
                        gold_passage_ids=tuple(rec.get("gold_passage_ids") or ()),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed QA record: {exc}") from None
    return pairs


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation and articles, collapse whitespace."""
    tokens = text.lower().translate(_PUNCT_TABLE).split()
    return " ".join(t for t in tokens if t not in _ARTICLES)


def answer_tokens(text: str) -> list[str]:
    return normalize_answer(text).split()


def edge_text(edge: ScoredEdge, corpus: Corpus) -> str:
    """Full (untruncated) linearized edge text used by all answer-span metrics."""
    return linearize_edge(edge, corpus, max_tokens=None)


def answer_recall(ranked: Sequence[ScoredEdge], answer: str, k: int, corpus: Corpus) -> bool:
    """Does the normalized answer occur in the concatenated text of the top-k edges?"""
    if k < 1:
        raise ContractError("k must be >= 1")
    needle = normalize_answer(answer)
    if not needle:
        return False
    haystack = normalize_answer(" ".join(edge_text(e, corpus) for e in ranked[:k]))
    return needle in haystack


def relevance_labels(ranked: Sequence[ScoredEdge], answer: str, corpus: Corpus) -> list[int]:
    """Binary contains-answer label per edge (the relevance basis for nDCG)."""
    needle = normalize_answer(answer)
    return [1 if needle and needle in normalize_answer(edge_text(e, corpus)) else 0 for e in ranked]


def ndcg(ranked: Sequence[ScoredEdge], labels: Sequence[int], k: int) -> float:
    """Binary nDCG@k with a 1/log2(rank+1) discount; 0 when nothing is relevant."""
    if k < 1:
        raise ContractError("k must be >= 1")
    if len(labels) != len(ranked):
        raise ContractError("one relevance label per ranked edge is required")
    dcg = sum(
        label / math.log2(rank + 1)
        for rank, label in enumerate(labels[:k], start=1)
    )
    total_relevant = sum(1 for label in labels if label)
    if total_relevant == 0:
        return 0.0
    ideal = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(total_relevant, k) + 1))
    return dcg / ideal


def hits_at_tokens(
    ranked: Sequence[ScoredEdge],
    answer: str,
    budget: int,
    corpus: Corpus,
    tokenizer: Callable[[str], list[str]] = str.split,
) -> bool:
    """Does the answer survive within the first ``budget`` tokens of the linearized list?"""
    if budget < 1:
        raise ContractError("token budget must be >= 1")
    text = " ".join(edge_text(e, corpus) for e in ranked)
    clipped = " ".join(tokenizer(text)[:budget])
    needle = normalize_answer(answer)
    return bool(needle) and needle in normalize_answer(clipped)


def em_f1(prediction: str, gold: str) -> tuple[int, float]:
    """SQuAD-style exact match and token-level F1 on normalized strings."""
    pred_norm, gold_norm = normalize_answer(prediction), normalize_answer(gold)
    em = int(bool(pred_norm) and pred_norm == gold_norm)
    pred_tokens, gold_tokens = pred_norm.split(), gold_norm.split()
    if not pred_tokens or not gold_tokens:
        return em, 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return em, 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return em, 2 * precision * recall / (precision + recall)


def gold_id_hit(ranked: Sequence[ScoredEdge], pair: QAPair, k: int) -> bool | None:
    """Secondary recall column: does a gold id appear among the top-k endpoints?"""
    gold = set(pair.gold_segment_ids) | set(pair.gold_passage_ids)
    if not gold:
        return None
    for edge in ranked[:k]:
        if edge.segment.id in gold or edge.passage.id in gold:
            return True
    return False


@dataclass
class EvalReport:
    num_queries: int
    ar_at: dict[int, float]
    ndcg_at: dict[int, float]
    hits_4k: float
    em: float | None
    f1: float | None
    gold_recall_at: dict[int, float | None]
    failures: int
    per_query: list[dict] = field(default_factory=list)

    def to_json_dict(self, include_per_query: bool = False) -> dict:
        payload = {
            "num_queries": self.num_queries,
            "ar_at": {str(k): v for k, v in sorted(self.ar_at.items())},
            "ndcg_at": {str(k): v for k, v in sorted(self.ndcg_at.items())},
            "hits_4k": self.hits_4k,
            "em": self.em,
            "f1": self.f1,
            "gold_recall_at": {str(k): v for k, v in sorted(self.gold_recall_at.items())},
            "failures": self.failures,
        }
        if include_per_query:
            payload["per_query"] = self.per_query
        return payload


def run_eval(
    run_query: Callable[[str], "object"],
    qa_pairs: Sequence[QAPair],
    ks: Sequence[int],
    corpus_for: Callable[["object"], Corpus],
    *,
    hits_budget: int = 4096,
    predictions: Mapping[str, str] | None = None,
) -> EvalReport:
    """Evaluate a query runner over QA pairs, aggregating all metrics.

    ``run_query`` maps a question to a result object exposing ``ranked``
    (the output edge list) and ``trace`` (a JSON-ready dict); ``corpus_for``
    resolves the corpus snapshot that can linearize that result's edges
    (aggregation may have added segments). Per-query failures are recorded
    and the run continues.
    """
    ks = sorted(set(ks))
    if not ks:
        raise ContractError("at least one k is required")
    rows: list[dict] = []
    failures = 0
    em_scores: list[int] = []
    f1_scores: list[float] = []

    for pair in qa_pairs:
        try:
            result = run_query(pair.question)
            ranked = result.ranked
            corpus = corpus_for(result)
        except Exception as exc:  # per-query isolation: record and continue
            logger.error("query failed: %r: %s", pair.question, exc)
            failures += 1
            rows.append({"question": pair.question, "error": str(exc)})
            continue
        labels = relevance_labels(ranked, pair.answer, corpus)
        row = {
            "question": pair.question,
            "answer": pair.answer,
            "ar": {str(k): answer_recall(ranked, pair.answer, k, corpus) for k in ks},
            "ndcg": {str(k): ndcg(ranked, labels, k) for k in ks},
            "hits_4k": hits_at_tokens(ranked, pair.answer, hits_budget, corpus),
            "gold_hit": {str(k): gold_id_hit(ranked, pair, k) for k in ks},
            "trace": result.trace,
        }
        if predictions is not None and pair.question in predictions:
            em, f1 = em_f1(predictions[pair.question], pair.answer)
            row["em"], row["f1"] = em, f1
            em_scores.append(em)
            f1_scores.append(f1)
        rows.append(row)

    scored_rows = [r for r in rows if "error" not in r]

    def mean_over(extract: Callable[[dict], float | bool]) -> float:
        if not scored_rows:
            return 0.0
        return sum(float(extract(r)) for r in scored_rows) / len(scored_rows)

    gold_recall: dict[int, float | None] = {}
    for k in ks:
        with_gold = [r for r in scored_rows if r["gold_hit"][str(k)] is not None]
        gold_recall[k] = (
            sum(1.0 for r in with_gold if r["gold_hit"][str(k)]) / len(with_gold)
            if with_gold
            else None
        )

    return EvalReport(
        num_queries=len(qa_pairs),
        ar_at={k: mean_over(lambda r: r["ar"][str(k)]) for k in ks},
        ndcg_at={k: mean_over(lambda r: r["ndcg"][str(k)]) for k in ks},
        hits_4k=mean_over(lambda r: r["hits_4k"]),
        em=(sum(em_scores) / len(em_scores)) if em_scores else None,
        f1=(sum(f1_scores) / len(f1_scores)) if f1_scores else None,
        gold_recall_at=gold_recall,
        failures=failures,
        per_query=rows,
    )
