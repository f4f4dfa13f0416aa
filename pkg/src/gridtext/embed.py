"""Multi-vector embeddings and late-interaction (MaxSim) scoring.

Two embedder kinds share one contract:

* ``deterministic`` — every token hashes to a seedable pseudo-random unit
  vector, so similarity is a controllable function of token overlap. This is
  the substrate for all desk-scale tests: texts that share tokens share rows,
  disjoint-vocabulary texts score near the hash-collision baseline.
* ``remote`` — a model service reached over the ``POST /embed`` protocol
  (``{"texts": [...]}`` -> ``{"vectors": [[[...]]], "d": n}`` with unit-norm
  rows). The token count reported by the service is authoritative.

MaxSim scores a query against a document as the sum over query rows of the
maximum inner product against document rows.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .corpus import Corpus, linearize_segment
from .errors import ContractError, EmbeddingError, TransportError
from .graph import ScoredEdge

logger = logging.getLogger(__name__)

TOKEN_RE = re.compile(r"[a-z0-9]+")
_TOKEN_SPAN_RE = re.compile(r"[a-z0-9]+", re.IGNORECASE)
TEXT_SEPARATOR = " [SEP] "

DEFAULT_DIM = 64
DEFAULT_MAX_TOKENS = 256


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation."""
    return TOKEN_RE.findall(text.lower())


@dataclass(frozen=True, eq=False)
class MultiVector:
    """An l x d sequence of unit-norm row vectors embedding one text unit."""

    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        object.__setattr__(self, "rows", rows)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ContractError(f"multi-vector must be a non-empty 2-d array, got shape {rows.shape}")
        norms = np.linalg.norm(rows, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-6):
            raise ContractError("multi-vector rows must be unit-norm within 1e-6")

    @property
    def l(self) -> int:  # noqa: E743 - matches the multi-vector convention
        return int(self.rows.shape[0])

    @property
    def d(self) -> int:
        return int(self.rows.shape[1])


@dataclass(frozen=True)
class EmbedderHandle:
    """Configuration for one embedding role (shared by all multi-vector models)."""

    kind: str = "deterministic"  # "deterministic" | "remote"
    d: int = DEFAULT_DIM
    max_tokens: int = DEFAULT_MAX_TOKENS
    endpoint: str | None = None
    seed: int = 13
    model: str | None = None
    max_retries: int = 3
    timeout: float = 30.0
    batch_size: int = 32  # texts per remote request
    max_inflight: int = 4  # concurrent remote requests

    def __post_init__(self) -> None:
        if self.d < 4:
            raise ContractError("embedder dimension must be >= 4")
        if self.max_tokens < 8:
            raise ContractError("embedder max_tokens must be >= 8")
        if self.kind not in ("deterministic", "remote"):
            raise ContractError(f"unknown embedder kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ContractError("remote embedder requires an endpoint")


@lru_cache(maxsize=262144)
def _token_vector(token: str, d: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}|{token}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "big"))
    vec = rng.standard_normal(d)
    vec /= np.linalg.norm(vec)
    vec.setflags(write=False)
    return vec


def truncate_tokens(text: str, max_tokens: int | None) -> str:
    """Cut text after its max_tokens-th token, preserving the literal prefix."""
    if max_tokens is None:
        return text
    count = 0
    for match in _TOKEN_SPAN_RE.finditer(text):
        count += 1
        if count == max_tokens:
            return text[: match.end()]
    return text


def linearize_passage(title: str, body: str) -> str:
    return f"{title}{TEXT_SEPARATOR}{body}"


def linearize_edge(edge: ScoredEdge, corpus: Corpus, max_tokens: int | None = None) -> str:
    """Flatten an edge to text: segment linearization, passage title, passage body."""
    segment = corpus.segment(edge.segment.id)
    passage = corpus.passage(edge.passage.id)
    text = TEXT_SEPARATOR.join([linearize_segment(segment), passage.title, passage.body])
    return truncate_tokens(text, max_tokens)


def node_text(node_kind: str, node_id: str, corpus: Corpus) -> str:
    """Text attribute of a node: segment linearization or passage title+body."""
    if node_kind == "segment":
        return linearize_segment(corpus.segment(node_id))
    return linearize_passage(corpus.passage(node_id).title, corpus.passage(node_id).body)


def embed(text: str, handle: EmbedderHandle) -> MultiVector:
    """Embed one text into an l x d multi-vector (l = truncated token count)."""
    if handle.kind == "remote":
        return embed_batch([text], handle)[0]
    tokens = tokenize(text)[: handle.max_tokens]
    if not tokens:
        raise EmbeddingError("text is empty after tokenization")
    rows = np.stack([_token_vector(tok, handle.d, handle.seed) for tok in tokens])
    return MultiVector(rows)


def embed_batch(texts: Sequence[str], handle: EmbedderHandle) -> list[MultiVector]:
    """Embed many texts; remote requests are chunked with bounded concurrency."""
    if handle.kind == "deterministic":
        return [embed(t, handle) for t in texts]
    chunks = [list(texts[i : i + handle.batch_size]) for i in range(0, len(texts), handle.batch_size)]
    if len(chunks) <= 1:
        return _embed_remote_chunk(list(texts), handle)
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=handle.max_inflight) as pool:
        results = list(pool.map(lambda chunk: _embed_remote_chunk(chunk, handle), chunks))
    return [mv for chunk_result in results for mv in chunk_result]


def _embed_remote_chunk(texts: list[str], handle: EmbedderHandle) -> list[MultiVector]:
    payload: dict = {"texts": texts}
    if handle.model:
        payload["model"] = handle.model
    body = _post_json(f"{handle.endpoint.rstrip('/')}/embed", payload, handle)
    try:
        vectors = body["vectors"]
        d = int(body["d"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TransportError(
            f"malformed /embed response: {exc}", endpoint=handle.endpoint, attempts=1
        ) from None
    if len(vectors) != len(texts):
        raise TransportError(
            f"/embed returned {len(vectors)} matrices for {len(texts)} texts",
            endpoint=handle.endpoint,
            attempts=1,
        )
    out = []
    for matrix in vectors:
        if not matrix:
            raise EmbeddingError("remote embedder returned an empty matrix")
        arr = np.asarray(matrix, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != d:
            raise TransportError(
                f"/embed matrix shape {arr.shape} inconsistent with d={d}",
                endpoint=handle.endpoint,
                attempts=1,
            )
        out.append(MultiVector(arr))
    return out


def maxsim(query: MultiVector, doc: MultiVector) -> float:
    """Sum over query rows of the max inner product against document rows."""
    if query.d != doc.d:
        raise ContractError(f"dimension mismatch: query d={query.d}, doc d={doc.d}")
    sims = query.rows @ doc.rows.T
    return float(sims.max(axis=1).sum())


def _post_json(url: str, payload: dict, handle: EmbedderHandle) -> dict:
    return post_json_with_retries(
        url, payload, max_retries=handle.max_retries, timeout=handle.timeout
    )


def post_json_with_retries(
    url: str, payload: dict, *, max_retries: int = 3, timeout: float = 30.0
) -> dict:
    """POST JSON with bounded idempotent retries; raises TransportError on failure."""
    import requests

    last_error: Exception | None = None
    for attempt in range(1, max_retries + 1):
        try:
            response = requests.post(url, json=payload, timeout=timeout)
            if response.status_code >= 500:
                raise requests.HTTPError(f"server returned {response.status_code}")
            response.raise_for_status()
            return response.json()
        except (requests.RequestException, json.JSONDecodeError, ValueError) as exc:
            last_error = exc
            if attempt < max_retries:
                time.sleep(min(0.2 * (2 ** (attempt - 1)), 2.0))
    raise TransportError(
        f"POST {url} failed after {max_retries} attempts: {last_error}",
        endpoint=url,
        attempts=max_retries,
    )
