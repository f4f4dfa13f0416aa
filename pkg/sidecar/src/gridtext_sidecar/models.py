"""Model backends: deterministic echo stand-ins plus optional real loaders.

Every backend satisfies a tiny duck-typed contract:

* embedders:  ``encode(texts) -> (list of row-matrices, d)`` with unit rows
* rerankers:  ``score(query, candidates) -> list[float]`` positionally aligned
* chat:       ``complete(messages, temperature) -> str``
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .config import ECHO, ServiceConfig

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class EchoEmbedder:
    """Seeded hash embedder: one unit vector per token, stable across calls."""

    def __init__(self, d: int, seed: int):
        self.d = d
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def _vector(self, token: str) -> np.ndarray:
        hit = self._cache.get(token)
        if hit is not None:
            return hit
        digest = hashlib.blake2b(f"{self.seed}|{token}".encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        vec = rng.standard_normal(self.d)
        vec /= np.linalg.norm(vec)
        self._cache[token] = vec
        return vec

    def encode(self, texts: list[str]) -> tuple[list[list[list[float]]], int]:
        matrices = []
        for text in texts:
            tokens = _tokenize(text)
            if not tokens:
                raise ValueError("text is empty after tokenization")
            matrices.append([self._vector(t).tolist() for t in tokens])
        return matrices, self.d


class EchoReranker:
    """Lexical-overlap scorer: deterministic, order-preserving on candidates."""

    def score(self, query: str, candidates: list[str]) -> list[float]:
        query_tokens = set(_tokenize(query))
        return [float(len(query_tokens & set(_tokenize(c)))) for c in candidates]


class EchoChat:
    """Returns the last user message's final line; temperature is ignored
    (echo responses are deterministic by construction)."""

    def complete(self, messages: list[dict], temperature: float) -> str:
        for message in reversed(messages):
            if message.get("role") == "user":
                lines = str(message.get("content", "")).splitlines()
                return lines[-1] if lines else ""
        return ""


def _load_real_embedder(model_name: str):
    from sentence_transformers import SentenceTransformer  # optional dependency

    model = SentenceTransformer(model_name)

    class RealEmbedder:
        def encode(self, texts: list[str]):
            matrices = []
            d = None
            for text in texts:
                rows = model.encode(text, output_value="token_embeddings", convert_to_numpy=True)
                rows = np.asarray(rows, dtype=np.float64)
                norms = np.linalg.norm(rows, axis=1, keepdims=True)
                norms[norms == 0] = 1.0
                rows = rows / norms
                d = rows.shape[1]
                matrices.append(rows.tolist())
            return matrices, int(d)

    return RealEmbedder()


def _load_real_reranker(model_name: str):
    from sentence_transformers import CrossEncoder  # optional dependency

    model = CrossEncoder(model_name)

    class RealReranker:
        def score(self, query: str, candidates: list[str]) -> list[float]:
            return [float(s) for s in model.predict([(query, c) for c in candidates])]

    return RealReranker()


@dataclass
class RoleStatus:
    model: str
    state: str  # "ready" | "failed"
    detail: str = ""


class ModelHub:
    """Loads and routes per-role backends; failures degrade, never crash."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self._echo_embedder = EchoEmbedder(config.echo_dim, config.echo_seed)
        self._echo_reranker = EchoReranker()
        self._echo_chat = EchoChat()
        self._embedders: dict[str, object] = {ECHO: self._echo_embedder}
        self._rerankers: dict[str, object] = {ECHO: self._echo_reranker}
        self._chat: dict[str, object] = {ECHO: self._echo_chat}
        self.status: dict[str, RoleStatus] = {}
        self._load_all()

    def _load_all(self) -> None:
        for role, name in sorted(self.config.embed_models.items()):
            self._load(f"embed/{role}", name, self._embedders, _load_real_embedder)
        for role, name in sorted(self.config.rerank_models.items()):
            self._load(f"rerank/{role}", name, self._rerankers, _load_real_reranker)
        self._load("chat", self.config.chat_model, self._chat, None)

    def _load(self, slot: str, name: str, registry: dict, loader) -> None:
        if name == ECHO:
            self.status[slot] = RoleStatus(model=name, state="ready")
            return
        if loader is None:
            self.status[slot] = RoleStatus(
                model=name, state="failed", detail="no real backend for this role"
            )
            return
        try:
            registry[name] = loader(name)
            self.status[slot] = RoleStatus(model=name, state="ready")
        except Exception as exc:  # degrade, report via /health
            self.status[slot] = RoleStatus(model=name, state="failed", detail=str(exc))

    @property
    def degraded(self) -> bool:
        return any(s.state == "failed" for s in self.status.values())

    def _resolve(self, registry: dict, requested: str | None, default: str):
        name = requested or default
        backend = registry.get(name)
        if backend is None and requested:
            # Unknown model names fall back to the echo backend in echo mode.
            backend = registry.get(ECHO) if self.config.echo_mode else None
        return name, backend

    def embedder(self, requested: str | None):
        default = self.config.embed_models.get("edge", ECHO)
        return self._resolve(self._embedders, requested, default)

    def reranker(self, requested: str | None):
        default = self.config.rerank_models.get("edge", ECHO)
        return self._resolve(self._rerankers, requested, default)

    def chat(self, requested: str | None):
        return self._resolve(self._chat, requested, self.config.chat_model)
