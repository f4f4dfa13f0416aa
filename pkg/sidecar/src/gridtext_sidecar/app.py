"""FastAPI service exposing /embed, /rerank, /chat, and /health."""

from __future__ import annotations

import argparse
import asyncio
import logging

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .config import ServiceConfig
from .models import ModelHub

logger = logging.getLogger(__name__)


class EmbedRequest(BaseModel):
    texts: list[str] = Field(min_length=1)
    model: str | None = None


class EmbedResponse(BaseModel):
    vectors: list[list[list[float]]]
    d: int


class RerankRequest(BaseModel):
    query: str
    candidates: list[str]
    model: str | None = None


class RerankResponse(BaseModel):
    scores: list[float]


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatRequest(BaseModel):
    model: str
    messages: list[ChatMessage] = Field(min_length=1)
    temperature: float = 0.0


class ChatResponse(BaseModel):
    content: str


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    hub = ModelHub(config)
    app = FastAPI(title="gridtext-sidecar", version="0.1.0")
    app.state.config = config
    app.state.hub = hub
    gate = asyncio.Semaphore(config.max_concurrency)

    def _backend_or_503(name: str, backend):
        if backend is None:
            raise HTTPException(status_code=503, detail=f"model {name!r} unavailable")
        return backend

    @app.post("/embed", response_model=EmbedResponse)
    async def embed(request: EmbedRequest) -> EmbedResponse:
        name, backend = hub.embedder(request.model)
        backend = _backend_or_503(name, backend)
        async with gate:
            try:
                vectors, d = backend.encode(request.texts)
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc))
        return EmbedResponse(vectors=vectors, d=d)

    @app.post("/rerank", response_model=RerankResponse)
    async def rerank(request: RerankRequest) -> RerankResponse:
        name, backend = hub.reranker(request.model)
        backend = _backend_or_503(name, backend)
        async with gate:
            scores = backend.score(request.query, request.candidates)
        return RerankResponse(scores=scores)

    @app.post("/chat", response_model=ChatResponse)
    async def chat(request: ChatRequest) -> ChatResponse:
        name, backend = hub.chat(request.model)
        backend = _backend_or_503(name, backend)
        async with gate:
            content = backend.complete(
                [m.model_dump() for m in request.messages], request.temperature
            )
        return ChatResponse(content=content)

    @app.get("/health")
    async def health() -> dict:
        return {
            "status": "degraded" if hub.degraded else "ok",
            "models": {slot: f"{s.model} ({s.state})" for slot, s in sorted(hub.status.items())},
        }

    return app


def serve(config: ServiceConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="warning")


def main() -> None:
    parser = argparse.ArgumentParser(description="Serve /embed, /rerank, /chat for gridtext.")
    parser.add_argument("--port", type=int, default=8793)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--dim", type=int, default=64, help="echo embedding dimension")
    parser.add_argument("--seed", type=int, default=13, help="echo determinism seed")
    args = parser.parse_args()
    serve(ServiceConfig(port=args.port, host=args.host, echo_dim=args.dim, echo_seed=args.seed))


if __name__ == "__main__":
    main()
