"""Echo-mode protocol conformance against the shared schema fixtures."""

import numpy as np
import pytest

from gridtext_sidecar import ServiceConfig, create_app
from gridtext_sidecar.models import EchoChat, EchoEmbedder, EchoReranker
from fastapi.testclient import TestClient


class TestEmbedEndpoint:
    def test_shape_contract(self, client):
        response = client.post("/embed", json={"texts": ["a b"]})
        assert response.status_code == 200
        body = response.json()
        assert body["d"] == 16
        (matrix,) = body["vectors"]
        assert len(matrix) == 2
        rows = np.asarray(matrix)
        assert np.allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-9)

    def test_one_matrix_per_text(self, client):
        response = client.post("/embed", json={"texts": ["a", "b c", "d e f"]})
        lengths = [len(m) for m in response.json()["vectors"]]
        assert lengths == [1, 2, 3]

    def test_deterministic_across_calls(self, client):
        one = client.post("/embed", json={"texts": ["stable words"]}).json()
        two = client.post("/embed", json={"texts": ["stable words"]}).json()
        assert one == two

    def test_seed_controls_vectors(self):
        a = TestClient(create_app(ServiceConfig(echo_dim=16, echo_seed=1)))
        b = TestClient(create_app(ServiceConfig(echo_dim=16, echo_seed=2)))
        va = a.post("/embed", json={"texts": ["x"]}).json()["vectors"]
        vb = b.post("/embed", json={"texts": ["x"]}).json()["vectors"]
        assert va != vb

    def test_empty_text_rejected(self, client):
        response = client.post("/embed", json={"texts": ["!!!"]})
        assert response.status_code == 422

    def test_missing_texts_rejected(self, client):
        assert client.post("/embed", json={}).status_code == 422


class TestRerankEndpoint:
    def test_positional_alignment(self, client):
        response = client.post(
            "/rerank",
            json={"query": "alpha beta", "candidates": ["alpha beta", "alpha", "gamma"]},
        )
        scores = response.json()["scores"]
        assert len(scores) == 3
        assert scores == [2.0, 1.0, 0.0]

    def test_empty_candidates_ok(self, client):
        assert client.post("/rerank", json={"query": "q", "candidates": []}).json() == {
            "scores": []
        }


class TestChatEndpoint:
    def test_returns_last_user_lines_final_line(self, client):
        response = client.post(
            "/chat",
            json={
                "model": "echo",
                "messages": [{"role": "user", "content": "first line\nsecond line"}],
                "temperature": 0.0,
            },
        )
        assert response.json() == {"content": "second line"}

    def test_temperature_zero_is_deterministic(self, client):
        payload = {
            "model": "echo",
            "messages": [{"role": "user", "content": "alpha\nomega"}],
            "temperature": 0.0,
        }
        assert client.post("/chat", json=payload).json() == client.post("/chat", json=payload).json()


class TestHealth:
    def test_ok_in_echo_mode(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"
        assert all("echo" in v for v in body["models"].values())

    def test_degraded_when_model_load_fails(self, monkeypatch):
        monkeypatch.setattr(
            "gridtext_sidecar.models._load_real_embedder",
            lambda name: (_ for _ in ()).throw(RuntimeError("weights missing")),
        )
        config = ServiceConfig(
            echo_mode=False,
            embed_models={"edge": "some/real-model"},
            rerank_models={"edge": "echo"},
            chat_model="echo",
        )
        client = TestClient(create_app(config))
        health = client.get("/health").json()
        assert health["status"] == "degraded"
        assert "failed" in health["models"]["embed/edge"]
        response = client.post("/embed", json={"texts": ["a"], "model": "some/real-model"})
        assert response.status_code == 503


class TestSharedFixtureConformance:
    """Replay the shared request examples and validate the response contracts."""

    def test_embed_contract(self, client, protocol_fixtures):
        spec = protocol_fixtures["embed"]
        response = client.post(spec["path"], json=spec["request_example"])
        assert response.status_code == 200
        body = response.json()
        assert set(spec["response_required"]) <= set(body)
        assert len(body["vectors"]) == len(spec["request_example"]["texts"])
        for matrix in body["vectors"]:
            rows = np.asarray(matrix)
            assert rows.shape[1] == body["d"]
            assert np.allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-9)

    def test_rerank_contract(self, client, protocol_fixtures):
        spec = protocol_fixtures["rerank"]
        response = client.post(spec["path"], json=spec["request_example"])
        assert response.status_code == 200
        body = response.json()
        assert set(spec["response_required"]) <= set(body)
        assert len(body["scores"]) == len(spec["request_example"]["candidates"])
        assert all(isinstance(s, float) for s in body["scores"])

    def test_chat_contract(self, client, protocol_fixtures):
        spec = protocol_fixtures["chat"]
        response = client.post(spec["path"], json=spec["request_example"])
        assert response.status_code == 200
        body = response.json()
        assert set(spec["response_required"]) <= set(body)
        assert body["content"] == spec["response_example"]["content"]

    def test_health_contract(self, client, protocol_fixtures):
        spec = protocol_fixtures["health"]
        body = client.get(spec["path"]).json()
        assert set(spec["response_required"]) <= set(body)
        assert body["status"] in ("ok", "degraded")


class TestEchoBackendsDirect:
    def test_embedder_token_stability(self):
        embedder = EchoEmbedder(d=8, seed=3)
        (m1,), _ = embedder.encode(["planet"])
        (m2,), _ = embedder.encode(["planet orbit"])
        assert m1[0] == m2[0]

    def test_reranker_is_pure(self):
        reranker = EchoReranker()
        assert reranker.score("a b", ["a", "c"]) == reranker.score("a b", ["a", "c"])

    def test_chat_skips_non_user_messages(self):
        chat = EchoChat()
        messages = [
            {"role": "user", "content": "keep\nthis"},
            {"role": "assistant", "content": "not this"},
        ]
        assert chat.complete(messages, 0.0) == "this"


def test_echo_mode_rejects_real_model_slots():
    with pytest.raises(ValueError):
        ServiceConfig(echo_mode=True, embed_models={"edge": "some/real-model"})
