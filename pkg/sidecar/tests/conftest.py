import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from gridtext_sidecar import ServiceConfig, create_app

# Wire-schema fixtures shared with the primary engine's client tests.
SHARED_FIXTURES = Path(__file__).resolve().parents[2] / "tests" / "fixtures" / "protocol"


@pytest.fixture(scope="session")
def protocol_fixtures() -> dict:
    return json.loads((SHARED_FIXTURES / "protocol_fixtures.json").read_text())


@pytest.fixture()
def client() -> TestClient:
    return TestClient(create_app(ServiceConfig(echo_dim=16)))
