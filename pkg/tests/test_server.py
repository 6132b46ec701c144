from pathlib import Path
from typing import AsyncGenerator
from unittest.mock import AsyncMock, patch

import numpy as np
import pytest
from httpx import ASGITransport, AsyncClient

from coreason_rlv.agent import RLVWorkbenchAsync
from coreason_rlv.errors import NumericError
from coreason_rlv.policy import PolicyParams, save_params
from coreason_rlv.server import API_USER_CONTEXT, PARAMS_ENV, SEED_ENV, PolicyService, app, lifespan
from coreason_rlv.vocab import ANSWER, DEFAULT_VOCAB, EOS, NO, VERIFY, VOCAB_SIZE, YES


def answering_params() -> PolicyParams:
    """Always answers 7 after SEP and says YES with probability 0.8 after VERIFY."""
    params = PolicyParams.zeros(bce_head=True)
    last = 2 * VOCAB_SIZE
    sep = DEFAULT_VOCAB.token("SEP")
    for after, target in ((sep, ANSWER), (ANSWER, 7), (7, EOS)):
        params.W[last + after, :] = -1000.0
        params.W[last + after, target] = 0.0
    params.W[last + VERIFY, :] = -1000.0
    params.W[last + VERIFY, YES] = np.log(0.8)
    params.W[last + VERIFY, NO] = np.log(0.2)
    return params


@pytest.fixture
async def client() -> AsyncGenerator[AsyncClient, None]:
    # Manually set state to bypass lifespan execution during test
    app.state.service = PolicyService(answering_params(), seed=1, source="test")
    app.state.workbench = RLVWorkbenchAsync()
    transport = ASGITransport(app=app)
    async with AsyncClient(transport=transport, base_url="http://test") as ac:
        yield ac
    await app.state.workbench.__aexit__(None, None, None)
    del app.state.workbench
    del app.state.service


@pytest.mark.asyncio
async def test_health_check(client: AsyncClient) -> None:
    response = await client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ready", "window": 3, "heads": {"value": False, "bce": True, "reg": False}}


@pytest.mark.asyncio
async def test_completion(client: AsyncClient) -> None:
    response = await client.post(
        "/v1/completions", json={"model": "m", "prompt": "3 + 4 SEP", "max_tokens": 6, "temperature": 1.0}
    )
    assert response.status_code == 200
    assert response.json() == {"text": "ANSWER 7 EOS"}


@pytest.mark.asyncio
async def test_completion_respects_max_tokens(client: AsyncClient) -> None:
    response = await client.post(
        "/v1/completions", json={"model": "m", "prompt": "3 + 4 SEP", "max_tokens": 2, "temperature": 1.0}
    )
    assert response.json() == {"text": "ANSWER 7"}


@pytest.mark.asyncio
async def test_completion_unknown_token(client: AsyncClient) -> None:
    response = await client.post(
        "/v1/completions", json={"model": "m", "prompt": "three + 4 SEP", "max_tokens": 2, "temperature": 1.0}
    )
    assert response.status_code == 422
    assert "three" in response.json()["detail"]


@pytest.mark.asyncio
async def test_completion_invalid_body(client: AsyncClient) -> None:
    response = await client.post("/v1/completions", json={"model": "m", "prompt": "1 SEP", "max_tokens": -1})
    assert response.status_code == 422


@pytest.mark.asyncio
async def test_completion_numeric_error(client: AsyncClient) -> None:
    with patch("coreason_rlv.agent.generate_tokens", side_effect=NumericError("non-finite logits")):
        response = await client.post(
            "/v1/completions", json={"model": "m", "prompt": "1 SEP", "max_tokens": 2, "temperature": 1.0}
        )
    assert response.status_code == 500
    assert response.json()["detail"] == "non-finite logits"


@pytest.mark.asyncio
async def test_score(client: AsyncClient) -> None:
    response = await client.post("/score", json={"prompt": "3 + 4 SEP", "solution": "ANSWER 7 EOS"})
    assert response.status_code == 200
    body = response.json()
    assert body["score"] == pytest.approx(0.8)
    assert body["answer"] == 7


@pytest.mark.asyncio
async def test_score_without_answer(client: AsyncClient) -> None:
    response = await client.post("/score", json={"prompt": "3 + 4 SEP", "solution": "EOS"})
    assert response.json()["answer"] is None


@pytest.mark.asyncio
async def test_score_unknown_token(client: AsyncClient) -> None:
    response = await client.post("/score", json={"prompt": "3 + 4 SEP", "solution": "ANSWER seven"})
    assert response.status_code == 422


@pytest.mark.asyncio
async def test_routes_go_through_the_workbench_with_api_context(client: AsyncClient) -> None:
    workbench: RLVWorkbenchAsync = app.state.workbench
    with (
        patch.object(workbench, "complete", AsyncMock(return_value=[ANSWER, 7, EOS])) as complete,
        patch.object(workbench, "score", AsyncMock(return_value=0.25)) as score,
    ):
        completion = await client.post(
            "/v1/completions", json={"model": "m", "prompt": "3 + 4 SEP", "max_tokens": 3, "temperature": 0.5}
        )
        scored = await client.post("/score", json={"prompt": "3 + 4 SEP", "solution": "ANSWER 7 EOS"})
    assert completion.json() == {"text": "ANSWER 7 EOS"}
    assert scored.json() == {"score": 0.25, "answer": 7}
    assert complete.await_args.kwargs["context"] is API_USER_CONTEXT
    assert complete.await_args.args[1:4] == ([3, DEFAULT_VOCAB.token("+"), 4, DEFAULT_VOCAB.token("SEP")], 3, 0.5)
    assert score.await_args.kwargs["context"] is API_USER_CONTEXT
    assert score.await_args.args[2] == [ANSWER, 7, EOS]


@pytest.mark.asyncio
async def test_lifespan_loads_params(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    path = tmp_path / "params.json"
    save_params(path, answering_params())
    monkeypatch.setenv(PARAMS_ENV, str(path))
    monkeypatch.setenv(SEED_ENV, "5")
    async with lifespan(app):
        service = app.state.service
        assert service.source == str(path)
        assert service.params.u_bce is not None
        assert isinstance(app.state.workbench, RLVWorkbenchAsync)
    assert not hasattr(app.state, "service")
    assert not hasattr(app.state, "workbench")


@pytest.mark.asyncio
async def test_lifespan_defaults_to_uniform(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(PARAMS_ENV, raising=False)
    monkeypatch.delenv(SEED_ENV, raising=False)
    async with lifespan(app):
        assert app.state.service.source == "uniform"
        assert not np.any(app.state.service.params.W)


def test_service_stream_is_seeded() -> None:
    a = PolicyService(PolicyParams.zeros(), seed=3)
    b = PolicyService(PolicyParams.zeros(), seed=3)
    assert a.rng.random() == b.rng.random()
