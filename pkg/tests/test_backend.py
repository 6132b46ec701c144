import json
from typing import Callable, Iterator, List
from unittest.mock import AsyncMock, patch

import httpx
import numpy as np
import pytest

from coreason_rlv.backend import BuiltinBackend, RemoteBackend, remote_complete, remote_generate
from coreason_rlv.errors import BackendUnavailableError, ProtocolError
from coreason_rlv.policy import PolicyParams, generate_tokens
from coreason_rlv.schemas import BackendKind, BackendSpec
from coreason_rlv.vocab import ANSWER, DEFAULT_VOCAB, EOS, VOCAB_SIZE

ENDPOINT = "http://backend.test/v1/completions"
SPEC = BackendSpec(kind=BackendKind.REMOTE, endpoint=ENDPOINT, max_retries=2, backoff_seconds=0.5)

Handler = Callable[[httpx.Request], httpx.Response]


def scripted(responses: List[httpx.Response]) -> tuple[Handler, List[httpx.Request]]:
    seen: List[httpx.Request] = []
    queue: Iterator[httpx.Response] = iter(responses)

    def handler(request: httpx.Request) -> httpx.Response:
        seen.append(request)
        return next(queue)

    return handler, seen


def client_for(handler: Handler) -> httpx.AsyncClient:
    return httpx.AsyncClient(transport=httpx.MockTransport(handler))


@pytest.fixture
def no_sleep() -> Iterator[AsyncMock]:
    with patch("coreason_rlv.backend.anyio.sleep", new_callable=AsyncMock) as sleep:
        yield sleep


class TestRemoteComplete:
    async def test_returns_completion_verbatim(self, no_sleep: AsyncMock) -> None:
        handler, seen = scripted([httpx.Response(200, json={"text": "ANSWER 7 EOS"})])
        async with client_for(handler) as client:
            result = await remote_complete(SPEC, "3 + 4 SEP", 4, 0.5, client=client)
        assert result.text == "ANSWER 7 EOS"
        assert result.retries == 0
        assert json.loads(seen[0].content) == {
            "model": "coreason-rlv",
            "prompt": "3 + 4 SEP",
            "max_tokens": 4,
            "temperature": 0.5,
        }
        no_sleep.assert_not_awaited()

    async def test_retries_server_errors(self, no_sleep: AsyncMock) -> None:
        handler, seen = scripted(
            [httpx.Response(500), httpx.Response(503), httpx.Response(200, json={"text": "EOS"})]
        )
        async with client_for(handler) as client:
            result = await remote_complete(SPEC, "1 SEP", 2, 1.0, client=client)
        assert result.retries == 2
        assert len(seen) == 3
        assert [c.args[0] for c in no_sleep.await_args_list] == [0.5, 1.0]

    async def test_rate_limit_is_transient(self, no_sleep: AsyncMock) -> None:
        handler, _ = scripted([httpx.Response(429), httpx.Response(200, json={"text": "EOS"})])
        async with client_for(handler) as client:
            result = await remote_complete(SPEC, "1 SEP", 2, 1.0, client=client)
        assert result.retries == 1

    async def test_timeouts_exhaust_retries(self, no_sleep: AsyncMock) -> None:
        attempts: List[httpx.Request] = []

        def handler(request: httpx.Request) -> httpx.Response:
            attempts.append(request)
            raise httpx.ReadTimeout("too slow", request=request)

        async with client_for(handler) as client:
            with pytest.raises(BackendUnavailableError, match="3 attempts"):
                await remote_complete(SPEC, "1 SEP", 2, 1.0, client=client)
        assert len(attempts) == 3
        assert no_sleep.await_count == 2

    async def test_client_error_is_not_retried(self, no_sleep: AsyncMock) -> None:
        handler, seen = scripted([httpx.Response(400), httpx.Response(200, json={"text": "EOS"})])
        async with client_for(handler) as client:
            with pytest.raises(ProtocolError, match="HTTP 400"):
                await remote_complete(SPEC, "1 SEP", 2, 1.0, client=client)
        assert len(seen) == 1

    @pytest.mark.parametrize("body", [b"not json", b'{"completion": "EOS"}', b'{"text": 3}'])
    async def test_malformed_body(self, no_sleep: AsyncMock, body: bytes) -> None:
        handler, _ = scripted([httpx.Response(200, content=body)])
        async with client_for(handler) as client:
            with pytest.raises(ProtocolError, match="malformed"):
                await remote_complete(SPEC, "1 SEP", 2, 1.0, client=client)

    async def test_builtin_spec_is_rejected(self) -> None:
        with pytest.raises(ValueError, match="REMOTE"):
            await remote_complete(BackendSpec(), "1 SEP", 2, 1.0)


class TestRemoteBackend:
    def test_sync_generation(self) -> None:
        handler, _ = scripted([httpx.Response(200, json={"text": "hello"})])
        assert remote_generate(SPEC, "1 SEP", 3, client=client_for(handler)) == "hello"

    def test_parses_and_caps_tokens(self) -> None:
        handler, seen = scripted([httpx.Response(200, json={"text": "ANSWER 7 EOS 3 3"})])
        backend = RemoteBackend(SPEC, client=client_for(handler))
        assert backend(DEFAULT_VOCAB.parse("3 + 4 SEP"), 3) == [ANSWER, 7, EOS]
        assert json.loads(seen[0].content)["prompt"] == "3 + 4 SEP"

    def test_unknown_token(self) -> None:
        handler, _ = scripted([httpx.Response(200, json={"text": "ANSWER seven"})])
        backend = RemoteBackend(SPEC, client=client_for(handler))
        with pytest.raises(ProtocolError, match="token sequence"):
            backend([1], 3)

    def test_requires_remote_spec(self) -> None:
        with pytest.raises(ValueError):
            RemoteBackend(BackendSpec())


class TestBuiltinBackend:
    def test_matches_policy_sampling(self) -> None:
        params = PolicyParams(W=np.random.default_rng(0).normal(0, 0.5, size=(3 * VOCAB_SIZE, VOCAB_SIZE)))
        prompt = DEFAULT_VOCAB.parse("3 + 4 SEP")
        backend = BuiltinBackend(params, np.random.default_rng(5), temperature=0.8)
        expected, _ = generate_tokens(params, prompt, 6, 0.8, np.random.default_rng(5))
        assert backend(prompt, 6) == expected

    def test_greedy(self) -> None:
        params = PolicyParams.zeros()
        params.W[2 * VOCAB_SIZE + DEFAULT_VOCAB.token("SEP"), ANSWER] = 5.0
        backend = BuiltinBackend(params, greedy=True)
        out = backend(DEFAULT_VOCAB.parse("3 + 4 SEP"), 1)
        assert out == [ANSWER]
