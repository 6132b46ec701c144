# Prosperity Public License 3.0
from functools import partial
from typing import List, Optional

import anyio
import httpx
import numpy as np
from pydantic import ValidationError

from coreason_rlv.errors import BackendUnavailableError, ProtocolError
from coreason_rlv.policy import PolicyParams, generate_tokens
from coreason_rlv.schemas import BackendKind, BackendSpec, CompletionRequest, CompletionResponse, CompletionResult
from coreason_rlv.utils.logger import logger
from coreason_rlv.vocab import DEFAULT_VOCAB, Vocab


class BuiltinBackend:
    """
    Generation through the local policy.

    Calling the backend with (prompt tokens, max_new) returns the sampled continuation, which
    is the continuation interface every inference routine consumes.
    """

    def __init__(
        self,
        params: PolicyParams,
        rng: Optional[np.random.Generator] = None,
        temperature: float = 1.0,
        greedy: bool = False,
    ) -> None:
        self.params = params
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.temperature = temperature
        self.greedy = greedy

    def __call__(self, prompt: List[int], max_new: int) -> List[int]:
        tokens, _ = generate_tokens(self.params, prompt, max_new, self.temperature, self.rng, self.greedy)
        return tokens


def _is_transient(status_code: int) -> bool:
    return status_code == 429 or 500 <= status_code < 600


async def remote_complete(
    spec: BackendSpec,
    prompt: str,
    max_tokens: int,
    temperature: float,
    client: Optional[httpx.AsyncClient] = None,
) -> CompletionResult:
    """
    Sends one completion request, retrying transient failures with exponential backoff.

    Timeouts, connection errors, HTTP 429 and 5xx are retried up to `spec.max_retries` times
    with delays of `backoff_seconds · 2^attempt`.

    Raises:
        ValueError: If `spec` is not a REMOTE backend.
        BackendUnavailableError: If every attempt failed transiently.
        ProtocolError: On any other non-2xx status or a malformed response body.
    """
    if spec.kind != BackendKind.REMOTE or spec.endpoint is None:
        raise ValueError("remote generation requires a REMOTE backend spec with an endpoint")
    body = CompletionRequest(model=spec.model, prompt=prompt, max_tokens=max_tokens, temperature=temperature)
    owns_client = client is None
    http = client or httpx.AsyncClient()
    last_error = "no attempt made"
    try:
        for attempt in range(spec.max_retries + 1):
            try:
                response = await http.post(spec.endpoint, json=body.model_dump(), timeout=spec.timeout)
            except httpx.TransportError as e:
                last_error = f"{type(e).__name__}: {e}"
            else:
                if response.is_success:
                    try:
                        parsed = CompletionResponse.model_validate_json(response.content)
                    except ValidationError as e:
                        raise ProtocolError(f"malformed completion response: {e}") from e
                    return CompletionResult(text=parsed.text, retries=attempt)
                if not _is_transient(response.status_code):
                    raise ProtocolError(f"endpoint rejected the request with HTTP {response.status_code}")
                last_error = f"HTTP {response.status_code}"

            if attempt < spec.max_retries:
                delay = spec.backoff_seconds * (2**attempt)
                logger.warning(f"Completion attempt {attempt + 1} failed ({last_error}); retrying in {delay:.2f}s")
                await anyio.sleep(delay)
    finally:
        if owns_client:
            await http.aclose()

    logger.error(f"Completion endpoint unavailable after {spec.max_retries + 1} attempts: {last_error}")
    raise BackendUnavailableError(f"{spec.endpoint} unavailable after {spec.max_retries + 1} attempts: {last_error}")


def remote_generate(
    spec: BackendSpec,
    prompt: str,
    max_tokens: int,
    temperature: float = 1.0,
    client: Optional[httpx.AsyncClient] = None,
) -> str:
    """Synchronous single completion; returns the completion text."""
    result = anyio.run(partial(remote_complete, spec, prompt, max_tokens, temperature, client=client))
    return result.text


class RemoteBackend:
    """
    Synchronous remote backend usable wherever the built-in one is.

    Each call runs on its own event loop; without an injected client a fresh one is opened
    and closed per request.
    """

    def __init__(
        self,
        spec: BackendSpec,
        temperature: float = 1.0,
        vocab: Vocab = DEFAULT_VOCAB,
        client: Optional[httpx.AsyncClient] = None,
    ) -> None:
        if spec.kind != BackendKind.REMOTE:
            raise ValueError("RemoteBackend requires a REMOTE backend spec")
        self.spec = spec
        self.temperature = temperature
        self.vocab = vocab
        self._client = client

    def __call__(self, prompt: List[int], max_new: int) -> List[int]:
        text = remote_generate(self.spec, self.vocab.render(prompt), max_new, self.temperature, client=self._client)
        try:
            tokens = self.vocab.parse(text)
        except ValueError as e:
            raise ProtocolError(f"completion is not a token sequence: {e}") from e
        return tokens[:max_new]
