import os
from contextlib import asynccontextmanager
from typing import Any, AsyncGenerator, Dict, Optional

import numpy as np
from coreason_identity.models import UserContext
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from coreason_rlv.agent import RLVWorkbenchAsync
from coreason_rlv.errors import NumericError
from coreason_rlv.policy import PolicyParams, load_params
from coreason_rlv.schemas import CompletionRequest, CompletionResponse
from coreason_rlv.task import extract_answer, task_from_prompt
from coreason_rlv.utils.logger import logger
from coreason_rlv.utils.rng import SERVER, rng_stream
from coreason_rlv.vocab import DEFAULT_VOCAB

PARAMS_ENV = "COREASON_RLV_PARAMS"
SEED_ENV = "COREASON_RLV_SERVER_SEED"


class ScoreRequest(BaseModel):
    prompt: str
    solution: str
    modulus: int = 10


class ScoreResponse(BaseModel):
    score: float
    answer: Optional[int]


# Default context for API operations
API_USER_CONTEXT = UserContext(
    user_id="api-user",
    email="api@coreason.ai",
    groups=[],
    scopes=[],
    claims={},
)


class PolicyService:
    """A loaded policy plus the random stream its completions draw from."""

    def __init__(self, params: PolicyParams, seed: int = 0, source: str = "uniform") -> None:
        self.params = params
        self.rng: np.random.Generator = rng_stream(seed, SERVER)
        self.source = source

    @classmethod
    def from_env(cls) -> "PolicyService":
        path = os.environ.get(PARAMS_ENV)
        seed = int(os.environ.get(SEED_ENV, "0"))
        if not path:
            logger.warning(f"{PARAMS_ENV} is not set; serving the uniform policy")
            return cls(PolicyParams.zeros(), seed)
        params, _ = load_params(path)
        return cls(params, seed, source=path)


@asynccontextmanager
async def lifespan(app: FastAPI) -> AsyncGenerator[None, None]:
    app.state.service = PolicyService.from_env()
    logger.info(f"Serving policy from {app.state.service.source}")
    workbench = RLVWorkbenchAsync()
    await workbench.__aenter__()
    app.state.workbench = workbench
    yield
    await workbench.__aexit__(None, None, None)
    del app.state.workbench
    del app.state.service


app = FastAPI(lifespan=lifespan, title="Reasoner/Verifier Policy Service")


@app.post("/v1/completions", response_model=CompletionResponse)
async def completions_endpoint(request: CompletionRequest) -> CompletionResponse:
    service: PolicyService = app.state.service
    workbench: RLVWorkbenchAsync = app.state.workbench
    try:
        prompt = DEFAULT_VOCAB.parse(request.prompt)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e)) from e
    try:
        tokens = await workbench.complete(
            service.params,
            prompt,
            request.max_tokens,
            request.temperature,
            service.rng,
            context=API_USER_CONTEXT,
        )
    except NumericError as e:
        raise HTTPException(status_code=500, detail=str(e)) from e
    return CompletionResponse(text=DEFAULT_VOCAB.render(tokens))


@app.post("/score", response_model=ScoreResponse)
async def score_endpoint(request: ScoreRequest) -> ScoreResponse:
    service: PolicyService = app.state.service
    workbench: RLVWorkbenchAsync = app.state.workbench
    try:
        task = task_from_prompt(DEFAULT_VOCAB.parse(request.prompt), request.modulus)
        solution = DEFAULT_VOCAB.parse(request.solution)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e)) from e
    return ScoreResponse(
        score=await workbench.score(service.params, task, solution, context=API_USER_CONTEXT),
        answer=extract_answer(solution, request.modulus),
    )


@app.get("/health")
async def health_check() -> Dict[str, Any]:
    service: PolicyService = app.state.service
    p = service.params
    return {
        "status": "ready",
        "window": p.window,
        "heads": {"value": p.v is not None, "bce": p.u_bce is not None, "reg": p.u_reg is not None},
    }
