# Prosperity Public License 3.0
from functools import partial
from typing import Any, List, Optional, Sequence

import anyio
import httpx
import numpy as np
from coreason_identity.models import UserContext

from coreason_rlv.backend import remote_complete
from coreason_rlv.evaluation import EvalSpec, budget_demo, evaluate, sweep_n, verify_probe
from coreason_rlv.policy import PolicyParams, generate_tokens
from coreason_rlv.schemas import (
    BackendSpec,
    BudgetRow,
    CompletionResult,
    EvalReport,
    ProbeRow,
    RunConfig,
    ScorerVariant,
    SweepRow,
    TaskInstance,
    VoteStrategy,
)
from coreason_rlv.trainer import RunArtifacts, train
from coreason_rlv.utils.logger import logger
from coreason_rlv.verifier import ProbeItem, score_generative


class RLVWorkbenchAsync:
    """
    The Workbench (Async): orchestrates joint reasoner/verifier training and test-time scaling.

    This agent is the central facade of the library, integrating:
    - Unified RL + verification training
    - Evaluation of pass@1, verifier accuracy and the selection strategies
    - Sample-count sweeps and budget-forcing demos
    - Remote generation through a completion endpoint
    - Local completion and scoring for the policy service
    """

    def __init__(self, client: Optional[httpx.AsyncClient] = None) -> None:
        """
        Initialize the Workbench.

        Args:
            client: Optional injected httpx.AsyncClient for remote generation.
        """
        logger.info("Initializing RLVWorkbenchAsync")
        self._internal_client = client is None
        self._client = client or httpx.AsyncClient()

    async def __aenter__(self) -> "RLVWorkbenchAsync":
        return self

    async def __aexit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        if self._internal_client:
            await self._client.aclose()

    async def train(self, config: RunConfig, *, context: UserContext) -> RunArtifacts:
        """
        Runs a full training run.

        Args:
            config: The resolved run configuration.
            context: The user context for identity verification.

        Returns:
            The run artifacts (final parameters, metrics and episode log).
        """
        logger.info(
            f"Agent: Training {config.method.value} for {config.total_iterations} iterations",
            user_id=context.user_id,
        )
        return await anyio.to_thread.run_sync(train, config)

    async def evaluate(
        self,
        params: PolicyParams,
        spec: EvalSpec,
        label: str = "eval",
        generating_params: Optional[PolicyParams] = None,
        *,
        context: UserContext,
    ) -> EvalReport:
        """Evaluates pass@1, verifier accuracy and the strategy accuracies on a generated set."""
        logger.info(f"Agent: Evaluating '{label}' on {spec.tasks} tasks", user_id=context.user_id)
        return await anyio.to_thread.run_sync(partial(evaluate, params, spec, label, generating_params))

    async def sweep(
        self,
        params: PolicyParams,
        spec: EvalSpec,
        n_grid: Sequence[int],
        strategies: Sequence[VoteStrategy],
        trials: int = 2000,
        *,
        context: UserContext,
    ) -> List[SweepRow]:
        """Accuracy per (strategy, N) from one pool of max(n_grid) samples per task."""
        logger.info(f"Agent: Sweeping N over {list(n_grid)}", user_id=context.user_id)
        return await anyio.to_thread.run_sync(partial(sweep_n, params, spec, n_grid, strategies, trials))

    async def budget_demo(
        self,
        params: PolicyParams,
        spec: EvalSpec,
        budgets: Sequence[int],
        tau: float,
        b_buffer: Optional[int] = None,
        *,
        context: UserContext,
    ) -> List[BudgetRow]:
        """Budget-forced accuracy per budget plus the adaptive-length row."""
        logger.info(f"Agent: Budget demo over {list(budgets)} (tau={tau})", user_id=context.user_id)
        return await anyio.to_thread.run_sync(partial(budget_demo, params, spec, budgets, tau, b_buffer))

    async def verify_probe(
        self,
        params: PolicyParams,
        spec: EvalSpec,
        source: str,
        probe: Optional[Sequence[ProbeItem]] = None,
        variants: Optional[Sequence[ScorerVariant]] = None,
        generating_params: Optional[PolicyParams] = None,
        *,
        context: UserContext,
    ) -> List[ProbeRow]:
        """(reasoner accuracy, verifier accuracy) per scoring variant."""
        logger.info(f"Agent: Probing verifier variants of '{source}'", user_id=context.user_id)
        return await anyio.to_thread.run_sync(
            partial(verify_probe, params, spec, source, probe, variants, generating_params)
        )

    async def complete(
        self,
        params: PolicyParams,
        prompt: Sequence[int],
        max_tokens: int,
        temperature: float,
        rng: np.random.Generator,
        *,
        context: UserContext,
    ) -> List[int]:
        """
        Samples a continuation of `prompt` from the local policy.

        Raises:
            NumericError: If the policy produces non-finite logits.
        """
        logger.debug(f"Agent: Completion of {len(prompt)} prompt tokens", user_id=context.user_id)
        tokens, _ = generate_tokens(params, list(prompt), max_tokens, temperature, rng)
        return tokens

    async def score(
        self, params: PolicyParams, task: TaskInstance, solution: Sequence[int], *, context: UserContext
    ) -> float:
        """Generative verifier score, P(YES) after VERIFY."""
        logger.debug(f"Agent: Scoring a {len(solution)}-token solution", user_id=context.user_id)
        return score_generative(params, task, list(solution))

    async def remote_complete(
        self, spec: BackendSpec, prompt: str, max_tokens: int, temperature: float = 1.0, *, context: UserContext
    ) -> CompletionResult:
        """Single completion through a remote endpoint, with retries."""
        logger.info(f"Agent: Remote completion via {spec.endpoint}", user_id=context.user_id)
        return await remote_complete(spec, prompt, max_tokens, temperature, client=self._client)


class RLVWorkbench:
    """
    The Workbench (Sync Facade): wraps RLVWorkbenchAsync for synchronous usage.
    """

    def __init__(self, client: Optional[httpx.AsyncClient] = None) -> None:
        self._async = RLVWorkbenchAsync(client=client)

    def __enter__(self) -> "RLVWorkbench":
        return self

    def __exit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        anyio.run(self._async.__aexit__, exc_type, exc_val, exc_tb)

    def train(self, config: RunConfig, *, context: UserContext) -> RunArtifacts:
        """Synchronous wrapper for train."""
        return anyio.run(partial(self._async.train, config, context=context))

    def evaluate(
        self,
        params: PolicyParams,
        spec: EvalSpec,
        label: str = "eval",
        generating_params: Optional[PolicyParams] = None,
        *,
        context: UserContext,
    ) -> EvalReport:
        """Synchronous wrapper for evaluate."""
        return anyio.run(partial(self._async.evaluate, params, spec, label, generating_params, context=context))

    def sweep(
        self,
        params: PolicyParams,
        spec: EvalSpec,
        n_grid: Sequence[int],
        strategies: Sequence[VoteStrategy],
        trials: int = 2000,
        *,
        context: UserContext,
    ) -> List[SweepRow]:
        """Synchronous wrapper for sweep."""
        return anyio.run(partial(self._async.sweep, params, spec, n_grid, strategies, trials, context=context))

    def budget_demo(
        self,
        params: PolicyParams,
        spec: EvalSpec,
        budgets: Sequence[int],
        tau: float,
        b_buffer: Optional[int] = None,
        *,
        context: UserContext,
    ) -> List[BudgetRow]:
        """Synchronous wrapper for budget_demo."""
        return anyio.run(partial(self._async.budget_demo, params, spec, budgets, tau, b_buffer, context=context))

    def verify_probe(
        self,
        params: PolicyParams,
        spec: EvalSpec,
        source: str,
        probe: Optional[Sequence[ProbeItem]] = None,
        variants: Optional[Sequence[ScorerVariant]] = None,
        generating_params: Optional[PolicyParams] = None,
        *,
        context: UserContext,
    ) -> List[ProbeRow]:
        """Synchronous wrapper for verify_probe."""
        return anyio.run(
            partial(self._async.verify_probe, params, spec, source, probe, variants, generating_params, context=context)
        )

    def remote_complete(
        self, spec: BackendSpec, prompt: str, max_tokens: int, temperature: float = 1.0, *, context: UserContext
    ) -> CompletionResult:
        """Synchronous wrapper for remote_complete."""
        return anyio.run(
            partial(self._async.remote_complete, spec, prompt, max_tokens, temperature, context=context)
        )

    def complete(
        self,
        params: PolicyParams,
        prompt: Sequence[int],
        max_tokens: int,
        temperature: float,
        rng: np.random.Generator,
        *,
        context: UserContext,
    ) -> List[int]:
        """Synchronous wrapper for complete."""
        return anyio.run(
            partial(self._async.complete, params, prompt, max_tokens, temperature, rng, context=context)
        )

    def score(
        self, params: PolicyParams, task: TaskInstance, solution: Sequence[int], *, context: UserContext
    ) -> float:
        """Synchronous wrapper for score."""
        return anyio.run(partial(self._async.score, params, task, solution, context=context))
