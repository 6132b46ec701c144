# Prosperity Public License 3.0
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from coreason_rlv.backend import BuiltinBackend, RemoteBackend
from coreason_rlv.inference import (
    Generate,
    adaptive_length_select,
    best_of_n,
    budget_force,
    budget_spec_for,
    majority_vote,
    sweep,
    weighted_vote,
)
from coreason_rlv.policy import PolicyParams
from coreason_rlv.schemas import (
    BackendKind,
    BackendSpec,
    BudgetRow,
    DomainTag,
    EvalReport,
    ProbeRow,
    ScoredSolution,
    ScorerVariant,
    SweepRow,
    TaskInstance,
    VoteStrategy,
)
from coreason_rlv.task import generate_task
from coreason_rlv.utils.logger import logger
from coreason_rlv.utils.rng import EVAL_ROLLOUT, EVAL_TASKS, SUBSAMPLE, rng_stream
from coreason_rlv.verifier import ProbeItem, balance_probe, make_scorer, verifier_accuracy

SEED_SPACE = 2**63

Pool = Tuple[TaskInstance, List[ScoredSolution]]


class EvalSpec(BaseModel):
    """
    The generated evaluation set and sampling settings shared by every evaluation command.

    Attributes:
        difficulty: Chain length of the evaluation tasks (raise it for easy-to-hard rows).
        domain: Operation set (switch it for out-of-domain rows).
        modulus: Modulus of the arithmetic.
        tasks: Number of evaluation tasks.
        samples: Solutions sampled per task.
        seed: Root seed of the evaluation streams.
        max_len: Maximum solution length.
        temperature: Sampling temperature.
        variant: Scoring pathway used as the verifier.
        backend: Generation backend; a REMOTE backend samples every solution from its endpoint.
    """

    model_config = ConfigDict(frozen=True)

    difficulty: int = Field(default=2, ge=1)
    domain: DomainTag = DomainTag.ADD_ONLY
    modulus: int = Field(default=10, ge=2, le=10)
    tasks: int = Field(default=64, ge=1)
    samples: int = Field(default=16, ge=1)
    seed: int = 0
    max_len: int = Field(default=6, ge=1)
    temperature: float = Field(default=1.0, gt=0.0)
    variant: ScorerVariant = ScorerVariant.GENERATIVE
    backend: BackendSpec = Field(default_factory=BackendSpec)


def _backend(params: PolicyParams, spec: EvalSpec, *indices: int) -> Generate:
    if spec.backend.kind == BackendKind.REMOTE:
        return RemoteBackend(spec.backend, spec.temperature)
    return BuiltinBackend(params, rng_stream(spec.seed, EVAL_ROLLOUT, *indices), spec.temperature)


def eval_tasks(spec: EvalSpec) -> List[TaskInstance]:
    seeds = rng_stream(spec.seed, EVAL_TASKS).integers(0, SEED_SPACE, size=spec.tasks)
    return [generate_task(spec.difficulty, spec.domain, int(s), spec.modulus) for s in seeds]


def sample_pools(
    scoring_params: PolicyParams,
    spec: EvalSpec,
    generating_params: Optional[PolicyParams] = None,
    samples: Optional[int] = None,
) -> List[Pool]:
    """
    Samples `samples` solutions per evaluation task and scores them.

    The generator defaults to the scoring parameters; passing other parameters scores a
    different policy's samples with this verifier. A REMOTE backend in `spec` replaces both.
    """
    generator = generating_params if generating_params is not None else scoring_params
    scorer = make_scorer(scoring_params, spec.variant)
    n = spec.samples if samples is None else samples
    pools: List[Pool] = []
    for i, task in enumerate(eval_tasks(spec)):
        solutions = [_backend(generator, spec, i, j)(task.prompt, spec.max_len) for j in range(n)]
        pools.append((task, scorer.score(task, solutions)))
    return pools


def _hit(answer: Optional[int], task: TaskInstance) -> int:
    return int(answer is not None and answer == task.ground_truth)


def _pool_probe(pools: Sequence[Pool]) -> List[ProbeItem]:
    return [(task, s.solution, int(s.reward or 0)) for task, pool in pools for s in pool]


def probe_accuracy(params: PolicyParams, variant: ScorerVariant, items: Sequence[ProbeItem]) -> float:
    """Verifier accuracy on the balanced subset of `items` (NaN when a class is missing)."""
    balanced = balance_probe(items)
    if not balanced:
        return math.nan
    return verifier_accuracy(make_scorer(params, variant), balanced)


def evaluate(
    params: PolicyParams,
    spec: EvalSpec,
    label: str = "eval",
    generating_params: Optional[PolicyParams] = None,
) -> EvalReport:
    """pass@1, verifier accuracy and the strategy accuracies at N = `spec.samples`."""
    pools = sample_pools(params, spec, generating_params)
    rewards = [int(s.reward or 0) for _, pool in pools for s in pool]
    report = EvalReport(
        label=label,
        difficulty=spec.difficulty,
        domain=spec.domain,
        tasks=spec.tasks,
        samples=spec.samples,
        pass_at_1=float(np.mean(rewards)),
        verifier_accuracy=probe_accuracy(params, spec.variant, _pool_probe(pools)),
        majority=float(np.mean([_hit(majority_vote(pool).chosen_answer, t) for t, pool in pools])),
        weighted=float(np.mean([_hit(weighted_vote(pool).chosen_answer, t) for t, pool in pools])),
        best_of_n=float(np.mean([int(best_of_n(pool).reward or 0) for _, pool in pools])),
        coverage=float(np.mean([int(any(s.reward for s in pool)) for _, pool in pools])),
    )
    logger.info(f"Evaluated '{label}': pass@1={report.pass_at_1:.3f} weighted={report.weighted:.3f}")
    return report


def sweep_n(
    params: PolicyParams,
    spec: EvalSpec,
    n_grid: Sequence[int],
    strategies: Sequence[VoteStrategy],
    trials: int = 2000,
    generating_params: Optional[PolicyParams] = None,
) -> List[SweepRow]:
    """
    Samples max(n_grid) solutions per task once, then evaluates every (strategy, N).

    Raises:
        ValueError: If the grid is empty or holds a non-positive N.
    """
    if not n_grid or min(n_grid) < 1:
        raise ValueError("n_grid must hold positive sample counts")
    pools = sample_pools(params, spec, generating_params, samples=max(n_grid))
    return sweep(strategies, sorted(set(n_grid)), pools, trials, rng_stream(spec.seed, SUBSAMPLE))


def _rung_generator(params: PolicyParams, spec: EvalSpec, task_index: int) -> Callable[[int], Generate]:
    def at_budget(budget: int) -> Generate:
        return _backend(params, spec, task_index, budget)

    return at_budget


def budget_demo(
    params: PolicyParams,
    spec: EvalSpec,
    budgets: Sequence[int],
    tau: float,
    b_buffer: Optional[int] = None,
) -> List[BudgetRow]:
    """
    Budget-forced accuracy per budget plus one adaptive-length row at threshold `tau`.

    Fixed rows and the adaptive ladder draw from the same stream per (task, budget), so the
    adaptive row at tau = 0 reproduces the first fixed row.

    Raises:
        ValueError: If `budgets` is empty or not strictly increasing.
    """
    if not budgets or any(b <= a for a, b in zip(budgets, budgets[1:], strict=False)):
        raise ValueError("budgets must be non-empty and strictly increasing")
    tasks = eval_tasks(spec)
    scorer = make_scorer(params, spec.variant)
    rows: List[BudgetRow] = []
    for budget in budgets:
        forced = budget_spec_for(budget, b_buffer)
        correct, hits, lengths = [], [], []
        for i, task in enumerate(tasks):
            generate = _rung_generator(params, spec, i)(budget)
            solutions = [budget_force(generate, task.prompt, forced).tokens for _ in range(spec.samples)]
            scored = scorer.score(task, solutions)
            correct.extend(int(s.reward or 0) for s in scored)
            lengths.extend(len(y) for y in solutions)
            hits.append(_hit(weighted_vote(scored).chosen_answer, task))
        rows.append(
            BudgetRow(
                mode="forced",
                budget=budget,
                pass_at_1=float(np.mean(correct)),
                accuracy=float(np.mean(hits)),
                mean_length=float(np.mean(lengths)),
            )
        )

    results = [
        adaptive_length_select(scorer, _rung_generator(params, spec, i), task, budgets, tau, spec.samples, b_buffer)
        for i, task in enumerate(tasks)
    ]
    rows.append(
        BudgetRow(
            mode="adaptive",
            budget=budgets[-1],
            pass_at_1=math.nan,
            accuracy=float(np.mean([_hit(r.answer, t) for r, t in zip(results, tasks, strict=True)])),
            mean_length=float(np.mean([r.length_used for r in results])),
        )
    )
    return rows


def available_variants(params: PolicyParams) -> List[ScorerVariant]:
    """Scorer variants the parameter set can serve, in reporting order."""
    variants = [ScorerVariant.GENERATIVE]
    if params.u_bce is not None:
        variants.append(ScorerVariant.BCE_HEAD)
    if params.u_reg is not None:
        variants.append(ScorerVariant.REG_HEAD)
    if params.v is not None:
        variants.extend([ScorerVariant.PPO_VALUE_MEAN, ScorerVariant.PPO_VALUE_LAST])
    return variants


def verify_probe(
    params: PolicyParams,
    spec: EvalSpec,
    source: str,
    probe: Optional[Sequence[ProbeItem]] = None,
    variants: Optional[Sequence[ScorerVariant]] = None,
    generating_params: Optional[PolicyParams] = None,
) -> List[ProbeRow]:
    """
    One (reasoner accuracy, verifier accuracy) row per scoring variant.

    Reasoner accuracy is the pass@1 of `params` on the evaluation set. The verifier is probed
    on `probe` (e.g. a logged episode set) or, when absent, on the evaluation samples of the
    generator; only the balanced subset is scored.

    Raises:
        ValueError: If a requested variant needs a head `params` does not carry.
    """
    generative = spec.model_copy(update={"variant": ScorerVariant.GENERATIVE})
    own = sample_pools(params, generative)
    reasoner = float(np.mean([int(s.reward or 0) for _, pool in own for s in pool]))
    if probe is None:
        if generating_params is None:
            probe = _pool_probe(own)
        else:
            probe = _pool_probe(sample_pools(generating_params, generative))
    chosen = list(variants) if variants is not None else available_variants(params)
    rows = [
        ProbeRow(
            source=source,
            variant=variant,
            reasoner_accuracy=reasoner,
            verifier_accuracy=probe_accuracy(params, variant, probe),
        )
        for variant in chosen
    ]
    for row in rows:
        logger.info(
            f"Probe {source} {row.variant.value}: reasoner={row.reasoner_accuracy:.3f} "
            f"verifier={row.verifier_accuracy:.3f}"
        )
    return rows
