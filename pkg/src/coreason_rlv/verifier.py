# Prosperity Public License 3.0
from typing import Callable, List, Sequence, Tuple

import numpy as np

from coreason_rlv.policy import PolicyParams, features, next_token_dist, sample_solution, value
from coreason_rlv.schemas import ScoredSolution, ScorerVariant, TaskInstance
from coreason_rlv.task import extract_answer, make_verification_input, reward
from coreason_rlv.vocab import YES

# (task, solution tokens, binary correctness)
ProbeItem = Tuple[TaskInstance, Sequence[int], int]


def score_generative(params: PolicyParams, task: TaskInstance, solution: Sequence[int]) -> float:
    """Raw full-vocabulary probability of YES at the position after VERIFY."""
    return float(next_token_dist(params, make_verification_input(task, solution))[YES])


def _head_logit(head: np.ndarray, params: PolicyParams, task: TaskInstance, solution: Sequence[int]) -> float:
    return float(head[features(make_verification_input(task, solution), params.window)].sum())


def _sigmoid(z: float) -> float:
    if z >= 0:
        return float(1.0 / (1.0 + np.exp(-z)))
    ez = float(np.exp(z))
    return ez / (1.0 + ez)


def score_bce_head(params: PolicyParams, task: TaskInstance, solution: Sequence[int]) -> float:
    """sigmoid(u_bce · features(x ⊕ y ⊕ VERIFY))."""
    if params.u_bce is None:
        raise ValueError("policy has no BCE head")
    return _sigmoid(_head_logit(params.u_bce, params, task, solution))


def score_reg_head(params: PolicyParams, task: TaskInstance, solution: Sequence[int]) -> float:
    """clip(u_reg · features(x ⊕ y ⊕ VERIFY), 0, 1)."""
    if params.u_reg is None:
        raise ValueError("policy has no REG head")
    return float(np.clip(_head_logit(params.u_reg, params, task, solution), 0.0, 1.0))


def score_ppo_value(params: PolicyParams, task: TaskInstance, solution: Sequence[int], mode: str = "MEAN") -> float:
    """
    Aggregates the value head over the states the solution tokens were emitted from.

    Args:
        params: Parameters with a value head.
        task: The problem.
        solution: Non-empty solution tokens.
        mode: "MEAN" averages the values, "LAST" returns the value of the final state.

    Returns:
        An unbounded ranking score.

    Raises:
        ValueError: On an empty solution or an unknown mode.
    """
    if len(solution) == 0:
        raise ValueError("solution must not be empty")
    if mode not in ("MEAN", "LAST"):
        raise ValueError(f"unknown aggregation mode '{mode}'")
    prompt = list(task.prompt)
    values = [value(params, prompt + list(solution[:t])) for t in range(len(solution))]
    return values[-1] if mode == "LAST" else float(np.mean(values))


class Scorer:
    """
    A verifier score s(x, y) bound to one parameter set.

    Attributes:
        variant: Which scoring pathway produced the score.
        bounded: True when scores lie in [0, 1] (accuracy then thresholds at 0.5).
    """

    def __init__(
        self, fn: Callable[[TaskInstance, Sequence[int]], float], variant: ScorerVariant, bounded: bool
    ) -> None:
        self._fn = fn
        self.variant = variant
        self.bounded = bounded

    def __call__(self, task: TaskInstance, solution: Sequence[int]) -> float:
        return self._fn(task, solution)

    def score(self, task: TaskInstance, solutions: Sequence[Sequence[int]]) -> List[ScoredSolution]:
        """Scores solutions of one task, attaching the extracted answer and the reward."""
        return [
            ScoredSolution(
                solution=list(y),
                answer=extract_answer(y, task.modulus),
                score=self(task, y),
                reward=reward(task, y),
            )
            for y in solutions
        ]


def make_scorer(params: PolicyParams, variant: ScorerVariant) -> Scorer:
    """
    Builds the scorer of `variant` over `params`.

    Raises:
        ValueError: If the variant needs a head the parameters do not carry.
    """
    if variant in (ScorerVariant.GENERATIVE, ScorerVariant.JUDGE):
        return Scorer(lambda t, y: score_generative(params, t, y), variant, bounded=True)
    if variant == ScorerVariant.BCE_HEAD:
        if params.u_bce is None:
            raise ValueError("parameters carry no BCE head")
        return Scorer(lambda t, y: score_bce_head(params, t, y), variant, bounded=True)
    if variant == ScorerVariant.REG_HEAD:
        if params.u_reg is None:
            raise ValueError("parameters carry no REG head")
        return Scorer(lambda t, y: score_reg_head(params, t, y), variant, bounded=True)
    if params.v is None:
        raise ValueError("parameters carry no value head")
    mode = "MEAN" if variant == ScorerVariant.PPO_VALUE_MEAN else "LAST"
    return Scorer(lambda t, y: score_ppo_value(params, t, y, mode), variant, bounded=False)


def verifier_accuracy(scorer: Scorer, probe: Sequence[ProbeItem]) -> float:
    """
    Fraction of probe items where (score above threshold) agrees with correctness.

    The threshold is 0.5 for bounded scorers and the probe's median score otherwise.

    Raises:
        ValueError: If the probe is empty or not balanced between correct and incorrect.
    """
    n_correct = sum(1 for _, _, label in probe if label == 1)
    if not probe or 2 * n_correct != len(probe):
        raise ValueError(
            f"probe must be balanced: {n_correct} correct vs {len(probe) - n_correct} incorrect"
        )
    scores = np.array([scorer(task, y) for task, y, _ in probe])
    threshold = 0.5 if scorer.bounded else float(np.median(scores))
    hits = sum(1 for s, (_, _, label) in zip(scores, probe, strict=True) if (s > threshold) == (label == 1))
    return hits / len(probe)


def balance_probe(items: Sequence[ProbeItem]) -> List[ProbeItem]:
    """
    Keeps the first min(#correct, #incorrect) items of each class (order preserved).

    Returns an empty list when a class is missing.
    """
    n_correct = sum(1 for it in items if it[2] == 1)
    quota = min(n_correct, len(items) - n_correct)
    taken = {0: 0, 1: 0}
    out: List[ProbeItem] = []
    for it in items:
        label = 1 if it[2] == 1 else 0
        if taken[label] < quota:
            taken[label] += 1
            out.append(it)
    return out


def cross_score(
    scoring_params: PolicyParams,
    generating_params: PolicyParams,
    task: TaskInstance,
    n: int,
    rng: np.random.Generator,
    max_len: int = 6,
    temperature: float = 1.0,
    variant: ScorerVariant = ScorerVariant.GENERATIVE,
) -> List[ScoredSolution]:
    """
    Samples N solutions from `generating_params` and scores them with `scoring_params`.

    Raises:
        ValueError: If n < 1.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    solutions = [sample_solution(generating_params, task, max_len, temperature, rng).solution for _ in range(n)]
    return make_scorer(scoring_params, variant).score(task, solutions)
