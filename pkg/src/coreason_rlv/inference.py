# Prosperity Public License 3.0
import itertools
import math
from collections import defaultdict
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from coreason_rlv.schemas import (
    AdaptiveResult,
    AdaptiveStatus,
    BudgetForceResult,
    BudgetSpec,
    ScoredSolution,
    SweepRow,
    TaskInstance,
    VoteOutcome,
    VoteStrategy,
)
from coreason_rlv.utils.logger import logger
from coreason_rlv.verifier import Scorer
from coreason_rlv.vocab import ANSWER, SEP, STEP

# (prompt tokens, max new tokens) -> continuation tokens
Generate = Callable[[List[int], int], List[int]]

DEFAULT_TRIALS = 2000
VOTING_STRATEGIES = (VoteStrategy.MAJORITY, VoteStrategy.WEIGHTED)


def _tally(solutions: Sequence[ScoredSolution]) -> Tuple[Dict[int, int], Dict[int, float]]:
    counts: Dict[int, int] = defaultdict(int)
    mass: Dict[int, float] = defaultdict(float)
    for s in solutions:
        if s.answer is None:
            continue
        counts[s.answer] += 1
        mass[s.answer] += s.score
    return dict(counts), dict(mass)


def majority_vote(solutions: Sequence[ScoredSolution]) -> VoteOutcome:
    """
    Most frequent extractable answer.

    Ties go to the higher cumulative verifier score, then the smaller answer. Solutions without
    an answer are ignored; if none has one the outcome is NO_ANSWER.

    Raises:
        ValueError: If `solutions` is empty.
    """
    if not solutions:
        raise ValueError("solutions must not be empty")
    counts, mass = _tally(solutions)
    if not counts:
        return VoteOutcome(chosen_answer=None, per_answer_mass={}, strategy=VoteStrategy.MAJORITY)
    chosen = max(counts, key=lambda a: (counts[a], mass[a], -a))
    return VoteOutcome(
        chosen_answer=chosen,
        per_answer_mass={a: float(c) for a, c in sorted(counts.items())},
        strategy=VoteStrategy.MAJORITY,
    )


def weighted_vote(solutions: Sequence[ScoredSolution]) -> VoteOutcome:
    """
    Answer with the largest summed verifier score.

    Ties go to the higher count, then the smaller answer, so equal scores reproduce
    majority_vote exactly.

    Raises:
        ValueError: If `solutions` is empty.
    """
    if not solutions:
        raise ValueError("solutions must not be empty")
    counts, mass = _tally(solutions)
    if not counts:
        return VoteOutcome(chosen_answer=None, per_answer_mass={}, strategy=VoteStrategy.WEIGHTED)
    chosen = max(mass, key=lambda a: (mass[a], counts[a], -a))
    return VoteOutcome(
        chosen_answer=chosen,
        per_answer_mass=dict(sorted(mass.items())),
        strategy=VoteStrategy.WEIGHTED,
    )


def best_of_n_index(solutions: Sequence[ScoredSolution]) -> int:
    if not solutions:
        raise ValueError("solutions must not be empty")
    best = 0
    for i, s in enumerate(solutions):
        if s.score > solutions[best].score:
            best = i
    return best


def best_of_n(solutions: Sequence[ScoredSolution]) -> ScoredSolution:
    """
    The highest-scored solution, the earliest one on ties.

    Raises:
        ValueError: If `solutions` is empty.
    """
    return solutions[best_of_n_index(solutions)]


def rank_by_score(scores: Sequence[float], alphas: Sequence[int]) -> List[int]:
    """Correctness flags reordered by decreasing score; equal scores keep index order."""
    if len(scores) != len(alphas):
        raise ValueError("scores and alphas must have the same length")
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    return [int(alphas[i]) for i in order]


def best_of_k_estimate(alphas: Sequence[int], k: int) -> float:
    """
    Unbiased Best-of-k accuracy from N ranked samples.

    Args:
        alphas: Correctness flags in decreasing verifier-score order.
        k: Subset size, 1 <= k <= N.

    Returns:
        Σ_i C(N−i−1, k−1)·α_i / C(N, k), with exact integer binomials.

    Raises:
        ValueError: If k is out of range.
    """
    n = len(alphas)
    if not (1 <= k <= n):
        raise ValueError(f"k must be in [1, {n}], got {k}")
    numerator = sum(math.comb(n - i - 1, k - 1) * int(alphas[i]) for i in range(n - k + 1))
    return numerator / math.comb(n, k)


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased probability that at least one of k draws (out of n with c correct) is correct."""
    if not (1 <= k <= n) or not (0 <= c <= n):
        raise ValueError(f"invalid pass@k arguments n={n} c={c} k={k}")
    if n - c < k:
        return 1.0
    return 1.0 - math.comb(n - c, k) / math.comb(n, k)


def truncate_at_terminator(tokens: Sequence[int], terminator: int = STEP) -> List[int]:
    """Keeps everything up to and including the last terminator (all tokens if there is none)."""
    for i in range(len(tokens) - 1, -1, -1):
        if tokens[i] == terminator:
            return list(tokens[: i + 1])
    return list(tokens)


def budget_force(
    generate: Generate, prompt: Sequence[int], spec: BudgetSpec, terminator: int = STEP
) -> BudgetForceResult:
    """
    Two-phase generation under a total token budget.

    G0 gets `l_budget − b_buffer` tokens and is cut after its last completed step; the
    conclusion tokens are spliced in and the continuation fills what is left of the budget.
    When the truncated draft plus the conclusion already reach the budget, that prefix is
    returned cut to the budget and flagged exhausted.
    """
    prompt = list(prompt)
    first_cap = spec.l_budget - spec.b_buffer
    g0 = list(generate(prompt, first_cap))[:first_cap]
    draft = truncate_at_terminator(g0, terminator)
    conclusion = list(spec.conclusion_tokens)
    spliced = draft + conclusion
    if len(spliced) >= spec.l_budget:
        return BudgetForceResult(tokens=spliced[: spec.l_budget], truncated_length=len(draft), exhausted=True)
    remaining = spec.l_budget - len(spliced)
    g1 = list(generate(prompt + spliced, remaining))[:remaining]
    return BudgetForceResult(tokens=spliced + g1, truncated_length=len(draft), exhausted=False)


def budget_spec_for(l_budget: int, b_buffer: Optional[int] = None) -> BudgetSpec:
    """A BudgetSpec with the default conclusion; the buffer defaults to a quarter of the budget."""
    if l_budget < 2:
        raise ValueError("a forced budget needs at least 2 tokens")
    b = b_buffer if b_buffer is not None else max(1, l_budget // 4)
    return BudgetSpec(l_budget=l_budget, b_buffer=b, conclusion_tokens=[SEP, ANSWER])


def vote_confidence(outcome: VoteOutcome) -> float:
    """Winning answer's mass over the total mass of answered solutions (0 when there is none)."""
    total = sum(outcome.per_answer_mass.values())
    if outcome.chosen_answer is None or total <= 0:
        return 0.0
    return outcome.per_answer_mass[outcome.chosen_answer] / total


def adaptive_length_select(
    scorer: Scorer,
    generator: Callable[[int], Generate],
    task: TaskInstance,
    ladder: Sequence[int],
    tau: float,
    n: int,
    b_buffer: Optional[int] = None,
) -> AdaptiveResult:
    """
    Escalates the budget along `ladder` until the weighted-vote confidence reaches `tau`.

    Args:
        scorer: Verifier used to weight the votes.
        generator: Maps a rung budget to the continuation function sampled at that rung
            (the function owns its randomness).
        task: The problem.
        ladder: Strictly increasing budgets.
        tau: Confidence threshold in [0, 1].
        n: Budget-forced samples per rung.
        b_buffer: Buffer of every rung (defaults to a quarter of the rung).

    Returns:
        The first rung meeting the threshold, or the last rung flagged THRESHOLD_UNMET.

    Raises:
        ValueError: On an empty or non-increasing ladder, n < 1 or tau outside [0, 1].
    """
    if not ladder or any(b <= a for a, b in zip(ladder, ladder[1:], strict=False)):
        raise ValueError("ladder must be non-empty and strictly increasing")
    if n < 1:
        raise ValueError("n must be at least 1")
    if not (0.0 <= tau <= 1.0):
        raise ValueError("tau must be in [0, 1]")
    outcome: Optional[VoteOutcome] = None
    confidence = 0.0
    for rung, budget in enumerate(ladder, start=1):
        spec = budget_spec_for(budget, b_buffer)
        generate = generator(budget)
        solutions = [budget_force(generate, task.prompt, spec).tokens for _ in range(n)]
        outcome = weighted_vote(scorer.score(task, solutions))
        confidence = vote_confidence(outcome)
        if confidence >= tau:
            return AdaptiveResult(
                answer=outcome.chosen_answer,
                length_used=budget,
                confidence=confidence,
                status=AdaptiveStatus.MET,
                rungs_tried=rung,
            )
    assert outcome is not None
    logger.debug(f"Adaptive selection reached the last rung ({ladder[-1]}) below tau={tau}")
    return AdaptiveResult(
        answer=outcome.chosen_answer,
        length_used=ladder[-1],
        confidence=confidence,
        status=AdaptiveStatus.THRESHOLD_UNMET,
        rungs_tried=len(ladder),
    )


def _subsets(n_max: int, n: int, trials: int, rng: np.random.Generator) -> List[Tuple[int, ...]]:
    if math.comb(n_max, n) <= trials:
        return list(itertools.combinations(range(n_max), n))
    return [tuple(sorted(int(i) for i in rng.choice(n_max, size=n, replace=False))) for _ in range(trials)]


def _vote_accuracy(
    vote: Callable[[Sequence[ScoredSolution]], VoteOutcome],
    task: TaskInstance,
    pool: Sequence[ScoredSolution],
    subsets: Sequence[Tuple[int, ...]],
) -> float:
    hits = 0
    for subset in subsets:
        outcome = vote([pool[i] for i in subset])
        hits += int(outcome.chosen_answer is not None and outcome.chosen_answer == task.ground_truth)
    return hits / len(subsets)


def task_accuracy(
    strategy: VoteStrategy,
    task: TaskInstance,
    pool: Sequence[ScoredSolution],
    n: int,
    trials: int = DEFAULT_TRIALS,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Expected accuracy of `strategy` on one task when only `n` of the pooled samples are drawn.

    Best-of-N uses the unbiased estimator, coverage uses pass@k, and the voting strategies
    enumerate every subset when there are at most `trials` of them (Monte-Carlo otherwise).
    """
    n_max = len(pool)
    if not (1 <= n <= n_max):
        raise ValueError(f"n must be in [1, {n_max}], got {n}")
    correct = [int(s.answer is not None and s.answer == task.ground_truth) for s in pool]
    if strategy == VoteStrategy.BEST_OF_N:
        return best_of_k_estimate(rank_by_score([s.score for s in pool], correct), n)
    if strategy == VoteStrategy.COVERAGE:
        return pass_at_k(n_max, sum(correct), n)
    if strategy in VOTING_STRATEGIES:
        draw = rng if rng is not None else np.random.default_rng(0)
        vote = majority_vote if strategy == VoteStrategy.MAJORITY else weighted_vote
        return _vote_accuracy(vote, task, pool, _subsets(n_max, n, trials, draw))
    raise ValueError(f"strategy {strategy.value} has no per-task accuracy")


def sweep(
    strategies: Sequence[VoteStrategy],
    n_grid: Sequence[int],
    pools: Sequence[Tuple[TaskInstance, Sequence[ScoredSolution]]],
    trials: int = DEFAULT_TRIALS,
    rng: Optional[np.random.Generator] = None,
) -> List[SweepRow]:
    """
    Accuracy table per (strategy, N) over pools of N_max scored samples per task.

    Each pool is sampled once; smaller N are evaluated on subsets of it. OPTIMAL rows (the
    best non-coverage strategy per N) are appended when requested.

    Raises:
        ValueError: If there are no pools or an N exceeds the pool size.
    """
    if not pools:
        raise ValueError("sweep needs at least one task")
    draw = rng if rng is not None else np.random.default_rng(0)
    rows: List[SweepRow] = []
    for strategy in strategies:
        if strategy == VoteStrategy.OPTIMAL:
            continue
        for n in n_grid:
            per_task = np.array([task_accuracy(strategy, t, pool, n, trials, draw) for t, pool in pools])
            stderr = float(per_task.std(ddof=1) / math.sqrt(len(per_task))) if len(per_task) > 1 else 0.0
            rows.append(SweepRow(strategy=strategy, n=n, accuracy=float(per_task.mean()), stderr=stderr))
    if VoteStrategy.OPTIMAL in strategies:
        rows.extend(compute_optimal(rows))
    return rows


def compute_optimal(rows: Sequence[SweepRow]) -> List[SweepRow]:
    """Per N, the most accurate selection strategy (coverage excluded; ties keep the first row)."""
    best: Dict[int, SweepRow] = {}
    for row in rows:
        if row.strategy in (VoteStrategy.COVERAGE, VoteStrategy.OPTIMAL):
            continue
        if row.n not in best or row.accuracy > best[row.n].accuracy:
            best[row.n] = row
    return [
        SweepRow(strategy=VoteStrategy.OPTIMAL, n=n, accuracy=r.accuracy, stderr=r.stderr)
        for n, r in sorted(best.items())
    ]
