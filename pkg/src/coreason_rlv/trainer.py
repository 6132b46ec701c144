# Prosperity Public License 3.0
import math
from collections import OrderedDict
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import anyio
import anyio.to_thread
import numpy as np
from pydantic import BaseModel, ConfigDict

from coreason_rlv.advantage import (
    discounted_returns,
    gae_advantages,
    grpo_advantages,
    outcome_token_rewards,
    rloo_advantages,
    vineppo_advantages,
)
from coreason_rlv.config import run_id as compute_run_id
from coreason_rlv.policy import (
    PolicyParams,
    ReferenceParams,
    features,
    kl_terms,
    log_dist,
    sample_solution,
    token_logprob_grad,
    value,
)
from coreason_rlv.schemas import (
    Episode,
    EpisodeRecord,
    Method,
    RunConfig,
    ScorerVariant,
    StepMetrics,
    TaskInstance,
    VerificationExample,
    VerifierMode,
)
from coreason_rlv.task import generate_task, make_verification_input, reward
from coreason_rlv.utils.logger import logger
from coreason_rlv.utils.rng import (
    ADVANTAGE,
    BALANCE,
    PROBE_ROLLOUT,
    PROBE_TASKS,
    ROLLOUT,
    TASKS,
    rng_stream,
)
from coreason_rlv.verifier import ProbeItem, Scorer, balance_probe, make_scorer, verifier_accuracy
from coreason_rlv.vocab import DEFAULT_VOCAB, NO, YES

SEED_SPACE = 2**63


class VerificationBatch(BaseModel):
    """Class-balanced verification examples; `skipped` marks a batch missing a class."""

    model_config = ConfigDict(frozen=True)

    examples: List[VerificationExample]
    skipped: bool = False


class RunArtifacts(BaseModel):
    """
    Everything a training run produces.

    Attributes:
        run_id: Hash of the resolved config.
        config: The resolved config.
        params: Final parameters.
        reference: Reference snapshot the KL term anchored to.
        metrics: One StepMetrics per iteration.
        episodes: Every sampled episode, in sampling order.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    run_id: str
    config: RunConfig
    params: PolicyParams
    reference: ReferenceParams
    metrics: List[StepMetrics]
    episodes: List[EpisodeRecord]


def ramp(step: int, total_steps: int, max_value: float, ramp_fraction: float) -> float:
    """
    Linear warm-up: min(1, step / (ramp_fraction · total_steps)) · max_value.

    Raises:
        ValueError: If step is outside [0, total_steps] or ramp_fraction is outside (0, 1].
    """
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} is outside [0, {total_steps}]")
    if not (0.0 < ramp_fraction <= 1.0):
        raise ValueError("ramp_fraction must be in (0, 1]")
    if step == 0:
        return 0.0
    return min(1.0, step / (ramp_fraction * total_steps)) * max_value


def ppo_clip_objective(
    new_logprobs: Sequence[Sequence[float]],
    old_logprobs: Sequence[Sequence[float]],
    advantages: Sequence[Sequence[float]],
    eps_clip: float = 0.2,
) -> Tuple[float, List[np.ndarray]]:
    """
    Clipped surrogate objective, token-averaged per solution then averaged over solutions.

    Args:
        new_logprobs: Per-solution log-probabilities under the current parameters.
        old_logprobs: Per-solution log-probabilities under the behaviour policy.
        advantages: Per-solution token advantages.
        eps_clip: Clip width ε.

    Returns:
        (objective, gradient) where gradient[i][t] is ∂objective/∂new_logprobs[i][t]; tokens
        whose clipped branch is the active minimum contribute zero.

    Raises:
        ValueError: On mismatched lengths or an empty batch or solution.
    """
    if not (len(new_logprobs) == len(old_logprobs) == len(advantages)):
        raise ValueError("new_logprobs, old_logprobs and advantages must have the same number of solutions")
    if not new_logprobs:
        raise ValueError("batch must not be empty")
    n = len(new_logprobs)
    objective = 0.0
    grads: List[np.ndarray] = []
    for new, old, adv in zip(new_logprobs, old_logprobs, advantages, strict=True):
        if not (len(new) == len(old) == len(adv)):
            raise ValueError("per-token sequences must be aligned")
        if len(new) == 0:
            raise ValueError("solutions must not be empty")
        ratio = np.exp(np.asarray(new, dtype=float) - np.asarray(old, dtype=float))
        a = np.asarray(adv, dtype=float)
        unclipped = ratio * a
        clipped = np.clip(ratio, 1.0 - eps_clip, 1.0 + eps_clip) * a
        weight = 1.0 / (len(new) * n)
        objective += float(np.minimum(unclipped, clipped).sum()) * weight
        clip_active = clipped < unclipped
        grads.append(np.where(clip_active, 0.0, unclipped) * weight)
    return objective, grads


def verification_loss(params: PolicyParams, batch: Sequence[VerificationExample]) -> Tuple[float, np.ndarray]:
    """
    Mean negative log-likelihood of the labelled YES/NO token after VERIFY.

    Returns:
        (loss, ∂loss/∂W).

    Raises:
        ValueError: If the batch is empty.
    """
    if not batch:
        raise ValueError("verification batch must not be empty")
    n = len(batch)
    loss = 0.0
    grad = np.zeros_like(params.W)
    for example in batch:
        lp, active, row = token_logprob_grad(params, example.input, example.label)
        loss -= lp / n
        grad[active] -= row / n
    return loss, grad


def build_verification_batch(
    episodes: Sequence[Episode], rng: Optional[np.random.Generator] = None
) -> VerificationBatch:
    """
    Converts episodes to YES/NO examples and oversamples the minority class to parity.

    Examples come in episode order followed by the minority duplicates, drawn uniformly with
    replacement. A batch missing either class is returned empty and flagged skipped.
    """
    examples = [
        VerificationExample(
            input=make_verification_input(ep.task, ep.solution),
            label=YES if _reward_of(ep) == 1 else NO,
        )
        for ep in episodes
    ]
    yes = [ex for ex in examples if ex.label == YES]
    no = [ex for ex in examples if ex.label == NO]
    if not yes or not no:
        return VerificationBatch(examples=[], skipped=True)
    minority = yes if len(yes) < len(no) else no
    deficit = abs(len(yes) - len(no))
    if deficit:
        draw = rng if rng is not None else rng_stream(0, BALANCE)
        picks = draw.integers(0, len(minority), size=deficit)
        examples.extend(minority[int(i)] for i in picks)
    return VerificationBatch(examples=examples, skipped=False)


def _reward_of(episode: Episode) -> int:
    if episode.reward is None:
        return reward(episode.task, episode.solution)
    return episode.reward


def group_episodes(episodes: Sequence[Episode], group_size: int) -> "OrderedDict[int, List[int]]":
    """
    Groups episode indices by group_id (first-seen order).

    Raises:
        ValueError: If a group has the wrong size, mixes prompts, or holds an unscored episode.
    """
    groups: "OrderedDict[int, List[int]]" = OrderedDict()
    for i, ep in enumerate(episodes):
        if ep.reward is None:
            raise ValueError("every episode must carry a reward before the update")
        groups.setdefault(ep.group_id, []).append(i)
    for gid, members in groups.items():
        if len(members) != group_size:
            raise ValueError(f"group {gid} has {len(members)} episodes, expected {group_size}")
        if any(episodes[i].task.prompt != episodes[members[0]].task.prompt for i in members):
            raise ValueError(f"group {gid} mixes different prompts")
    return groups


def compute_advantages(
    params: PolicyParams,
    episodes: Sequence[Episode],
    config: RunConfig,
    iteration: int = 0,
) -> Tuple[List[List[float]], int]:
    """
    Per-token advantages for every episode under `config.method`.

    Returns:
        (advantages aligned to `episodes`, number of zero-variance reward groups).
    """
    groups = group_episodes(episodes, config.group_size)
    out: List[List[float]] = [[] for _ in episodes]
    zero_variance = 0
    for gid, members in groups.items():
        rewards = [float(episodes[i].reward or 0) for i in members]
        if len(set(rewards)) == 1:
            zero_variance += 1
        if config.method in (Method.GRPO, Method.RLOO):
            scalar = grpo_advantages(rewards) if config.method == Method.GRPO else rloo_advantages(rewards)
            for i, a in zip(members, scalar, strict=True):
                out[i] = [a] * len(episodes[i].solution)
        elif config.method == Method.VINEPPO:
            for j, i in enumerate(members):
                ep = episodes[i]
                rng = rng_stream(config.seed, ADVANTAGE, iteration, gid, j)
                out[i] = vineppo_advantages(
                    params, ep.task, ep.solution, config.mc_samples, config.max_len, rng, config.temperature
                )
        else:
            for i in members:
                ep = episodes[i]
                prompt = list(ep.task.prompt)
                values = [value(params, prompt + ep.solution[:t]) for t in range(len(ep.solution))] + [0.0]
                rewards_t = outcome_token_rewards(len(ep.solution), float(ep.reward or 0))
                out[i] = gae_advantages(rewards_t, values, config.gamma, config.lambda_gae)
    return out, zero_variance


def _contexts(ep: Episode) -> List[List[int]]:
    prompt = list(ep.task.prompt)
    return [prompt + ep.solution[:t] for t in range(len(ep.solution))]


def rl_objective_and_grad(
    params: PolicyParams,
    episodes: Sequence[Episode],
    advantages: Sequence[Sequence[float]],
    eps_clip: float,
) -> Tuple[float, np.ndarray]:
    """Clipped objective over episodes and its gradient with respect to W."""
    new_lps: List[List[float]] = []
    rows: List[List[Tuple[np.ndarray, np.ndarray]]] = []
    for ep in episodes:
        lps, ep_rows = [], []
        for ctx, token in zip(_contexts(ep), ep.solution, strict=True):
            lp, active, row = token_logprob_grad(params, ctx, token)
            lps.append(lp)
            ep_rows.append((active, row))
        new_lps.append(lps)
        rows.append(ep_rows)
    objective, dlogp = ppo_clip_objective(new_lps, [ep.old_logprobs for ep in episodes], advantages, eps_clip)
    grad = np.zeros_like(params.W)
    for ep_rows, g in zip(rows, dlogp, strict=True):
        for (active, row), coeff in zip(ep_rows, g, strict=True):
            if coeff != 0.0:
                grad[active] += coeff * row
    return objective, grad


def mean_kl_and_grad(
    params: PolicyParams, ref: ReferenceParams, episodes: Sequence[Episode]
) -> Tuple[float, np.ndarray]:
    """Exact KL to the reference, token-averaged per solution then averaged over solutions."""
    grad = np.zeros_like(params.W)
    total = 0.0
    n = len(episodes)
    for ep in episodes:
        contexts = _contexts(ep)
        if not contexts:
            continue
        weight = 1.0 / (len(contexts) * n)
        for ctx in contexts:
            kl, active, row = kl_terms(params, ref, ctx)
            total += kl * weight
            grad[active] += row * weight
    return total, grad


def _head_step(
    head: np.ndarray, params: PolicyParams, batch: Sequence[VerificationExample], mode: VerifierMode
) -> Tuple[float, np.ndarray]:
    """Loss and gradient of a separate verification head (log-loss or squared error)."""
    grad = np.zeros_like(head)
    loss = 0.0
    n = len(batch)
    for example in batch:
        active = features(example.input, params.window)
        z = float(head[active].sum())
        y = 1.0 if example.label == YES else 0.0
        if mode == VerifierMode.BCE_HEAD:
            sig = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
            loss += (np.logaddexp(0.0, -z) if y == 1.0 else np.logaddexp(0.0, z)) / n
            grad[active] += (sig - y) / n
        else:
            loss += (z - y) ** 2 / n
            grad[active] += 2.0 * (z - y) / n
    return float(loss), grad


def _value_step(params: PolicyParams, episodes: Sequence[Episode], gamma: float) -> Tuple[float, np.ndarray]:
    """0.5 · mean squared error of the value head against Monte-Carlo returns."""
    assert params.v is not None
    grad = np.zeros_like(params.v)
    loss = 0.0
    count = sum(len(ep.solution) for ep in episodes)
    if count == 0:
        return 0.0, grad
    for ep in episodes:
        returns = discounted_returns(outcome_token_rewards(len(ep.solution), float(ep.reward or 0)), gamma)
        for ctx, g in zip(_contexts(ep), returns, strict=True):
            active = features(ctx, params.window)
            err = float(params.v[active].sum()) - g
            loss += 0.5 * err * err / count
            grad[active] += err / count
    return loss, grad


def unified_step(
    params: PolicyParams,
    ref: ReferenceParams,
    episodes: Sequence[Episode],
    config: RunConfig,
    step_index: int,
) -> Tuple[PolicyParams, StepMetrics]:
    """
    One update of the unified objective J_RL − β·KL − λ·L_verify.

    Advantages come from `config.method` and are computed once from the behaviour
    parameters; `config.ppo_epochs` SGD ascent passes follow. λ and the learning rate are
    ramped at step `step_index + 1`. Separate heads (BCE/REG) replace the generative loss in
    their modes and PPO additionally regresses its value head on the returns; the heads step
    with their own ramped rate `config.head_lr`.

    Args:
        params: Parameters that sampled `episodes`.
        ref: Frozen reference snapshot.
        episodes: Scored episodes, `config.group_size` per group_id.
        config: Run configuration.
        step_index: 0-based iteration number.

    Returns:
        New parameters (the input is left untouched) and the iteration metrics. Held-out
        pass@1 and verifier accuracy are left NaN for the caller to fill in.

    Raises:
        ValueError: On malformed grouping.
    """
    total = max(config.total_iterations, step_index + 1)
    lr = ramp(step_index + 1, total, config.lr_max, config.ramp_fraction)
    lam = ramp(step_index + 1, total, config.lambda_max, config.ramp_fraction)
    head_lr = ramp(step_index + 1, total, config.head_lr, config.ramp_fraction)

    advantages, zero_variance = compute_advantages(params, episodes, config, step_index)

    mode = config.verifier_mode
    batch = VerificationBatch(examples=[], skipped=True)
    if mode != VerifierMode.NONE:
        batch = build_verification_batch(episodes, rng_stream(config.seed, BALANCE, step_index))
        if batch.skipped:
            logger.debug(f"Iteration {step_index}: verification batch skipped (single-class rewards)")

    current = params
    first: Dict[str, float] = {}
    for epoch in range(config.ppo_epochs):
        objective, g_rl = rl_objective_and_grad(current, episodes, advantages, config.eps_clip)
        kl, g_kl = mean_kl_and_grad(current, ref, episodes)
        ascent = g_rl - config.beta * g_kl

        verify_loss = math.nan
        if mode == VerifierMode.GENERATIVE and not batch.skipped:
            verify_loss, g_ver = verification_loss(current, batch.examples)
            ascent = ascent - lam * g_ver

        nxt = current.copy()
        nxt.W = current.W + lr * ascent

        head_loss = math.nan
        if mode in (VerifierMode.BCE_HEAD, VerifierMode.REG_HEAD) and not batch.skipped:
            head = current.u_bce if mode == VerifierMode.BCE_HEAD else current.u_reg
            if head is None:
                raise ValueError(f"verifier mode {mode.value} requires its head")
            head_loss, g_head = _head_step(head, current, batch.examples, mode)
            if mode == VerifierMode.BCE_HEAD:
                nxt.u_bce = head - head_lr * lam * g_head
            else:
                nxt.u_reg = head - head_lr * lam * g_head

        value_loss = math.nan
        if config.method == Method.PPO:
            if current.v is None:
                raise ValueError("PPO requires a value head")
            value_loss, g_v = _value_step(current, episodes, config.gamma)
            nxt.v = current.v - head_lr * g_v

        if epoch == 0:
            first = {
                "rl_objective": objective,
                "mean_kl": kl,
                "verify_loss": verify_loss,
                "head_loss": head_loss,
                "value_loss": value_loss,
            }
        current = nxt

    rewards = [ep.reward or 0 for ep in episodes]
    metrics = StepMetrics(
        iteration=step_index,
        lr=lr,
        lam=lam,
        train_pass_at_1=float(np.mean(rewards)) if rewards else math.nan,
        heldout_pass_at_1=math.nan,
        verifier_accuracy=math.nan,
        mean_kl=first.get("mean_kl", 0.0),
        rl_objective=first.get("rl_objective", 0.0),
        verify_loss=first.get("verify_loss", math.nan),
        head_loss=first.get("head_loss", math.nan),
        value_loss=first.get("value_loss", math.nan),
        verify_skipped=mode != VerifierMode.NONE and batch.skipped,
        skip_count=int(mode != VerifierMode.NONE and batch.skipped),
        zero_variance_groups=zero_variance,
    )
    return current, metrics


def scorer_variant_for(config: RunConfig) -> ScorerVariant:
    """The scoring pathway that matches how a run trains its verifier."""
    if config.verifier_mode == VerifierMode.BCE_HEAD:
        return ScorerVariant.BCE_HEAD
    if config.verifier_mode == VerifierMode.REG_HEAD:
        return ScorerVariant.REG_HEAD
    if config.verifier_mode == VerifierMode.NONE or config.lambda_max == 0:
        return ScorerVariant.JUDGE
    return ScorerVariant.GENERATIVE


def initial_params(config: RunConfig) -> PolicyParams:
    """The uniform starting policy with the heads the configuration trains."""
    return PolicyParams.zeros(
        window=config.window,
        value_head=config.method == Method.PPO,
        bce_head=config.verifier_mode == VerifierMode.BCE_HEAD,
        reg_head=config.verifier_mode == VerifierMode.REG_HEAD,
    )


def task_batch(config: RunConfig, stream: int, *keys: int, count: Optional[int] = None) -> List[TaskInstance]:
    """Deterministic task set drawn from the stream (seed, stream, *keys)."""
    n = config.batch if count is None else count
    seeds = rng_stream(config.seed, stream, *keys).integers(0, SEED_SPACE, size=n)
    return [generate_task(config.difficulty, config.domain, int(s), config.modulus) for s in seeds]


def run_parallel(jobs: Sequence[Callable[[], Episode]], workers: int) -> List[Episode]:
    """
    Runs independent rollout jobs, serially or on `workers` threads.

    Results keep job order, so the output does not depend on the worker count.
    """
    if workers <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    results: List[Optional[Episode]] = [None] * len(jobs)

    async def _main() -> None:
        limiter = anyio.CapacityLimiter(workers)

        async def _one(i: int) -> None:
            results[i] = await anyio.to_thread.run_sync(jobs[i], limiter=limiter)

        async with anyio.create_task_group() as tg:
            for i in range(len(jobs)):
                tg.start_soon(_one, i)

    anyio.run(_main)
    return [r for r in results if r is not None]


def sample_groups(
    params: PolicyParams,
    tasks: Sequence[TaskInstance],
    config: RunConfig,
    stream: int,
    iteration: int,
    per_task: int,
) -> List[Episode]:
    """Samples `per_task` scored episodes for each task with one RNG stream per episode."""

    def _job(b: int, g: int) -> Callable[[], Episode]:
        def run() -> Episode:
            rng = rng_stream(config.seed, stream, iteration, b, g)
            ep = sample_solution(params, tasks[b], config.max_len, config.temperature, rng, group_id=b)
            return ep.model_copy(update={"reward": reward(ep.task, ep.solution)})

        return run

    jobs = [_job(b, g) for b in range(len(tasks)) for g in range(per_task)]
    return run_parallel(jobs, config.workers)


def probe_metrics(
    params: PolicyParams, probe_tasks: Sequence[TaskInstance], config: RunConfig, iteration: int
) -> Tuple[float, float]:
    """Held-out pass@1 and balanced verifier accuracy (NaN when a class is empty)."""
    if not probe_tasks:
        return math.nan, math.nan
    episodes = sample_groups(params, probe_tasks, config, PROBE_ROLLOUT, iteration, config.probe_samples)
    pass_at_1 = float(np.mean([ep.reward or 0 for ep in episodes]))
    items: List[ProbeItem] = [(ep.task, ep.solution, ep.reward or 0) for ep in episodes]
    balanced = balance_probe(items)
    if not balanced:
        return pass_at_1, math.nan
    return pass_at_1, verifier_accuracy(make_scorer(params, scorer_variant_for(config)), balanced)


def train(config: RunConfig) -> RunArtifacts:
    """
    Runs `config.total_iterations` unified training steps from the uniform policy.

    Every random draw comes from a stream keyed by (seed, purpose, iteration, ...), so the
    artifacts are a pure function of the config, whatever the number of rollout workers.
    """
    rid = compute_run_id(config)
    params = initial_params(config)
    ref = ReferenceParams.snapshot(params)
    probe_tasks = task_batch(config, PROBE_TASKS, count=config.probe_tasks)
    scoring_variant = scorer_variant_for(config)
    metrics: List[StepMetrics] = []
    records: List[EpisodeRecord] = []
    skips = 0

    logger.info(f"Starting run {rid}: method={config.method.value} iterations={config.total_iterations}")
    for iteration in range(config.total_iterations):
        tasks = task_batch(config, TASKS, iteration)
        episodes = sample_groups(params, tasks, config, ROLLOUT, iteration, config.group_size)

        scorer: Scorer = make_scorer(params, scoring_variant)
        for ep in episodes:
            records.append(
                EpisodeRecord(
                    run_id=rid,
                    iteration=iteration,
                    group_id=ep.group_id,
                    prompt=DEFAULT_VOCAB.render(ep.task.prompt),
                    solution=DEFAULT_VOCAB.render(ep.solution),
                    reward=ep.reward or 0,
                    old_logprobs=ep.old_logprobs,
                    verifier_score=scorer(ep.task, ep.solution),
                    modulus=ep.task.modulus,
                    domain=ep.task.domain_tag,
                )
            )

        params, step = unified_step(params, ref, episodes, config, iteration)
        skips += step.skip_count
        heldout, accuracy = probe_metrics(params, probe_tasks, config, iteration)
        step = step.model_copy(
            update={"heldout_pass_at_1": heldout, "verifier_accuracy": accuracy, "skip_count": skips}
        )
        metrics.append(step)
        logger.bind(**step.model_dump()).info(
            f"Iteration {iteration}: pass@1={step.train_pass_at_1:.3f} heldout={heldout:.3f} kl={step.mean_kl:.4f}"
        )

    return RunArtifacts(
        run_id=rid, config=config, params=params, reference=ref, metrics=metrics, episodes=records
    )


def policy_logprobs(params: PolicyParams, episode: Episode) -> List[float]:
    """Log-probabilities of an episode's tokens under `params` (un-tempered)."""
    return [float(log_dist(params, ctx)[1][tok]) for ctx, tok in zip(_contexts(episode), episode.solution, strict=True)]
