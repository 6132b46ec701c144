# Prosperity Public License 3.0
from typing import List, Optional, Sequence

import numpy as np

from coreason_rlv.policy import PolicyParams, generate_tokens
from coreason_rlv.schemas import TaskInstance
from coreason_rlv.task import reward
from coreason_rlv.vocab import EOS

GRPO_STD_EPSILON = 1e-8


def grpo_advantages(rewards: Sequence[float]) -> List[float]:
    """
    Group-normalized advantages: (r_i − mean) / (population std + 1e-8).

    Raises:
        ValueError: If the group has fewer than two rewards.
    """
    if len(rewards) < 2:
        raise ValueError(f"GRPO needs a group of at least 2 rewards, got {len(rewards)}")
    r = np.asarray(rewards, dtype=float)
    centered = r - r.mean()
    return [float(a) for a in centered / (r.std() + GRPO_STD_EPSILON)]


def rloo_advantages(rewards: Sequence[float]) -> List[float]:
    """
    Leave-one-out advantages: r_i minus the mean reward of the other K−1 samples.

    Raises:
        ValueError: If the group has fewer than two rewards.
    """
    k = len(rewards)
    if k < 2:
        raise ValueError(f"leave-one-out needs a group of at least 2 rewards, got {k}")
    r = np.asarray(rewards, dtype=float)
    baseline = (r.sum() - r) / (k - 1)
    return [float(a) for a in r - baseline]


def _is_terminal(prefix: Sequence[int], max_len: int) -> bool:
    return (len(prefix) > 0 and prefix[-1] == EOS) or len(prefix) >= max_len


def vineppo_value(
    params: PolicyParams,
    task: TaskInstance,
    prefix: Sequence[int],
    k: int,
    max_len: int,
    rng: Optional[np.random.Generator],
    temperature: float = 1.0,
    greedy: bool = False,
) -> float:
    """
    Monte-Carlo value of the state (task, prefix): the mean reward of K completions.

    A prefix that already ends in EOS or has reached `max_len` is terminal and is valued
    at its own reward.

    Args:
        params: The current policy the completions are drawn from.
        task: Problem of the state.
        prefix: Partial solution y_<t.
        k: Number of completions (>= 1).
        max_len: Maximum solution length, prefix included.
        rng: Random stream for the completions.
        temperature: Sampling temperature of the completions.
        greedy: Argmax completions (every completion is then identical).

    Raises:
        ValueError: If k < 1.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    prefix = list(prefix)
    if _is_terminal(prefix, max_len):
        return float(reward(task, prefix))
    context = [*task.prompt, *prefix]
    total = 0
    for _ in range(k):
        tail, _ = generate_tokens(params, context, max_len - len(prefix), temperature, rng, greedy)
        total += reward(task, prefix + tail)
    return total / k


def vineppo_advantages(
    params: PolicyParams,
    task: TaskInstance,
    solution: Sequence[int],
    k: int,
    max_len: int,
    rng: Optional[np.random.Generator],
    temperature: float = 1.0,
    greedy: bool = False,
) -> List[float]:
    """
    Per-token advantages Â_t = r_t + V̂(s_{t+1}) − V̂(s_t) with values estimated at every
    token position.

    Intermediate rewards are 0, the terminal step earns the episode reward, and the
    post-terminal state is valued 0, so the advantages telescope to r − V̂(s_0).

    Raises:
        ValueError: If the solution is empty.
    """
    if len(solution) == 0:
        raise ValueError("solution must not be empty")
    solution = list(solution)
    n = len(solution)
    values = [vineppo_value(params, task, solution[:t], k, max_len, rng, temperature, greedy) for t in range(n)]
    values.append(0.0)
    final_reward = float(reward(task, solution))
    advantages = []
    for t in range(n):
        r_t = final_reward if t == n - 1 else 0.0
        advantages.append(r_t + values[t + 1] - values[t])
    return advantages


def gae_advantages(
    token_rewards: Sequence[float], values: Sequence[float], gamma: float = 1.0, lambda_gae: float = 0.95
) -> List[float]:
    """
    Generalized advantage estimation.

    Args:
        token_rewards: r_0..r_{T-1}.
        values: V_0..V_T, the last entry being the post-terminal value (normally 0).
        gamma: Discount.
        lambda_gae: Trace decay.

    Returns:
        Â_t = Σ_l (γλ)^l δ_{t+l} with δ_t = r_t + γ V_{t+1} − V_t.

    Raises:
        ValueError: If `values` is not exactly one longer than `token_rewards`.
    """
    if len(values) != len(token_rewards) + 1:
        raise ValueError(f"values must have length {len(token_rewards) + 1}, got {len(values)}")
    advantages = [0.0] * len(token_rewards)
    running = 0.0
    for t in reversed(range(len(token_rewards))):
        delta = token_rewards[t] + gamma * values[t + 1] - values[t]
        running = delta + gamma * lambda_gae * running
        advantages[t] = running
    return advantages


def discounted_returns(token_rewards: Sequence[float], gamma: float = 1.0) -> List[float]:
    """Empirical returns G_t = Σ_l γ^l r_{t+l}, the regression target of the value head."""
    returns = [0.0] * len(token_rewards)
    running = 0.0
    for t in reversed(range(len(token_rewards))):
        running = token_rewards[t] + gamma * running
        returns[t] = running
    return returns


def outcome_token_rewards(length: int, final_reward: float) -> List[float]:
    """Outcome-only reward vector: zeros with the episode reward on the last token."""
    if length == 0:
        return []
    return [0.0] * (length - 1) + [float(final_reward)]
