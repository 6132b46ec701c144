# Prosperity Public License 3.0
from typing import List, Optional, Sequence

import numpy as np

from coreason_rlv.schemas import DomainTag, TaskInstance
from coreason_rlv.vocab import ANSWER, MINUS, OPERATORS, PLUS, SEP, TIMES, VERIFY, is_digit


def _apply(op: int, acc: int, operand: int, modulus: int) -> int:
    if op == PLUS:
        return (acc + operand) % modulus
    if op == MINUS:
        return (acc - operand) % modulus
    if op == TIMES:
        return (acc * operand) % modulus
    raise ValueError(f"token {op} is not an operator")


def evaluate_chain(prompt: Sequence[int], modulus: int = 10) -> int:
    """
    Evaluates `d0 op1 d1 ... op_k d_k [SEP]` left to right modulo `modulus`.

    Raises:
        ValueError: If the tokens do not form an alternating digit/operator chain.
    """
    body = list(prompt[:-1]) if prompt and prompt[-1] == SEP else list(prompt)
    if len(body) < 3 or len(body) % 2 == 0:
        raise ValueError("prompt must alternate digits and operators with at least one operator")
    if not all(is_digit(t) for t in body[0::2]):
        raise ValueError("prompt operands must be digit tokens")
    acc = body[0] % modulus
    for op, operand in zip(body[1::2], body[2::2], strict=True):
        acc = _apply(op, acc, operand, modulus)
    return acc


def generate_task(
    difficulty: int, domain_tag: DomainTag, rng_seed: int, modulus: int = 10
) -> TaskInstance:
    """
    Generates a deterministic modular-arithmetic task.

    The prompt is `d0 op1 d1 ... op_k d_k SEP` with `k = difficulty` operators. Digits are
    drawn uniformly from `[0, modulus)`; ADD_ONLY uses `+` only, MIXED draws each operator
    uniformly from `+ - *`.

    Args:
        difficulty: Number of chained operators (>= 1).
        domain_tag: Operation set.
        rng_seed: 64-bit seed; the task is a pure function of (difficulty, domain_tag, rng_seed).
        modulus: Modulus of the arithmetic.

    Returns:
        The TaskInstance with its ground truth.

    Raises:
        ValueError: If difficulty < 1.
    """
    if difficulty < 1:
        raise ValueError("difficulty must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence(int(rng_seed) & 0xFFFFFFFFFFFFFFFF))
    digits = [int(d) for d in rng.integers(0, modulus, size=difficulty + 1)]
    if domain_tag == DomainTag.ADD_ONLY:
        ops = [PLUS] * difficulty
    else:
        ops = [OPERATORS[int(i)] for i in rng.integers(0, len(OPERATORS), size=difficulty)]

    prompt = [digits[0]]
    for op, d in zip(ops, digits[1:], strict=True):
        prompt.extend([op, d])
    prompt.append(SEP)

    return TaskInstance(
        prompt=prompt,
        ground_truth=evaluate_chain(prompt, modulus),
        difficulty=difficulty,
        domain_tag=domain_tag,
        modulus=modulus,
    )


def task_from_prompt(prompt: Sequence[int], modulus: int = 10) -> TaskInstance:
    """Rebuilds a TaskInstance (ground truth included) from its prompt tokens alone."""
    prompt = list(prompt)
    difficulty = (len(prompt) - 2) // 2
    ops = set(prompt[1:-1:2])
    domain = DomainTag.ADD_ONLY if ops <= {PLUS} else DomainTag.MIXED
    return TaskInstance(
        prompt=prompt,
        ground_truth=evaluate_chain(prompt, modulus),
        difficulty=difficulty,
        domain_tag=domain,
        modulus=modulus,
    )


def extract_answer(solution: Sequence[int], modulus: int = 10) -> Optional[int]:
    """
    Decodes the digits immediately following the LAST ANSWER token.

    Returns:
        The decimal value of the digit run modulo `modulus`, or None when there is no
        ANSWER token or it is not followed by a digit.
    """
    last = -1
    for i, t in enumerate(solution):
        if t == ANSWER:
            last = i
    if last < 0:
        return None
    value = 0
    n_digits = 0
    for t in solution[last + 1 :]:
        if not is_digit(t):
            break
        value = value * 10 + t
        n_digits += 1
    if n_digits == 0:
        return None
    return value % modulus


def reward(task: TaskInstance, solution: Sequence[int]) -> int:
    """Binary correctness reward: 1 iff the extracted answer equals the ground truth."""
    answer = extract_answer(solution, task.modulus)
    return int(answer is not None and answer == task.ground_truth)


def make_verification_input(task: TaskInstance, solution: Sequence[int]) -> List[int]:
    """Builds `x ⊕ y ⊕ [VERIFY]`; the next token after VERIFY is where YES/NO is predicted."""
    return [*task.prompt, *solution, VERIFY]
