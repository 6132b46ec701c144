import pytest
from pydantic import ValidationError

from coreason_rlv.schemas import DomainTag, TaskInstance
from coreason_rlv.task import (
    evaluate_chain,
    extract_answer,
    generate_task,
    make_verification_input,
    reward,
    task_from_prompt,
)
from coreason_rlv.vocab import ANSWER, DEFAULT_VOCAB, EOS, MINUS, OPERATORS, PLUS, SEP, STEP, TIMES, VERIFY


def toks(text: str) -> list[int]:
    return DEFAULT_VOCAB.parse(text)


class TestEvaluateChain:
    def test_simple_addition(self) -> None:
        assert evaluate_chain(toks("3 + 4 SEP"), 10) == 7

    def test_wraps_modulo(self) -> None:
        assert evaluate_chain(toks("9 + 8 SEP"), 10) == 7

    def test_left_to_right(self) -> None:
        # (2 + 3) * 4 = 20 -> 0, not 2 + 12
        assert evaluate_chain(toks("2 + 3 * 4 SEP"), 10) == 0

    def test_subtraction_is_non_negative(self) -> None:
        assert evaluate_chain(toks("1 - 4 SEP"), 10) == 7

    def test_other_modulus(self) -> None:
        assert evaluate_chain(toks("3 + 4 SEP"), 5) == 2

    def test_sep_is_optional(self) -> None:
        assert evaluate_chain(toks("3 + 4"), 10) == 7

    def test_malformed_chain(self) -> None:
        with pytest.raises(ValueError):
            evaluate_chain(toks("3 SEP"), 10)
        with pytest.raises(ValueError):
            evaluate_chain(toks("+ + 3 SEP"), 10)

    def test_non_operator(self) -> None:
        with pytest.raises(ValueError, match="not an operator"):
            evaluate_chain(toks("3 STEP 4 SEP"), 10)


class TestGenerateTask:
    def test_deterministic(self) -> None:
        assert generate_task(1, DomainTag.ADD_ONLY, 123) == generate_task(1, DomainTag.ADD_ONLY, 123)

    def test_seed_changes_task(self) -> None:
        prompts = {tuple(generate_task(3, DomainTag.MIXED, s).prompt) for s in range(20)}
        assert len(prompts) > 1

    def test_mixed_instance_is_self_consistent(self) -> None:
        task = generate_task(3, DomainTag.MIXED, 42)
        assert task == generate_task(3, DomainTag.MIXED, 42)
        assert len(task.prompt) == 2 * 3 + 2
        assert task.prompt[-1] == SEP
        assert all(op in OPERATORS for op in task.prompt[1:-1:2])
        assert all(0 <= d < 10 for d in task.prompt[0:-1:2])
        assert task.ground_truth == evaluate_chain(task.prompt, 10)

    def test_mixed_ground_truth_by_hand(self) -> None:
        task = generate_task(3, DomainTag.MIXED, 42)
        acc = task.prompt[0]
        for op, d in zip(task.prompt[1:-1:2], task.prompt[2:-1:2], strict=True):
            if op == PLUS:
                acc = (acc + d) % 10
            elif op == MINUS:
                acc = (acc - d) % 10
            else:
                assert op == TIMES
                acc = (acc * d) % 10
        assert task.ground_truth == acc

    def test_add_only_uses_plus(self) -> None:
        for seed in range(10):
            task = generate_task(4, DomainTag.ADD_ONLY, seed)
            assert set(task.prompt[1:-1:2]) == {PLUS}
            assert task.domain_tag == DomainTag.ADD_ONLY

    def test_modulus_bounds_digits(self) -> None:
        for seed in range(10):
            task = generate_task(2, DomainTag.ADD_ONLY, seed, modulus=5)
            assert all(d < 5 for d in task.prompt[0:-1:2])
            assert 0 <= task.ground_truth < 5

    def test_zero_difficulty(self) -> None:
        with pytest.raises(ValueError, match="difficulty"):
            generate_task(0, DomainTag.ADD_ONLY, 1)

    def test_large_seed(self) -> None:
        assert generate_task(2, DomainTag.ADD_ONLY, 2**63 - 1).difficulty == 2


class TestTaskInstance:
    def test_prompt_must_end_with_sep(self) -> None:
        with pytest.raises(ValidationError):
            TaskInstance(prompt=toks("3 + 4"), ground_truth=7, difficulty=1, domain_tag=DomainTag.ADD_ONLY)

    def test_ground_truth_range(self) -> None:
        with pytest.raises(ValidationError):
            TaskInstance(prompt=toks("3 + 4 SEP"), ground_truth=12, difficulty=1, domain_tag=DomainTag.ADD_ONLY)

    def test_task_from_prompt(self) -> None:
        task = task_from_prompt(toks("2 * 3 + 1 SEP"))
        assert task.ground_truth == 7
        assert task.difficulty == 2
        assert task.domain_tag == DomainTag.MIXED
        assert task_from_prompt(toks("2 + 3 SEP")).domain_tag == DomainTag.ADD_ONLY


class TestAnswerAndReward:
    def test_extract_answer(self) -> None:
        assert extract_answer(toks("STEP 3 ANSWER 7 EOS")) == 7

    def test_extract_last_answer(self) -> None:
        assert extract_answer(toks("ANSWER 2 STEP ANSWER 9 EOS")) == 9

    def test_extract_none(self) -> None:
        assert extract_answer(toks("STEP 3 EOS")) is None
        assert extract_answer(toks("STEP ANSWER EOS")) is None
        assert extract_answer([]) is None

    def test_multi_digit_answer_is_reduced(self) -> None:
        assert extract_answer(toks("ANSWER 1 7 EOS"), 10) == 7
        assert extract_answer(toks("ANSWER 1 2 EOS"), 5) == 2

    def test_reward(self) -> None:
        task = task_from_prompt(toks("3 + 4 SEP"))
        assert reward(task, toks("STEP ANSWER 7 EOS")) == 1
        assert reward(task, toks("ANSWER 5 EOS")) == 0
        assert reward(task, toks("7 EOS")) == 0

    def test_verification_input(self) -> None:
        task = task_from_prompt(toks("3 + 4 SEP"))
        solution = [ANSWER, 7, EOS]
        built = make_verification_input(task, solution)
        assert built == [*task.prompt, *solution, VERIFY]
        assert len(built) == len(task.prompt) + len(solution) + 1

    def test_verification_input_empty_solution(self) -> None:
        task = task_from_prompt(toks("3 + 4 SEP"))
        assert make_verification_input(task, []) == [*task.prompt, VERIFY]

    def test_verification_inputs_differ_only_in_solution(self) -> None:
        task = task_from_prompt(toks("3 + 4 SEP"))
        a = make_verification_input(task, [ANSWER, 7, EOS])
        b = make_verification_input(task, [ANSWER, 5, EOS])
        n = len(task.prompt)
        assert a[:n] == b[:n]
        assert a[-1] == b[-1] == VERIFY
        assert a[n:-1] != b[n:-1]


def test_step_token_is_not_an_answer() -> None:
    assert extract_answer([STEP, ANSWER, STEP]) is None
