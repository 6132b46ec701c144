import math

import numpy as np
import pytest

from coreason_rlv.evaluation import (
    EvalSpec,
    available_variants,
    eval_tasks,
    evaluate,
    probe_accuracy,
    sample_pools,
    sweep_n,
    verify_probe,
)
from coreason_rlv.policy import PolicyParams
from coreason_rlv.schemas import DomainTag, ScorerVariant, VoteStrategy
from coreason_rlv.task import task_from_prompt
from coreason_rlv.verifier import ProbeItem
from coreason_rlv.vocab import ANSWER, DEFAULT_VOCAB, EOS, VOCAB_SIZE

TASK = task_from_prompt(DEFAULT_VOCAB.parse("3 + 4 SEP"))
PROBE: list[ProbeItem] = [(TASK, [ANSWER, 7, EOS], 1), (TASK, [ANSWER, 5, EOS], 0)]


def noisy_params(seed: int) -> PolicyParams:
    return PolicyParams(W=np.random.default_rng(seed).normal(0, 0.7, size=(3 * VOCAB_SIZE, VOCAB_SIZE)))


class TestEvalSet:
    def test_tasks_are_deterministic(self) -> None:
        spec = EvalSpec(tasks=5, difficulty=3, domain=DomainTag.MIXED, seed=2)
        tasks = eval_tasks(spec)
        assert tasks == eval_tasks(spec)
        assert len(tasks) == 5
        assert all(t.difficulty == 3 for t in tasks)

    def test_seed_changes_tasks(self) -> None:
        assert eval_tasks(EvalSpec(tasks=8, seed=0)) != eval_tasks(EvalSpec(tasks=8, seed=1))

    def test_generator_and_scorer_are_separate(self) -> None:
        spec = EvalSpec(tasks=3, samples=4)
        generator, scorer = noisy_params(0), noisy_params(1)
        crossed = sample_pools(scorer, spec, generating_params=generator)
        own = sample_pools(generator, spec)
        for (_, a), (_, b) in zip(crossed, own, strict=True):
            assert [s.solution for s in a] == [s.solution for s in b]
            assert [s.score for s in a] != [s.score for s in b]


class TestEvaluate:
    def test_strategies_never_beat_coverage(self) -> None:
        report = evaluate(noisy_params(2), EvalSpec(tasks=10, samples=6))
        for value in (report.pass_at_1, report.majority, report.weighted, report.best_of_n):
            assert 0.0 <= value <= report.coverage <= 1.0

    def test_single_sample_collapses(self) -> None:
        report = evaluate(noisy_params(3), EvalSpec(tasks=12, samples=1), label="n1")
        assert report.label == "n1"
        assert report.majority == report.pass_at_1
        assert report.weighted == report.pass_at_1
        assert report.best_of_n == report.pass_at_1
        assert report.coverage == report.pass_at_1

    def test_deterministic(self) -> None:
        spec = EvalSpec(tasks=4, samples=3, seed=7)
        first = evaluate(noisy_params(4), spec)
        assert first.model_dump_json() == evaluate(noisy_params(4), spec).model_dump_json()


class TestSweepN:
    def test_rows(self) -> None:
        strategies = [VoteStrategy.MAJORITY, VoteStrategy.BEST_OF_N, VoteStrategy.COVERAGE]
        rows = sweep_n(noisy_params(5), EvalSpec(tasks=4, samples=1), [1, 2, 4], strategies, trials=20)
        assert len(rows) == 9
        assert {r.n for r in rows} == {1, 2, 4}

    def test_grid_is_deduplicated(self) -> None:
        rows = sweep_n(PolicyParams.zeros(), EvalSpec(tasks=2), [2, 2, 1], [VoteStrategy.COVERAGE])
        assert [r.n for r in rows] == [1, 2]

    @pytest.mark.parametrize("grid", [[], [0, 2], [-1]])
    def test_invalid_grid(self, grid: list[int]) -> None:
        with pytest.raises(ValueError):
            sweep_n(PolicyParams.zeros(), EvalSpec(tasks=1), grid, [VoteStrategy.MAJORITY])


class TestVerifyProbe:
    def test_available_variants(self) -> None:
        assert available_variants(PolicyParams.zeros()) == [ScorerVariant.GENERATIVE]
        full = PolicyParams.zeros(value_head=True, bce_head=True, reg_head=True)
        assert available_variants(full) == [
            ScorerVariant.GENERATIVE,
            ScorerVariant.BCE_HEAD,
            ScorerVariant.REG_HEAD,
            ScorerVariant.PPO_VALUE_MEAN,
            ScorerVariant.PPO_VALUE_LAST,
        ]

    def test_uniform_policy_is_at_chance(self) -> None:
        rows = verify_probe(PolicyParams.zeros(), EvalSpec(tasks=2, samples=2), "zeros", PROBE)
        assert len(rows) == 1
        assert rows[0].source == "zeros"
        assert rows[0].verifier_accuracy == 0.5

    def test_one_row_per_variant(self) -> None:
        params = PolicyParams.zeros(bce_head=True, reg_head=True)
        rows = verify_probe(params, EvalSpec(tasks=2, samples=2), "run", PROBE)
        assert [r.variant for r in rows] == available_variants(params)
        assert len({r.reasoner_accuracy for r in rows}) == 1

    def test_missing_head(self) -> None:
        with pytest.raises(ValueError):
            verify_probe(PolicyParams.zeros(), EvalSpec(tasks=1, samples=1), "x", PROBE, [ScorerVariant.BCE_HEAD])

    def test_single_class_probe_is_nan(self) -> None:
        assert math.isnan(probe_accuracy(PolicyParams.zeros(), ScorerVariant.GENERATIVE, PROBE[:1]))

    def test_generator_supplies_probe(self) -> None:
        spec = EvalSpec(tasks=6, samples=4)
        scorer, generator = noisy_params(6), noisy_params(7)
        rows = verify_probe(scorer, spec, "cross", generating_params=generator)
        expected = probe_accuracy(
            scorer,
            ScorerVariant.GENERATIVE,
            [(t, s.solution, int(s.reward or 0)) for t, pool in sample_pools(generator, spec) for s in pool],
        )
        np.testing.assert_equal(rows[0].verifier_accuracy, expected)
