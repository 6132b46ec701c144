import math

import matplotlib
import matplotlib.pyplot as plt
import pytest
from matplotlib.figure import Figure

from coreason_rlv.schemas import StepMetrics, SweepRow, VoteStrategy
from coreason_rlv.visualizer import plot_sweep, plot_training

# Force non-interactive backend for tests
matplotlib.use("Agg")


@pytest.fixture
def sweep_rows() -> list[SweepRow]:
    rows = []
    for strategy, base in ((VoteStrategy.MAJORITY, 0.4), (VoteStrategy.COVERAGE, 0.6)):
        for i, n in enumerate((1, 2, 4)):
            rows.append(SweepRow(strategy=strategy, n=n, accuracy=base + 0.1 * i, stderr=0.02))
    return rows


def metrics(heldout: float) -> StepMetrics:
    return StepMetrics(
        iteration=0,
        lr=0.1,
        lam=0.1,
        train_pass_at_1=0.2,
        heldout_pass_at_1=heldout,
        verifier_accuracy=math.nan,
        mean_kl=0.0,
        rl_objective=0.0,
        verify_loss=0.5,
        head_loss=math.nan,
        value_loss=math.nan,
        verify_skipped=False,
        skip_count=0,
        zero_variance_groups=0,
    )


def test_plot_sweep_returns_figure(sweep_rows: list[SweepRow]) -> None:
    fig = plot_sweep(sweep_rows)
    assert isinstance(fig, Figure)
    plt.close(fig)


def test_plot_sweep_lines(sweep_rows: list[SweepRow]) -> None:
    fig = plot_sweep(list(reversed(sweep_rows)), title="Sweep")
    ax = fig.axes[0]
    assert ax.get_title() == "Sweep"
    assert ax.get_xscale() == "log"
    legend = ax.get_legend()
    assert legend is not None
    labels = [t.get_text() for t in legend.get_texts()]
    assert sorted(labels) == ["Coverage", "Majority"]
    plt.close(fig)


def test_plot_training() -> None:
    series = [metrics(0.3).model_copy(update={"iteration": i}) for i in range(3)]
    fig = plot_training(series)
    ax = fig.axes[0]
    assert len(ax.get_lines()) == 4
    assert ax.get_ylim() == (0.0, 1.0)
    plt.close(fig)


def test_plot_training_empty() -> None:
    fig = plot_training([])
    assert isinstance(fig, Figure)
    plt.close(fig)
