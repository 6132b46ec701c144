from typing import Dict, List, Sequence

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.figure import Figure

from coreason_rlv.schemas import StepMetrics, SweepRow, VoteStrategy
from coreason_rlv.utils.logger import logger


def plot_sweep(rows: Sequence[SweepRow], title: str = "Accuracy vs. number of solutions") -> Figure:
    """
    Plots accuracy against N (log2 axis) with one line per selection strategy.

    Error bars show the standard error across tasks. Coverage is dashed since it bounds every
    reranking strategy rather than competing with them.

    Args:
        rows: Sweep table rows.
        title: Title of the plot.

    Returns:
        A matplotlib Figure object containing the plotted data.
    """
    logger.debug(f"Generating sweep plot: {title}")

    by_strategy: Dict[VoteStrategy, List[SweepRow]] = {}
    for row in rows:
        by_strategy.setdefault(row.strategy, []).append(row)

    fig = plt.figure(figsize=(8, 5))
    ax = fig.add_subplot(111)
    for strategy, series in by_strategy.items():
        series = sorted(series, key=lambda r: r.n)
        ax.errorbar(
            [r.n for r in series],
            [r.accuracy for r in series],
            yerr=[r.stderr for r in series],
            label=strategy.value.replace("_", " ").title(),
            linestyle="--" if strategy == VoteStrategy.COVERAGE else "-",
            marker="o",
            capsize=3,
        )

    ax.set_xscale("log", base=2)
    ax.set_title(title)
    ax.set_xlabel("Solutions per problem (N)")
    ax.set_ylabel("Accuracy")
    ax.legend(loc="lower right")
    ax.grid(True, linestyle=":", alpha=0.6)
    fig.tight_layout()
    return fig


def plot_training(metrics: Sequence[StepMetrics], title: str = "Training progress") -> Figure:
    """
    Plots train/held-out pass@1 and verifier accuracy against the iteration.

    NaN points (e.g. a probe missing a class) are left as gaps.
    """
    logger.debug(f"Generating training plot: {title}")

    fig = plt.figure(figsize=(10, 6))
    ax = fig.add_subplot(111)
    x = np.array([m.iteration for m in metrics])
    ax.plot(x, [m.train_pass_at_1 for m in metrics], label="Train pass@1", color="black", alpha=0.5)
    ax.plot(x, [m.heldout_pass_at_1 for m in metrics], label="Held-out pass@1", color="blue")
    ax.plot(x, [m.verifier_accuracy for m in metrics], label="Verifier accuracy", color="green", linestyle="--")
    ax.axhline(0.5, color="grey", linestyle=":", linewidth=1)

    ax.set_ylim(0.0, 1.0)
    ax.set_title(title)
    ax.set_xlabel("Iteration")
    ax.set_ylabel("Accuracy")
    ax.legend(loc="upper left")
    ax.grid(True, linestyle=":", alpha=0.6)
    fig.tight_layout()
    return fig
