# Prosperity Public License 3.0
import csv
import functools
import io
import os
import sys
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence, Tuple, TypeVar

import click
from coreason_identity.models import UserContext
from pydantic import BaseModel, ValidationError

from coreason_rlv.agent import RLVWorkbench
from coreason_rlv.artifacts import read_bok_pairs, read_episodes, to_probe_item, write_run
from coreason_rlv.config import load_config
from coreason_rlv.errors import ArtifactError, BackendUnavailableError, ConfigError, ProtocolError
from coreason_rlv.evaluation import EvalSpec
from coreason_rlv.inference import best_of_k_estimate, rank_by_score
from coreason_rlv.policy import PolicyParams, load_params
from coreason_rlv.schemas import BackendKind, BackendSpec, DomainTag, ScorerVariant, VoteStrategy
from coreason_rlv.utils.logger import logger

F = TypeVar("F", bound=Callable[..., Any])

EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_BACKEND = 4


def _get_cli_context() -> UserContext:
    return UserContext(
        user_id="cli-user",
        email="cli@coreason.ai",
        groups=["system"],
        claims={"source": "cli"},
    )


def handle_errors(func: F) -> F:
    """Maps domain exceptions to the documented exit codes with an `Error:` line on stderr."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except (ConfigError, ValidationError, ValueError) as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except ArtifactError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_ARTIFACT)
        except (BackendUnavailableError, ProtocolError) as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_BACKEND)

    return wrapper  # type: ignore[return-value]


def _csv(rows: Sequence[BaseModel]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    if rows:
        columns = list(type(rows[0]).model_fields)
        writer.writerow(columns)
        for row in rows:
            dumped = row.model_dump(mode="json")
            writer.writerow([repr(v) if isinstance(v, float) else v for v in (dumped[c] for c in columns)])
    return buffer.getvalue()


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"'{text}' is not a comma-separated list of integers") from None


def _enum_list(text: str, enum: Any) -> List[Any]:
    try:
        return [enum(x.strip().upper()) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"'{text}' names an unknown {enum.__name__}") from None


def _load(path: str) -> PolicyParams:
    params, _ = load_params(path)
    return params


def eval_options(func: F) -> F:
    """Options describing the generated evaluation set."""
    options = [
        click.option("--difficulty", default=2, show_default=True, help="Chain length of evaluation tasks."),
        click.option(
            "--domain",
            type=click.Choice([d.value for d in DomainTag], case_sensitive=False),
            default=DomainTag.ADD_ONLY.value,
            show_default=True,
            help="Operation set of evaluation tasks.",
        ),
        click.option("--modulus", default=10, show_default=True, help="Modulus of the arithmetic."),
        click.option("--tasks", default=64, show_default=True, help="Number of evaluation tasks."),
        click.option("--samples", default=16, show_default=True, help="Solutions sampled per task."),
        click.option("--seed", default=0, show_default=True, help="Seed of the evaluation streams."),
        click.option("--max-len", default=6, show_default=True, help="Maximum solution length."),
        click.option("--temperature", default=1.0, show_default=True, help="Sampling temperature."),
        click.option(
            "--variant",
            type=click.Choice([v.value for v in ScorerVariant], case_sensitive=False),
            default=ScorerVariant.GENERATIVE.value,
            show_default=True,
            help="Verifier scoring pathway.",
        ),
        click.option(
            "--backend",
            type=click.Choice([k.value for k in BackendKind], case_sensitive=False),
            default=BackendKind.BUILTIN.value,
            show_default=True,
            help="Generation backend; REMOTE samples solutions from --endpoint.",
        ),
        click.option("--endpoint", help="Completion URL of the REMOTE backend."),
        click.option("--timeout", default=10.0, show_default=True, help="Per-request timeout in seconds."),
        click.option("--max-retries", default=3, show_default=True, help="Retries on transient endpoint failures."),
        click.option("--backoff", default=0.5, show_default=True, help="Base delay of the retry backoff in seconds."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _eval_spec(kwargs: dict[str, Any]) -> EvalSpec:
    return EvalSpec(
        difficulty=kwargs["difficulty"],
        domain=DomainTag(kwargs["domain"].upper()),
        modulus=kwargs["modulus"],
        tasks=kwargs["tasks"],
        samples=kwargs["samples"],
        seed=kwargs["seed"],
        max_len=kwargs["max_len"],
        temperature=kwargs["temperature"],
        variant=ScorerVariant(kwargs["variant"].upper()),
        backend=BackendSpec(
            kind=BackendKind(kwargs["backend"].upper()),
            endpoint=kwargs["endpoint"],
            timeout=kwargs["timeout"],
            max_retries=kwargs["max_retries"],
            backoff_seconds=kwargs["backoff"],
        ),
    )


def _save_figure(fig: Any, path: str) -> None:
    import matplotlib.pyplot as plt

    try:
        fig.savefig(path)
    except OSError as e:
        raise ArtifactError(f"failed to save plot: {e}") from e
    finally:
        plt.close(fig)
    logger.info(f"Plot saved to {path}")


@click.group()
def cli() -> None:
    """Coreason RLV: joint reasoner/verifier training and test-time scaling CLI"""
    pass


@cli.command()
@click.argument("config_path", required=False, type=click.Path())
@click.option("--set", "overrides", multiple=True, help="Override a config key, e.g. --set rl.beta=0.05.")
@click.option("--runs-dir", default="runs", show_default=True, type=click.Path(), help="Artifact root directory.")
@click.option("--plot-output", "-p", type=click.Path(writable=True), help="Path to save the training plot.")
@handle_errors
def train(config_path: Optional[str], overrides: Tuple[str, ...], runs_dir: str, plot_output: Optional[str]) -> None:
    """
    Train a policy and write params, metrics, episode log and config echo under RUNS_DIR/<run_id>/.

    Precedence: defaults < CONFIG_PATH < COREASON_RLV_* environment variables < --set.
    """
    config = load_config(config_path, overrides)
    with RLVWorkbench() as agent:
        artifacts = agent.train(config, context=_get_cli_context())
    run_dir = write_run(artifacts, runs_dir)
    click.echo(f"run_id={artifacts.run_id}")
    click.echo(f"artifacts={run_dir}")

    if plot_output:
        from coreason_rlv.visualizer import plot_training

        _save_figure(plot_training(artifacts.metrics, title=f"Run {artifacts.run_id}"), plot_output)


@cli.command(name="eval")
@click.option("--params", "params_path", required=True, type=click.Path(), help="Parameters file to evaluate.")
@click.option("--generator-params", type=click.Path(), help="Score samples of another policy instead.")
@click.option("--label", default="eval", show_default=True, help="Row label.")
@eval_options
@handle_errors
def eval_command(params_path: str, generator_params: Optional[str], label: str, **kwargs: Any) -> None:
    """Report pass@1, verifier accuracy and strategy accuracies on a generated evaluation set."""
    spec = _eval_spec(kwargs)
    params = _load(params_path)
    generator = _load(generator_params) if generator_params else None
    with RLVWorkbench() as agent:
        report = agent.evaluate(params, spec, label, generator, context=_get_cli_context())
    click.echo(_csv([report]), nl=False)


@cli.command(name="sweep-n")
@click.option("--params", "params_path", required=True, type=click.Path(), help="Parameters file.")
@click.option("--n-grid", default="1,2,4,8,16", show_default=True, help="Comma-separated sample counts.")
@click.option(
    "--strategies",
    default="MAJORITY,WEIGHTED,BEST_OF_N,COVERAGE,OPTIMAL",
    show_default=True,
    help="Comma-separated strategies.",
)
@click.option("--trials", default=2000, show_default=True, help="Subset budget of the voting strategies.")
@click.option("--plot-output", "-p", type=click.Path(writable=True), help="Path to save the sweep plot.")
@eval_options
@handle_errors
def sweep_n(
    params_path: str, n_grid: str, strategies: str, trials: int, plot_output: Optional[str], **kwargs: Any
) -> None:
    """Accuracy per (strategy, N) as CSV rows: strategy, n, accuracy, stderr."""
    spec = _eval_spec(kwargs)
    grid = _int_list(n_grid)
    chosen = _enum_list(strategies, VoteStrategy)
    params = _load(params_path)
    with RLVWorkbench() as agent:
        rows = agent.sweep(params, spec, grid, chosen, trials, context=_get_cli_context())
    click.echo(_csv(rows), nl=False)

    if plot_output:
        from coreason_rlv.visualizer import plot_sweep

        _save_figure(plot_sweep(rows), plot_output)


@cli.command(name="budget-demo")
@click.option("--params", "params_path", required=True, type=click.Path(), help="Parameters file.")
@click.option("--budgets", default="4,6,8", show_default=True, help="Strictly increasing token budgets.")
@click.option("--threshold", "tau", default=0.8, show_default=True, help="Confidence threshold of the adaptive row.")
@click.option("--buffer", "b_buffer", type=int, help="Buffer tokens (default: a quarter of each budget).")
@eval_options
@handle_errors
def budget_demo(params_path: str, budgets: str, tau: float, b_buffer: Optional[int], **kwargs: Any) -> None:
    """Budget-forced accuracy per budget plus an adaptive-length row."""
    spec = _eval_spec(kwargs)
    ladder = _int_list(budgets)
    params = _load(params_path)
    with RLVWorkbench() as agent:
        rows = agent.budget_demo(params, spec, ladder, tau, b_buffer, context=_get_cli_context())
    click.echo(_csv(rows), nl=False)


@cli.command()
@click.argument("pairs_file", type=click.Path())
@click.option("--k", "ks", multiple=True, type=int, help="Subset sizes (default: 1..N).")
@handle_errors
def bok(pairs_file: str, ks: Tuple[int, ...]) -> None:
    """
    Unbiased Best-of-k accuracy from a file of `alpha score` lines.

    Equal scores are ranked by their order in the file.
    """
    pairs = read_bok_pairs(pairs_file)
    alphas = rank_by_score([s for _, s in pairs], [a for a, _ in pairs])
    chosen = list(ks) if ks else list(range(1, len(alphas) + 1))
    click.echo("k,estimate")
    for k in chosen:
        click.echo(f"{k},{best_of_k_estimate(alphas, k)!r}")


@cli.command(name="verify-probe")
@click.option(
    "--params", "params_paths", required=True, multiple=True, type=click.Path(), help="Parameters file(s)."
)
@click.option("--probe", "probe_path", type=click.Path(), help="Episode log to probe (balanced subset is used).")
@click.option("--generator-params", type=click.Path(), help="Probe on samples of another policy.")
@click.option("--variants", help="Comma-separated scorer variants (default: every variant the params carry).")
@eval_options
@handle_errors
def verify_probe(
    params_paths: Tuple[str, ...],
    probe_path: Optional[str],
    generator_params: Optional[str],
    variants: Optional[str],
    **kwargs: Any,
) -> None:
    """(reasoner accuracy, verifier accuracy) per params file and scoring variant."""
    spec = _eval_spec(kwargs)
    probe = [to_probe_item(r) for r in read_episodes(probe_path)] if probe_path else None
    chosen = _enum_list(variants, ScorerVariant) if variants else None
    generator = _load(generator_params) if generator_params else None
    rows = []
    with RLVWorkbench() as agent:
        for path in params_paths:
            rows.extend(
                agent.verify_probe(
                    _load(path), spec, Path(path).name, probe, chosen, generator, context=_get_cli_context()
                )
            )
    click.echo(_csv(rows), nl=False)


@cli.command()
@click.option("--params", "params_path", type=click.Path(), help="Parameters file to serve (default: uniform).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--seed", default=0, show_default=True, help="Seed of the completion stream.")
@handle_errors
def serve(params_path: Optional[str], host: str, port: int, seed: int) -> None:
    """Serve a policy over the completion protocol (POST /v1/completions, POST /score, GET /health)."""
    import uvicorn

    from coreason_rlv.server import PARAMS_ENV, SEED_ENV

    if params_path:
        _load(params_path)
        os.environ[PARAMS_ENV] = params_path
    os.environ[SEED_ENV] = str(seed)
    uvicorn.run("coreason_rlv.server:app", host=host, port=port)


if __name__ == "__main__":
    cli()  # pragma: no cover
