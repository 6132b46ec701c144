# Prosperity Public License 3.0
import csv
import io
from pathlib import Path
from typing import List, Tuple, Union

from pydantic import ValidationError

from coreason_rlv.config import echo_config
from coreason_rlv.errors import ArtifactError
from coreason_rlv.policy import save_params
from coreason_rlv.schemas import EpisodeRecord, StepMetrics
from coreason_rlv.task import reward, task_from_prompt
from coreason_rlv.trainer import RunArtifacts
from coreason_rlv.utils.logger import logger
from coreason_rlv.verifier import ProbeItem
from coreason_rlv.vocab import DEFAULT_VOCAB

PARAMS_FILE = "params.json"
METRICS_FILE = "metrics.csv"
EPISODES_FILE = "episodes.jsonl"
CONFIG_FILE = "config.txt"
ARTIFACT_FILES = (PARAMS_FILE, METRICS_FILE, EPISODES_FILE, CONFIG_FILE)

METRIC_COLUMNS: List[str] = list(StepMetrics.model_fields)

PathLike = Union[str, Path]


def _cell(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_to_csv(metrics: List[StepMetrics]) -> str:
    """Header row plus one row per iteration; floats are written in round-trip form."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in metrics:
        writer.writerow([_cell(getattr(row, column)) for column in METRIC_COLUMNS])
    return buffer.getvalue()


def episodes_to_jsonl(records: List[EpisodeRecord]) -> str:
    return "".join(record.model_dump_json() + "\n" for record in records)


def write_run(artifacts: RunArtifacts, root: PathLike = "runs") -> Path:
    """
    Writes the four artifact files under `root/<run_id>/` and returns that directory.

    Raises:
        ArtifactError: If the directory or a file cannot be written.
    """
    run_dir = Path(root) / artifacts.run_id
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        save_params(run_dir / PARAMS_FILE, artifacts.params, artifacts.reference)
        (run_dir / METRICS_FILE).write_text(metrics_to_csv(artifacts.metrics), encoding="utf-8")
        (run_dir / EPISODES_FILE).write_text(episodes_to_jsonl(artifacts.episodes), encoding="utf-8")
        (run_dir / CONFIG_FILE).write_text(echo_config(artifacts.config), encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"cannot write run artifacts to '{run_dir}': {e}") from e
    logger.info(f"Wrote run {artifacts.run_id} to {run_dir}")
    return run_dir


def read_metrics(path: PathLike) -> List[StepMetrics]:
    """
    Parses a metrics file written by `write_run`.

    Raises:
        ArtifactError: If the file is unreadable or a row does not validate.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"cannot read metrics '{path}': {e}") from e
    rows = []
    for lineno, row in enumerate(csv.DictReader(io.StringIO(text)), start=2):
        try:
            rows.append(StepMetrics.model_validate(row))
        except ValidationError as e:
            raise ArtifactError(f"{path}:{lineno}: invalid metrics row: {e}") from e
    return rows


def read_episodes(path: PathLike) -> List[EpisodeRecord]:
    """
    Parses an episode log, one JSON record per line.

    Raises:
        ArtifactError: If the file is unreadable or a line is not a valid record.
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ArtifactError(f"cannot read episode log '{path}': {e}") from e
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(EpisodeRecord.model_validate_json(line))
        except ValidationError as e:
            raise ArtifactError(f"{path}:{lineno}: invalid episode record: {e}") from e
    return records


def to_probe_item(record: EpisodeRecord) -> ProbeItem:
    """Rebuilds (task, solution, recomputed reward) from a logged episode."""
    try:
        task = task_from_prompt(DEFAULT_VOCAB.parse(record.prompt), record.modulus)
        solution = DEFAULT_VOCAB.parse(record.solution)
    except ValueError as e:
        raise ArtifactError(f"episode of run {record.run_id} (iteration {record.iteration}) is malformed: {e}") from e
    return task, solution, reward(task, solution)


def rescore_episodes(records: List[EpisodeRecord]) -> List[int]:
    """Recomputes every logged reward from the logged prompt and solution tokens."""
    return [to_probe_item(record)[2] for record in records]


def read_bok_pairs(path: PathLike) -> List[Tuple[int, float]]:
    """
    Reads `alpha score` pairs (whitespace or comma separated, `#` comments allowed).

    Raises:
        ArtifactError: If the file is unreadable or a line is malformed.
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ArtifactError(f"cannot read '{path}': {e}") from e
    pairs: List[Tuple[int, float]] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].replace(",", " ").strip()
        if not line:
            continue
        parts = line.split()
        try:
            if len(parts) != 2:
                raise ValueError("expected two fields")
            alpha, score = int(parts[0]), float(parts[1])
            if alpha not in (0, 1):
                raise ValueError("alpha must be 0 or 1")
        except ValueError as e:
            raise ArtifactError(f"{path}:{lineno}: {e}") from e
        pairs.append((alpha, score))
    if not pairs:
        raise ArtifactError(f"'{path}' holds no alpha/score pairs")
    return pairs
