"""
Shared pieces of the subcommands: the common option set, config loading,
result emission and the one place where lab exceptions become exit codes.
"""

import functools
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional

import click

from services.errors import LabError
from services.experiment_config import ExperimentConfig, load_experiment_config
from services.logging_utils import log_msg
from services.results import ResultRow, result_metadata, write_result_csv

MAX_U64 = 2 ** 64 - 1


@dataclass
class CommandOutput:
    """Rows for the CSV and the human-readable report."""
    rows: List[ResultRow] = field(default_factory=list)
    report: str = ""


class RowBuilder:
    """Builds ResultRows that all carry the same flattened config."""

    def __init__(self, cfg: ExperimentConfig):
        self.config = cfg.flatten()
        self.rows: List[ResultRow] = []

    def add(self, metric: str, value: Any, mc_stderr: Optional[float] = None,
            wall_time: Optional[float] = None, **context: Any) -> None:
        self.rows.append(ResultRow(self.config, metric, value, mc_stderr, wall_time, context))


def common_options(fn: Callable) -> Callable:
    """--config, --out, --seed and --jobs, shared by every subcommand."""
    options = [
        click.option("--config", "config_path", required=True,
                     type=click.Path(dir_okay=False), help="JSON experiment config."),
        click.option("--out", default=None, type=click.Path(dir_okay=False),
                     help="CSV output path; the CSV goes to stdout when omitted."),
        click.option("--seed", default=None, type=click.IntRange(0, MAX_U64),
                     help="Experiment seed (overrides the config)."),
        click.option("--jobs", default=None, type=click.IntRange(min=1),
                     help="Worker processes (results do not depend on it)."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def guarded(fn: Callable) -> Callable:
    """Maps LabError subclasses to their exit codes."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except LabError as e:
            log_msg(f"[CLI] {type(e).__name__}: {e}", level="error")
            click.echo(f"Error: {e}", err=True)
            click.get_current_context().exit(e.exit_code)
    return wrapper


def load_command_config(command: str, config_path: str, out: Optional[str],
                        seed: Optional[int], jobs: Optional[int]) -> ExperimentConfig:
    log_msg(f"[CLI] {command}: loading {config_path}")
    return load_experiment_config(config_path, command, {"out": out, "seed": seed, "jobs": jobs})


def emit(cfg: ExperimentConfig, output: CommandOutput) -> None:
    """
    Writes the CSV (to cfg.out, or stdout) and the report (stdout when the
    CSV goes to a file, stderr otherwise).
    """
    metadata = result_metadata(cfg.command, cfg.config_hash(), cfg.seed)
    text = write_result_csv(output.rows, cfg.out, metadata)
    if cfg.out:
        click.echo(output.report)
    else:
        click.echo(output.report, err=True)
        click.echo(text, nl=False)
