"""
equiv subcommand: the Le Cam equivalence checks.

Presets:
- lemma-suite: randomized property checks, one row per property.
- carter-direction: deficiency upper bound of Bin(n, q) against the
    discretized N(sqrt(q), 1/(2n)) per n.
- transfer: exhaustive risk transfer of a small b-bit protocol.
- measures: checks on user-supplied measures (and optional kernel).
"""

from commands.helpers import CommandOutput, RowBuilder, common_options, emit, guarded, load_command_config
from services.display_utils import render_report, safe_entry
from services.errors import ConfigError, ValidationError
from services.experiment_config import EquivConfig
from services.lab.equivalence_lab import (
    FiniteMeasure,
    KernelMatrix,
    carter_direction,
    kernel_dp_holds,
    lemma_suite,
    measures_report,
    protocol_transfer,
    strictly_decreasing,
    transfer_instance,
)


def _lemma_suite(cfg: EquivConfig, rows: RowBuilder) -> str:
    checks = lemma_suite(cfg.trials, cfg.coupling_pairs, cfg.coupling_samples, cfg.seed)
    for check in checks:
        rows.add(check.name, check.holds, passed=check.passed, trials=check.trials, worst=check.worst)
    entries = [safe_entry(c.name, f"{c.passed}/{c.trials} {'pass' if c.holds else 'FAIL'}") for c in checks]
    return render_report("Lemma suite", entries)


def _carter_direction(cfg: EquivConfig, rows: RowBuilder) -> str:
    points = carter_direction(cfg.n_values, cfg.q_grid, cfg.bins)
    for p in points:
        rows.add("deficiency_upper", p.deficiency, n=p.n, worst_q=p.worst_q)
        rows.add("discretization_error", p.discretization_error, n=p.n)
        rows.add("reference_bound", p.reference_bound, n=p.n)
    decreasing = strictly_decreasing([p.deficiency for p in points])
    rows.add("strictly_decreasing", decreasing)
    entries = [safe_entry(f"n={p.n}", p.deficiency) for p in points]
    entries.append(safe_entry("strictly decreasing", decreasing))
    return render_report("Deficiency upper bound, binomial vs discretized Gaussian", entries)


def _transfer(cfg: EquivConfig, rows: RowBuilder) -> str:
    protocol, model_p, model_q, C = transfer_instance(epsilon=cfg.epsilon)
    report = protocol_transfer(protocol, model_p, model_q, C)
    rows.add("risk_gaussian", report.risk_p.risk)
    rows.add("risk_binomial", report.risk_q.risk)
    rows.add("tv_sup", report.tv_sup)
    rows.add("type_one_gap", report.type_one_gap)
    rows.add("type_two_gap", report.type_two_gap)
    rows.add("risk_gap", report.risk_gap)
    rows.add("bound", report.bound)
    rows.add("cardinality_ok", report.cardinality_ok)
    rows.add("dp_ok", report.dp_ok)
    if cfg.epsilon is not None:
        certified = all(kernel_dp_holds(K, cfg.epsilon) for K in report.transferred.kernels)
        rows.add("composed_dp_holds", certified)
    rows.add("holds", report.holds)
    entries = [
        safe_entry("risk gap", report.risk_gap),
        safe_entry("m * sup TV", report.bound),
        safe_entry("holds", report.holds),
    ]
    return render_report("Protocol risk transfer", entries)


def _measures(cfg: EquivConfig, rows: RowBuilder) -> str:
    parsed = {}
    for key, cls in (("P", FiniteMeasure), ("Q", FiniteMeasure), ("K", KernelMatrix)):
        if key not in cfg.measures:
            continue
        try:
            parsed[key] = cls.from_dict(cfg.measures[key])
        except ValidationError as e:
            raise ConfigError(f"measures.{key}", str(e)) from e
    results = measures_report(parsed["P"], parsed["Q"], parsed.get("K"))
    for name, value, holds in results:
        rows.add(name, value, holds=holds)
    return render_report("Measure checks", [safe_entry(name, value) for name, value, _ in results])


PRESETS = {
    "lemma-suite": _lemma_suite,
    "carter-direction": _carter_direction,
    "transfer": _transfer,
    "measures": _measures,
}


def run_equiv(cfg: EquivConfig) -> CommandOutput:
    rows = RowBuilder(cfg)
    report = PRESETS[cfg.preset](cfg, rows)
    return CommandOutput(rows.rows, report)


def register_commands(cli):
    """
    Register the equiv subcommand.
    """

    @cli.command("equiv")
    @common_options
    @guarded
    def equiv(config_path, out, seed, jobs):
        """Run the Le Cam equivalence checks."""
        cfg = load_command_config("equiv", config_path, out, seed, jobs)
        emit(cfg, run_equiv(cfg))
