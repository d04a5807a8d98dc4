"""
sweep subcommand: rho_star over a one-parameter grid and the fitted
scaling exponent.

Modes:
- rate: log-log slope of rho_star^2 on the swept parameter.
- elbow: b sweep with a hinge fit around b = d.
- dp_phase: epsilon sweep over several DP encoders, lower envelope and
    two-branch fit.
- synthetic: injected rho_star^2 = constant * value^exponent, no simulation.
"""

from config import EXPONENT_TOLERANCES
from commands.helpers import CommandOutput, RowBuilder, common_options, emit, guarded, load_command_config
from services.display_utils import render_report, safe_entry
from services.experiment_config import SweepConfig
from services.lab.risk_lab import (
    SweepResult,
    detect_elbow,
    dp_phase_sweep,
    fit_exponent,
    predicted_exponent,
    run_sweep,
    synthetic_sweep,
)
from services.results import summarize_trace


def _point_rows(rows: RowBuilder, sweep: SweepResult, **context) -> None:
    frame = sweep.to_frame()
    trace = sweep.trace_frame()
    evaluations = {}
    if not trace.empty:
        summary = summarize_trace(trace)
        evaluations = dict(zip(summary["point"].astype(int), summary["evaluations"].astype(int)))
    for rec in frame.to_dict(orient="records"):
        point = dict(context, point=int(rec["point"]), **{sweep.param: rec[sweep.param]})
        rows.add("rho_star", rec["rho_star"], **point)
        rows.add("rho_star_sq", rec["rho_star_sq"], **point)
        rows.add("predicted_rho_sq", rec["predicted_rho_sq"], **point)
        rows.add("risk_stderr", rec["risk_stderr"], **point)
        if evaluations:
            rows.add("evaluations", evaluations.get(int(rec["point"]), 0), **point)


def run_sweep_command(cfg: SweepConfig) -> CommandOutput:
    rows = RowBuilder(cfg)
    entries = []

    if cfg.mode == "dp_phase":
        p = cfg.protocol
        result = dp_phase_sweep(p.m, p.n, p.d, cfg.values, p.randomness, cfg.settings(),
                                model=p.model, delta=p.delta, encoders=cfg.encoders)
        for encoder, sweep in result.sweeps.items():
            _point_rows(rows, sweep, encoder=encoder)
        for i, (eps, env) in enumerate(zip(result.epsilons, result.envelope)):
            rows.add("envelope_rho_star", env, point=i, epsilon=eps)
        for encoder, failed in result.missing.items():
            for eps in failed:
                rows.add("missing_point", True, encoder=encoder, epsilon=eps)
        fit = result.fit
        rows.add("low_epsilon_slope", fit.slope_below)
        rows.add("high_epsilon_slope", fit.slope_above)
        rows.add("branch_boundary", fit.elbow)
        rows.add("predicted_boundary", result.predicted_boundary)
        rows.add("boundary_ratio", fit.elbow / result.predicted_boundary)
        entries = [
            safe_entry("low-epsilon slope", fit.slope_below),
            safe_entry("high-epsilon slope", fit.slope_above),
            safe_entry("branch boundary", fit.elbow),
            safe_entry("predicted boundary", result.predicted_boundary),
            safe_entry("boundary ratio", fit.elbow / result.predicted_boundary),
        ]
        entries += [safe_entry(f"{enc} missing", ", ".join(f"{e:g}" for e in failed))
                    for enc, failed in result.missing.items() if failed]
        return CommandOutput(rows.rows, render_report("DP phase sweep", entries))

    if cfg.mode == "synthetic":
        sweep = synthetic_sweep(cfg.param, cfg.values, cfg.synthetic_constant, cfg.synthetic_exponent)
    else:
        sweep = run_sweep(cfg.protocol.to_spec(), cfg.param, cfg.values, cfg.settings())
    _point_rows(rows, sweep)

    if cfg.mode == "elbow":
        hinge = detect_elbow(sweep, cfg.protocol.d)
        rows.add("slope_below", hinge.slope_below)
        rows.add("slope_above", hinge.slope_above)
        rows.add("elbow", hinge.elbow)
        entries = [
            safe_entry("slope below elbow", hinge.slope_below),
            safe_entry("slope above elbow", hinge.slope_above),
            safe_entry("elbow", hinge.elbow),
        ]
    else:
        fit = fit_exponent(sweep)
        predicted = predicted_exponent(sweep)
        kind = cfg.protocol.constraint if cfg.protocol is not None else "none"
        within = abs(fit.exponent - predicted) <= EXPONENT_TOLERANCES[kind]
        rows.add("exponent", fit.exponent, fit.stderr)
        rows.add("intercept", fit.intercept)
        rows.add("r_squared", fit.r_squared)
        rows.add("predicted_exponent", predicted)
        rows.add("exponent_within_tolerance", within)
        entries = [
            safe_entry(f"{cfg.param}-exponent of rho_star^2", fit.exponent),
            safe_entry("stderr", fit.stderr),
            safe_entry("r squared", fit.r_squared),
            safe_entry("predicted exponent", predicted),
            safe_entry(f"within {EXPONENT_TOLERANCES[kind]}", within),
        ]
    return CommandOutput(rows.rows, render_report(f"Sweep over {cfg.param} ({cfg.mode})", entries))


def register_commands(cli):
    """
    Register the sweep subcommand.
    """

    @cli.command("sweep")
    @common_options
    @guarded
    def sweep(config_path, out, seed, jobs):
        """Estimate rho_star over a parameter grid and fit its scaling."""
        cfg = load_command_config("sweep", config_path, out, seed, jobs)
        emit(cfg, run_sweep_command(cfg))
