"""
risk subcommand: Monte Carlo panel risk of one calibrated protocol at one
separation.
"""

import math

from commands.helpers import CommandOutput, RowBuilder, common_options, emit, guarded, load_command_config
from services.cached_funs import calibrate_cached
from services.display_utils import render_report, safe_entry
from services.experiment_config import RiskConfig
from services.lab.rates import dp_regime_ok
from services.lab.risk_lab import SweepSettings, panel_risk, protocol_rate
from services.logging_utils import log_msg
from services.results import timed
from services.rng import derive_seed


def run_risk(cfg: RiskConfig) -> CommandOutput:
    spec = cfg.protocol.to_spec()
    c = spec.constraint
    regime_warning = c.kind == "dp" and not dp_regime_ok(c.epsilon, spec.n)
    log_msg(f"[CLI] epsilon={c.epsilon} is outside (n^-1/4, 1] for n={spec.n}",
            level="warning", cond=regime_warning)

    settings = SweepSettings(
        alpha=cfg.alpha,
        reps_calibration=cfg.reps_calibration,
        reps_eval=cfg.reps_eval,
        panel_construction=cfg.panel.construction,
        panel_size=cfg.panel.size,
        R=cfg.panel.R,
        seed=cfg.seed,
        jobs=cfg.jobs,
    )
    calibrated = calibrate_cached(spec, spec.q0, cfg.alpha, cfg.reps_calibration,
                                  derive_seed(cfg.seed, "calibration", 0), jobs=cfg.jobs)
    with timed() as clock:
        est = panel_risk(calibrated, cfg.panel.rho, settings)

    rows = RowBuilder(cfg)
    flag = int(regime_warning)

    def binomial_se(p: float) -> float:
        return math.sqrt(p * (1 - p) / est.reps)

    rows.add("risk", est.risk, est.mc_stderr, clock["seconds"], regime_warning=flag, label=est.label)
    rows.add("type_one", est.type_one, binomial_se(est.type_one), regime_warning=flag)
    rows.add("worst_type_two", est.worst_type_two, binomial_se(est.worst_type_two),
             regime_warning=flag, member=est.member_index)
    for i, t2 in enumerate(est.type_two):
        rows.add("type_two", t2, binomial_se(t2), regime_warning=flag, member=i)
    rows.add("threshold", calibrated.threshold, regime_warning=flag)
    rows.add("predicted_rho", math.sqrt(protocol_rate(calibrated)), regime_warning=flag)

    entries = [
        safe_entry(est.label, est.risk),
        safe_entry("type I", est.type_one),
        safe_entry("worst type II", est.worst_type_two),
        safe_entry("MC stderr", est.mc_stderr),
    ]
    footer = "warning: epsilon outside (n^-1/4, 1]" if regime_warning else None
    return CommandOutput(rows.rows, render_report(f"Risk at rho={cfg.panel.rho}", entries, footer))


def register_commands(cli):
    """
    Register the risk subcommand.
    """

    @cli.command("risk")
    @common_options
    @guarded
    def risk(config_path, out, seed, jobs):
        """Estimate the panel risk of a protocol at one separation."""
        cfg = load_command_config("risk", config_path, out, seed, jobs)
        emit(cfg, run_risk(cfg))
