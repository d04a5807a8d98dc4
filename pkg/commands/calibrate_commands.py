"""
calibrate subcommand: null threshold of one protocol, quantiles of its null
statistic and, when eval_reps > 0, a fresh-seed type I error check with an
exact binomial confidence interval.
"""

import math

import numpy as np
from scipy.stats import binomtest

from commands.helpers import CommandOutput, RowBuilder, common_options, emit, guarded, load_command_config
from services.cached_funs import calibrate_cached, null_statistics_cached
from services.display_utils import render_report, safe_entry
from services.experiment_config import CalibrateConfig
from services.lab.protocols import rejection_rate
from services.logging_utils import log_msg
from services.results import timed
from services.rng import derive_seed

NULL_QUANTILES = (0.5, 0.9, 0.95, 0.99)


def run_calibrate(cfg: CalibrateConfig) -> CommandOutput:
    spec = cfg.protocol.to_spec()
    q0 = spec.q0
    rows = RowBuilder(cfg)
    cal_seed = derive_seed(cfg.seed, "calibration", 0)

    with timed() as clock:
        calibrated = calibrate_cached(spec, q0, cfg.alpha, cfg.reps, cal_seed, jobs=cfg.jobs)
    stats = null_statistics_cached(calibrated, q0, cfg.reps, cal_seed, jobs=cfg.jobs)
    rows.add("threshold", calibrated.threshold, wall_time=clock["seconds"])
    for level in NULL_QUANTILES:
        rows.add("null_quantile", float(np.quantile(stats, level, method="inverted_cdf")), quantile=level)

    entries = [
        safe_entry("protocol", f"{spec.encoder} -> {spec.aggregator}"),
        safe_entry("threshold", calibrated.threshold),
    ]
    if cfg.eval_reps:
        eval_seed = derive_seed(cfg.seed, "null", 0)
        rate = rejection_rate(calibrated, q0, cfg.eval_reps, eval_seed, "null", jobs=cfg.jobs)
        rejections = int(round(rate * cfg.eval_reps))
        ci = binomtest(rejections, cfg.eval_reps, cfg.alpha).proportion_ci(0.95, method="exact")
        stderr = math.sqrt(rate * (1 - rate) / cfg.eval_reps)
        covers = bool(ci.low <= cfg.alpha <= ci.high)
        rows.add("type_one", rate, stderr)
        rows.add("type_one_ci_low", float(ci.low))
        rows.add("type_one_ci_high", float(ci.high))
        rows.add("ci_covers_alpha", covers)
        entries += [
            safe_entry("fresh type I", rate),
            safe_entry("95% CI", f"[{ci.low:.4f}, {ci.high:.4f}]"),
        ]
        log_msg(f"     [CLI] fresh type I {rate:.4f}, CI covers alpha: {covers}")

    return CommandOutput(rows.rows, render_report(f"Calibration at alpha={cfg.alpha}", entries))


def register_commands(cli):
    """
    Register the calibrate subcommand.
    """

    @cli.command("calibrate")
    @common_options
    @guarded
    def calibrate(config_path, out, seed, jobs):
        """Calibrate a protocol threshold under the null."""
        cfg = load_command_config("calibrate", config_path, out, seed, jobs)
        emit(cfg, run_calibrate(cfg))
