"""
noneq subcommand: raw-forwarding multinomial risk against the implemented
b-bit Gaussian protocols with b = ceil(n log2 d) and m b <= d.
"""

from commands.helpers import CommandOutput, RowBuilder, common_options, emit, guarded, load_command_config
from services.display_utils import render_report, safe_entry
from services.experiment_config import NoneqConfig
from services.lab.risk_lab import nonequivalence_demo

FAMILY_NOTE = ("The Gaussian-side lower bound covers the implemented b-bit protocol "
               "family only, not every b-bit protocol.")


def run_noneq(cfg: NoneqConfig) -> CommandOutput:
    report = nonequivalence_demo(cfg.d, cfg.n, cfg.m, cfg.settings(), strict=cfg.strict,
                                 sandwich_weight=cfg.sandwich_weight, R=cfg.R)
    rows = RowBuilder(cfg)
    for name, ok in report.conditions.items():
        rows.add("condition", ok, condition=name)
    rows.add("b", report.b)
    rows.add("m_times_b", report.m * report.b)
    rows.add("d", report.d)
    rows.add("rho", report.rho)
    rows.add("rho_lo", report.rho_lo)
    rows.add("rho_hi", report.rho_hi)
    raw = report.multinomial_risk
    rows.add("risk", raw.risk, raw.mc_stderr, protocol="raw_forwarding", model="multinomial")
    for name, est in report.gaussian_risks.items():
        rows.add("risk", est.risk, est.mc_stderr, protocol=name, model="gaussian")
    rows.add("best_gaussian_risk", report.best_gaussian_risk)
    rows.add("separated", report.separated)

    entries = [
        safe_entry("b = ceil(n log2 d)", str(report.b)),
        safe_entry("m * b vs d", f"{report.m * report.b} vs {report.d}"),
        safe_entry("rho", report.rho),
        safe_entry("multinomial (raw forwarding)", raw.risk),
    ]
    entries += [safe_entry(f"gaussian {name}", est.risk) for name, est in report.gaussian_risks.items()]
    entries += [safe_entry(f"condition {k}", "holds" if v else "fails") for k, v in report.conditions.items()]
    return CommandOutput(rows.rows, render_report("Non-equivalence demo", entries, FAMILY_NOTE))


def register_commands(cli):
    """
    Register the noneq subcommand.
    """

    @cli.command("noneq")
    @common_options
    @guarded
    def noneq(config_path, out, seed, jobs):
        """Multinomial vs Gaussian separation under a bit budget."""
        cfg = load_command_config("noneq", config_path, out, seed, jobs)
        emit(cfg, run_noneq(cfg))
