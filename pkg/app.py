"""
Goodness-of-fit Testing Lab Entry Point.

Builds the click command group and registers the subcommand modules.
"""

import click

from config import env, IS_DEV
from services.logging_utils import log_msg

from commands import (
    calibrate_commands,
    equiv_commands,
    noneq_commands,
    risk_commands,
    sweep_commands,
)


@click.group()
def cli():
    """Distributed goodness-of-fit testing lab."""
    log_msg(f"[APP] Running in {env} mode (IS_DEV = {IS_DEV})", level="debug")


# Register Subcommands
calibrate_commands.register_commands(cli)
risk_commands.register_commands(cli)
sweep_commands.register_commands(cli)
equiv_commands.register_commands(cli)
noneq_commands.register_commands(cli)


def main():
    cli()


if __name__ == "__main__":
    main()
