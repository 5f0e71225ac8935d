import logging
import random

import click
import numpy as np

import swarmflow.scenario


@click.group()
@click.option("--verbose", is_flag=True)
@click.option("--seed", type=int, default=None)
@click.pass_context
def cli(ctx: click.Context, verbose: bool, seed: int):
    fmt = "[%(asctime)s] [%(levelname)s] %(message)s (%(funcName)s@%(filename)s:%(lineno)s)"
    if verbose:
        logging.basicConfig(level=logging.DEBUG, format=fmt)
    else:
        logging.basicConfig(level=logging.INFO, format=fmt)

    if seed is not None:
        random.seed(seed)
        np.random.seed(seed)
    ctx.obj = dict(seed=seed)


cli.add_command(swarmflow.scenario.run_command)
cli.add_command(swarmflow.scenario.presets_command)
cli.add_command(swarmflow.scenario.audit_command)
cli.add_command(swarmflow.scenario.compare_command)
cli.add_command(swarmflow.scenario.ledger_command)


if __name__ == "__main__":
    cli()
