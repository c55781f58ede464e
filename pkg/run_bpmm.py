#!/usr/bin/env python3
"""
Batch front end for the Bayesian product mixture network models

Each command runs one stage in the run directory and is a no-op when that stage
already completed under the same configuration (use --force to rerun).

Usage:
    python3 run_bpmm.py --config run.json simulate
    python3 run_bpmm.py --config run.json fit --method both
    python3 run_bpmm.py --config run.json postprocess --edge-level
    python3 run_bpmm.py --config run.json evaluate
    python3 run_bpmm.py --seed 7 reproduce-tables

Exit codes: 0 success, 1 usage or configuration error, 2 an estimator stopped
at the iteration cap (its artifacts are still written).
"""

import logging
import sys
from dataclasses import replace

import click

from panel.dataset import PanelValidationError
from pipeline.artifact_store import ArtifactMismatchError
from pipeline.run_config import METHOD_GROUPS, METHODS, ConfigError, load_config
from pipeline.stage_processor import StageProcessor
from settings import settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2


def _parse_h_grid(ctx, param, value):
    if value is None:
        return None
    try:
        grid = tuple(int(h) for h in value.split(","))
    except ValueError:
        raise click.BadParameter(f"expected a comma-separated list of integers, got {value!r}")
    if not grid or min(grid) < 1:
        raise click.BadParameter("every H must be a positive integer")
    return grid


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Run configuration (JSON)")
@click.option("--output-dir", help="Run directory; overrides the configuration")
@click.option("--seed", type=click.IntRange(min=0), help="Master seed; overrides the configuration")
@click.option("--threads", type=click.IntRange(min=1), help="Worker count; does not change results")
@click.option("--force", is_flag=True, help="Rerun completed stages and accept mismatched upstream artifacts")
@click.option("--quiet", "-q", is_flag=True, help="Only log warnings and errors")
@click.option("--verbose", "-v", is_flag=True, help="Log per-iteration detail")
@click.pass_context
def cli(ctx, config_path, output_dir, seed, threads, force, quiet, verbose):
    level = logging.WARNING if quiet else logging.DEBUG if verbose else settings.log_level
    logging.basicConfig(level=level, format=settings.log_format)
    logging.getLogger().setLevel(level)

    config = load_config(config_path)
    overrides = {key: value for key, value in
                 (("output_dir", output_dir), ("seed", seed), ("threads", threads)) if value is not None}
    config = config.with_overrides(**overrides)
    logger.info(f"Run directory {config.output_dir}, seed {config.seed}, threads {config.threads}")
    ctx.obj = {"config": config, "force": force}


def _processor(ctx, **changes) -> StageProcessor:
    config = ctx.obj["config"]
    if changes:
        config = replace(config, **changes)
    return StageProcessor(config, force=ctx.obj["force"])


@cli.command()
@click.pass_context
def simulate(ctx):
    """Generate a synthetic panel with its ground truth"""
    _processor(ctx).simulate()
    return EXIT_OK


@cli.command()
@click.option("--method", type=click.Choice(list(METHODS) + list(METHOD_GROUPS)),
              help="Estimator; overrides the configuration")
@click.option("--select-h", callback=_parse_h_grid, help="Choose H from a grid, e.g. 2,3,4 (pairwise model)")
@click.pass_context
def fit(ctx, method, select_h):
    """Estimate dynamic networks from the panel"""
    config = ctx.obj["config"]
    changes = {}
    if method:
        changes["method"] = method
    if select_h:
        changes["fit"] = replace(config.fit, select_h=select_h)
    converged = _processor(ctx, **changes).fit()
    if not converged:
        logger.warning("At least one estimator stopped at the iteration cap; artifacts were written")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


@cli.command()
@click.option("--method", type=click.Choice(list(METHODS) + list(METHOD_GROUPS)))
@click.option("--edge-level", is_flag=True, help="Also write per-edge change points")
@click.pass_context
def postprocess(ctx, method, edge_level):
    """Change points, similarity matrix and subgroups from fitted networks"""
    config = ctx.obj["config"]
    changes = {"method": method} if method else {}
    if edge_level:
        changes["changepoint"] = replace(config.changepoint, edge_level=True)
    _processor(ctx, **changes).postprocess()
    return EXIT_OK


@cli.command()
@click.option("--method", type=click.Choice(list(METHODS) + list(METHOD_GROUPS)))
@click.pass_context
def evaluate(ctx, method):
    """Score estimates against the simulated truth"""
    reports = _processor(ctx, **({"method": method} if method else {})).evaluate()
    for name, report in reports.items():
        click.echo(f"[{name}]")
        click.echo(report.to_text(), nl=False)
    return EXIT_OK


@cli.command("reproduce-tables")
@click.pass_context
def reproduce_tables(ctx):
    """Run the scaled simulation protocol end to end and write the summary tables"""
    _processor(ctx).reproduce_tables()
    return EXIT_OK


def main(argv=None) -> int:
    try:
        code = cli.main(args=argv, prog_name="run_bpmm", standalone_mode=False)
    except click.exceptions.Abort:
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except (ConfigError, ArtifactMismatchError, PanelValidationError, FileNotFoundError) as e:
        logger.error(f"{e}")
        return EXIT_USAGE
    return code if isinstance(code, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
