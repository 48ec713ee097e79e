"""Command-line driver: gen-data, prepare, run, report."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .config import ExperimentConfig
from .errors import FedAbcError
from .pipeline import (
    REPORT_JSON,
    aggregate_reports,
    generate_data,
    prepare_data,
    run_experiment,
)

logger = logging.getLogger(__name__)


def _load_config(config_path: str | None, seed: int | None, transport: str | None,
                 listen: str | None) -> ExperimentConfig:
    if config_path:
        config = ExperimentConfig.load(config_path)
    else:
        config = ExperimentConfig().validate()
    if seed is not None:
        config.seed = seed
    if transport is not None:
        config.federation.transport = transport
    if listen is not None:
        config.federation.listen = listen
    return config.validate()


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable info logging.")
def main(verbose: bool):
    """Federated likelihood-free mixture inference and oversampling."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


config_option = click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                             help="JSON experiment config; defaults apply when omitted.")
seed_option = click.option("--seed", type=int, default=None, help="Override the master seed.")
out_dir_option = click.option("--out-dir", type=click.Path(), default="runs/default",
                              show_default=True, help="Artifact directory.")


@main.command("gen-data")
@config_option
@seed_option
@out_dir_option
def cmd_gen_data(config_path, seed, out_dir):
    """Synthesize a dataset with the configured site profile."""
    try:
        config = _load_config(config_path, seed, None, None)
        path = generate_data(config, Path(out_dir))
    except FedAbcError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {path}")


@main.command("prepare")
@config_option
@seed_option
@out_dir_option
def cmd_prepare(config_path, seed, out_dir):
    """Filter, partition into sites, split, and standardize."""
    try:
        config = _load_config(config_path, seed, None, None)
        path = prepare_data(config, Path(out_dir))
    except (FedAbcError, FileNotFoundError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {path}")


@main.command("run")
@config_option
@seed_option
@out_dir_option
@click.option("--transport", type=click.Choice(["inproc", "tcp"]), default=None,
              help="Override the federation transport.")
@click.option("--listen", type=str, default=None,
              help="host:port for the tcp transport (port 0 picks one).")
def cmd_run(config_path, seed, out_dir, transport, listen):
    """Train sites, run federated inference, oversample, and evaluate.

    Exits 0 when at least one parameter set was accepted, 2 when the trial
    budget ran out with none.
    """
    try:
        config = _load_config(config_path, seed, transport, listen)
        artifacts = run_experiment(config, Path(out_dir))
    except (FedAbcError, FileNotFoundError) as exc:
        raise click.ClickException(str(exc)) from exc
    accepted = len(artifacts.result.accepted)
    click.echo(
        f"accepted {accepted} parameter sets in {artifacts.result.trials} trials "
        f"(epsilon {artifacts.result.epsilon:.6g})"
    )
    click.echo(f"report written under {out_dir}")
    if accepted == 0:
        click.echo("no acceptances: partial result", err=True)
        sys.exit(2)


@main.command("report")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Also write the aggregate as JSON.")
def cmd_report(run_dirs, out_path):
    """Aggregate report.json files across runs: mean and sd per cell."""
    paths = []
    for run_dir in run_dirs:
        p = Path(run_dir)
        paths.append(p if p.is_file() else p / REPORT_JSON)
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise click.ClickException(f"missing reports: {missing}")
    try:
        text, aggregate, warnings = aggregate_reports(paths)
    except (FedAbcError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    for warning in warnings:
        click.echo(f"warning: {warning}", err=True)
    click.echo(text, nl=False)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(aggregate, fh, indent=2, sort_keys=True)
            fh.write("\n")


if __name__ == "__main__":
    main()
