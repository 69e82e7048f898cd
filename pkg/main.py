import logging
from dataclasses import replace
from functools import wraps
from pathlib import Path
from typing import Callable, Optional, ParamSpec, TypeVar

import typer

from analysis import criterion_reports, evaluate, stability_scan
from common import ConfigurationError, NumericalFault, SynthesisError, get_input
from config import Command, ExperimentSpec, parse_config, write_config
from model import Variant
from report import (
    INTEGRAL_HEADERS,
    STABILITY_HEADERS,
    TRANSIENT_HEADERS,
    emit_map,
    emit_normalized,
    emit_summary,
    emit_trace,
    format_table,
    hull_document,
    integral_rows,
    metrics_document,
    stability_rows,
    transient_rows,
)
from simengine import run, run_pair
from synthesis import Profile

app = typer.Typer()
logger = logging.getLogger(__name__)

P = ParamSpec("P")
T = TypeVar("T")

ConfigOption = typer.Option(None, "--config", help="Experiment file.")
SeedOption = typer.Option(None, "--seed", help="Root seed of every random stream.")
OutOption = typer.Option(None, "--out", help="Output directory.")
VariantOption = typer.Option(None, "--variant", help="Model variant.")
RhoOption = typer.Option(None, "--rho", help="Update ratio of the filter corrections.")
ProfileOption = typer.Option(None, "--profile", help="Tuning profile.")
SamplesOption = typer.Option(None, "--samples", help="Monte Carlo samples per variant.")
VerboseOption = typer.Option(0, "--verbose", "-v", count=True, help="-v for progress, -vv for debug.")


def exit_codes(fn: Callable[P, T]) -> Callable[P, T]:
    """0 ok, 1 bad configuration, 2 numerical or synthesis failure, 3 I/O error."""

    @wraps(fn)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> T:
        try:
            return fn(*args, **kwargs)
        except ConfigurationError as e:
            typer.secho(f"configuration error: {e}", err=True, fg=typer.colors.RED)
            raise typer.Exit(1)
        except (NumericalFault, SynthesisError) as e:
            typer.secho(f"numerical failure: {e}", err=True, fg=typer.colors.RED)
            raise typer.Exit(2)
        except OSError as e:
            typer.secho(f"i/o error: {e}", err=True, fg=typer.colors.RED)
            raise typer.Exit(3)

    return wrapper


def load(
    command: Command,
    config: Optional[Path],
    verbose: int,
    seed: Optional[int] = None,
    out: Optional[Path] = None,
    variant: Optional[Variant] = None,
    rho: Optional[float] = None,
    profile: Optional[Profile] = None,
    samples: Optional[int] = None,
) -> ExperimentSpec:
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(verbose, 2)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    flags = {
        "experiment.seed": seed,
        "experiment.out": out,
        "sim.variant": variant.value if variant else None,
        "filter.rho": rho,
        "weights.profile": profile.value if profile else None,
        "scan.samples": samples,
    }
    if config is not None and not config.exists() and get_input(config.name).exists():
        config = get_input(config.name)
    overrides = {key: str(value) for key, value in flags.items() if value is not None}
    spec = replace(parse_config(config, overrides), command=command)
    write_config(spec, _out(spec) / "config.cfg")
    return spec


def _out(spec: ExperimentSpec) -> Path:
    spec.out.mkdir(parents=True, exist_ok=True)
    return spec.out


@app.command()
@exit_codes
def simulate(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    variant: Optional[Variant] = VariantOption,
    rho: Optional[float] = RhoOption,
    profile: Optional[Profile] = ProfileOption,
    verbose: int = VerboseOption,
):
    """Run one closed-loop simulation and write its trace."""
    spec = load(Command.SIMULATE, config, verbose, seed, out, variant, rho, profile)
    trace = run(spec.scenario)
    emit_trace(trace, _out(spec) / "trace.csv")

    report = evaluate(trace, spec.scenario.band)
    table = "\n\n".join(
        [
            format_table(TRANSIENT_HEADERS, transient_rows([], report)),
            format_table(INTEGRAL_HEADERS, integral_rows([], report)),
        ]
    )
    emit_summary({"command": "simulate", "metrics": metrics_document(report)}, table, spec.out)
    typer.echo(table)
    typer.echo(f"status: {trace.status.value}")


@app.command("sweep-rho")
@exit_codes
def sweep_rho(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    variant: Optional[Variant] = VariantOption,
    profile: Optional[Profile] = ProfileOption,
    verbose: int = VerboseOption,
):
    """Transient response over the configured update ratios."""
    spec = load(Command.SWEEP_RHO, config, verbose, seed, out, variant, None, profile)
    documents, rows = [], []
    for rho in spec.rho_list:
        trace = run(replace(spec.scenario, rho=rho))
        emit_trace(trace, _out(spec) / f"trace_rho{rho}.csv")
        report = evaluate(trace, spec.scenario.band)
        documents.append({"rho": rho, "status": trace.status.value, **metrics_document(report)})
        rows.extend(transient_rows([rho], report))

    table = format_table(["rho", *TRANSIENT_HEADERS], rows)
    emit_summary({"command": "sweep-rho", "runs": documents}, table, spec.out)
    typer.echo(table)


@app.command()
@exit_codes
def compare(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    profile: Optional[Profile] = ProfileOption,
    verbose: int = VerboseOption,
):
    """Matched-seed IPoC and A-IPoC runs over the configured update ratios."""
    spec = load(Command.COMPARE, config, verbose, seed, out, None, None, profile)
    documents, rows, traces = [], [], {}
    for rho in spec.rho_list:
        for trace in run_pair(replace(spec.scenario, rho=rho)):
            name = trace.variant.value
            traces[f"{name}_rho{rho}"] = trace
            report = evaluate(trace, spec.scenario.band)
            documents.append({"rho": rho, "variant": name, **metrics_document(report)})
            rows.extend(integral_rows([rho, name], report))

    emit_normalized(traces, spec.out / "normalized.csv")
    table = format_table(["rho", "variant", *INTEGRAL_HEADERS], rows)
    emit_summary({"command": "compare", "runs": documents}, table, spec.out)
    typer.echo(table)


@app.command()
@exit_codes
def profiles(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    variant: Optional[Variant] = VariantOption,
    rho: Optional[float] = RhoOption,
    verbose: int = VerboseOption,
):
    """Transient response under each tuning profile."""
    spec = load(Command.PROFILES, config, verbose, seed, out, variant, rho)
    documents, rows = [], []
    for profile in Profile:
        scenario = replace(spec.scenario, profile=profile, q_scale=None, r_scale=None)
        report = evaluate(run(scenario), scenario.band)
        documents.append({"profile": profile.value, **metrics_document(report)})
        rows.extend(transient_rows([profile.value], report))

    table = format_table(["profile", *TRANSIENT_HEADERS], rows)
    emit_summary({"command": "profiles", "runs": documents}, table, spec.out)
    typer.echo(table)


@app.command("stability-map")
@exit_codes
def stability_map(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    rho: Optional[float] = RhoOption,
    profile: Optional[Profile] = ProfileOption,
    samples: Optional[int] = SamplesOption,
    verbose: int = VerboseOption,
):
    """Monte Carlo stability regions of both variants over the initial velocities."""
    spec = load(Command.STABILITY_MAP, config, verbose, seed, out, None, rho, profile, samples)
    scan = spec.scan
    reports = {}
    for variant in Variant:
        smap = stability_scan(
            spec.scenario.with_variant(variant),
            scan.samples,
            scan.resolution,
            spec.scenario.seed,
            scan.thresholds,
            scan.workers,
        )
        emit_map(smap, spec.out / f"map_{variant.value}.csv")
        reports[variant.value] = criterion_reports(smap, scan.radius)

    document = {
        "command": "stability-map",
        "samples": scan.samples,
        "variants": {
            variant: {name: hull_document(hull) for name, hull in per.items()}
            for variant, per in reports.items()
        },
    }
    table = format_table(STABILITY_HEADERS, stability_rows(reports, Variant.IPOC.value))
    emit_summary(document, table, spec.out)
    typer.echo(table)


if __name__ == "__main__":
    app()
