"""
CLI commands for smooth model fitting

Provides commands for:
- Fitting a model from a CSV and a model config, writing an archive
- Predicting from an archive
- Printing summaries and writing per-term plot data
- Simulating Gu-Wahba test data and running the random effect AIC experiment
"""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import yaml

from app import setup_logging
from app.core.exceptions import OuterConvergenceError, SmoothModelError

logger = logging.getLogger(__name__)

EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2
FLOAT_FORMAT = "%.17g"


def _settings():
    from config.settings import get_config

    return get_config()


def _init_logging(verbose: bool) -> None:
    setup_logging(logging.INFO if verbose else _settings().LOG_LEVEL())


def _fail(e: Exception) -> None:
    click.echo(f"Error: {e}", err=True)
    sys.exit(EXIT_ERROR)


def _write_frame(frame, out: Optional[str]) -> None:
    if out:
        frame.to_csv(out, index=False, float_format=FLOAT_FORMAT)
        click.echo(f"✓ {len(frame)} rows written to {out}", err=True)
    else:
        click.echo(frame.to_csv(index=False, float_format=FLOAT_FORMAT), nl=False)


def format_summary(summary: Dict[str, Any]) -> str:
    """Plain text report of SmoothModel.summary()"""
    lines: List[str] = []
    lines.append("=" * 60)
    lines.append(f"Family: {summary['family']}    n = {summary['n']}")
    status = "converged" if summary["converged"] else "NOT converged"
    lines.append(f"Outer iterations: {summary['outer_iterations']} ({status})")
    lines.append("=" * 60)

    if summary["parametric"]:
        lines.append("Parametric coefficients:")
        for p in summary["parametric"]:
            lines.append(f"  {p['name']:<20} {p['estimate']:>12.5g}  se {p['se']:>10.4g}")
    if summary["smooths"]:
        lines.append("Smooth terms:")
        for s in summary["smooths"]:
            lines.append(
                f"  {s['term']:<20} edf {s['edf']:>8.3f}  lambda {s['lambda']:>10.4g}  rank {s['rank']:>3d}  (k={s['k']}, {s['basis']})"
            )
    if summary["extra_parameters"]:
        lines.append("Extra parameters:")
        for name, value in summary["extra_parameters"].items():
            lines.append(f"  {name:<20} {value:>12.5g}")

    lines.append("-" * 60)
    lines.append(f"edf: tau0 = {summary['tau0']:.4f}  tau1 = {summary['tau1']:.4f}  tau = {summary['tau']:.4f}")
    lines.append(f"AIC = {summary['aic']:.4f}  corrected AIC = {summary['aic_corrected']:.4f}")
    lines.append(f"LAML = {summary['laml']:.6f}  log likelihood = {summary['loglik']:.6f}")
    if "deviance_explained" in summary:
        lines.append(f"Deviance explained = {100.0 * summary['deviance_explained']:.2f}%")
    if "martingale_residual_sum" in summary:
        lines.append(f"Martingale residual sum = {summary['martingale_residual_sum']:.3g}")
    lines.append("=" * 60)
    return "\n".join(lines)


@click.group()
def cli() -> None:
    """Smooth models CLI - fit, predict and simulate general smooth models"""
    pass


@cli.command()
@click.option("--data", "data_path", required=True, type=click.Path(), help="CSV with a header row")
@click.option("--model", "model_path", required=True, type=click.Path(), help="Model config (JSON or YAML)")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Archive to write")
@click.option("--verbose", is_flag=True, help="Log the outer iteration trace")
def fit(data_path: str, model_path: str, out_path: str, verbose: bool) -> None:
    """
    Fit a model and write its archive

    Exits with status 2 when smoothing parameter optimization does not
    converge; the archive is still written, with its trace.
    """
    _init_logging(verbose)
    try:
        from app.core.archive import save_model
        from app.core.model import FitOptions, SmoothModel, load_model_config, read_data

        data = read_data(data_path)
        config = load_model_config(model_path)
        options = FitOptions.from_mapping(_settings().fit_defaults(), config.fit)
        model = SmoothModel(config, options)

        status = 0
        try:
            model.fit(data)
        except OuterConvergenceError as e:
            click.echo(f"Warning: {e}", err=True)
            status = EXIT_NOT_CONVERGED

        save_model(model, out_path)
        click.echo(format_summary(model.summary()))
        if verbose and model.trace is not None:
            click.echo(model.trace.to_frame().to_string(index=False))
        click.echo(f"✓ Archive written to {out_path}", err=True)
        if status:
            sys.exit(status)

    except (SmoothModelError, OSError) as e:
        _fail(e)


@cli.command()
@click.option("--archive", "archive_path", required=True, type=click.Path(), help="Archive written by fit")
@click.option("--data", "data_path", required=True, type=click.Path(), help="CSV with the model's covariates")
@click.option("--se", is_flag=True, help="Add standard errors")
@click.option("--type", "kind", type=click.Choice(["link", "response", "survival"]), default="link", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None, help="Output CSV (stdout if omitted)")
def predict(archive_path: str, data_path: str, se: bool, kind: str, out_path: Optional[str]) -> None:
    """
    Predict from an archived model
    """
    _init_logging(False)
    try:
        from app.core.archive import load_model
        from app.core.model import read_data

        model = load_model(archive_path)
        data = read_data(data_path)
        _write_frame(model.predict(data, kind=kind, se=se), out_path)

    except (SmoothModelError, OSError) as e:
        _fail(e)


@cli.command()
@click.option("--archive", "archive_path", required=True, type=click.Path(), help="Archive written by fit")
@click.option("--plot-dir", type=click.Path(), default=None, help="Write one CSV of plot data per smooth term")
@click.option("--level", type=float, default=0.95, show_default=True, help="Credible band level")
def summary(archive_path: str, plot_dir: Optional[str], level: float) -> None:
    """
    Print the summary of an archived model
    """
    _init_logging(False)
    try:
        from app.core.archive import load_model

        model = load_model(archive_path)
        click.echo(format_summary(model.summary()))

        if plot_dir:
            target = Path(plot_dir)
            target.mkdir(parents=True, exist_ok=True)
            for label, frame in model.plot_data(level).items():
                name = "".join(c if c.isalnum() or c in "._-" else "_" for c in label)
                path = target / f"{name}.csv"
                frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
                click.echo(f"✓ {label}: {path}", err=True)

    except (SmoothModelError, OSError) as e:
        _fail(e)


@cli.command()
@click.option("--scenario", type=click.Choice(["gu-wahba"]), default="gu-wahba", show_default=True)
@click.option("--family", default="gaussian", show_default=True, help="Response family")
@click.option("--n", "n", type=int, default=400, show_default=True)
@click.option("--noise", type=click.IntRange(1, 3), default=1, show_default=True, help="Noise level 1 (noisiest) to 3")
@click.option("--seed", type=int, default=None, help="Random seed (default from settings)")
@click.option("--correlated", is_flag=True, help="Correlated covariates")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Output CSV (stdout if omitted)")
def simulate(scenario: str, family: str, n: int, noise: int, seed: Optional[int], correlated: bool, out_path: Optional[str]) -> None:
    """
    Generate Gu-Wahba test data under a response family
    """
    _init_logging(False)
    try:
        from app.core.simulation import simulate as run_simulation

        seed = _settings().SEED() if seed is None else seed
        frame = run_simulation(family=family, n=n, noise=noise, seed=seed, correlated=correlated, scenario=scenario)
        _write_frame(frame, out_path)

    except (SmoothModelError, OSError) as e:
        _fail(e)


def _parse_grid(raw: str) -> List[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma separated numbers, got '{raw}'")


@cli.command("aic-experiment")
@click.option("--config", "config_path", type=click.Path(), default=None, help="YAML/JSON with n, sd, levels, k")
@click.option("--replicates", type=int, default=None, help="Replicates per effect size")
@click.option("--effect-grid", default=None, help="Comma separated random effect standard deviations")
@click.option("--seed", type=int, default=None, help="Master seed")
@click.option("--workers", type=int, default=None, help="Worker processes (default SMOOTH_THREADS)")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Output CSV (stdout if omitted)")
@click.option("--verbose", is_flag=True)
def aic_experiment(
    config_path: Optional[str],
    replicates: Optional[int],
    effect_grid: Optional[str],
    seed: Optional[int],
    workers: Optional[int],
    out_path: Optional[str],
    verbose: bool,
) -> None:
    """
    Selection frequency of a random effect under conventional, corrected and tau1 AIC
    """
    _init_logging(verbose)
    try:
        from app.core.exceptions import ConfigError
        from app.core.simulation import aic_experiment as run_experiment

        settings = _settings()
        extra: Dict[str, Any] = {}
        if config_path:
            with open(config_path, "r") as f:
                try:
                    extra = yaml.safe_load(f) or {}
                except yaml.YAMLError as e:
                    raise ConfigError(f"{config_path}: malformed experiment config ({e})")
            unknown = set(extra) - {"n", "sd", "levels", "k"}
            if unknown:
                raise ConfigError(f"unknown experiment options: {', '.join(sorted(unknown))}")

        grid = _parse_grid(effect_grid) if effect_grid else settings.get("experiment.effect_grid")
        frame = run_experiment(
            effect_grid=grid,
            replicates=replicates if replicates is not None else int(settings.get("experiment.replicates", 100)),
            seed=settings.SEED() if seed is None else seed,
            workers=settings.THREADS() if workers is None else workers,
            **extra,
        )
        _write_frame(frame, out_path)

    except (SmoothModelError, OSError) as e:
        _fail(e)


if __name__ == "__main__":
    cli()
