# src/flow_spectral_chaos/cli.py
import json
import logging
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from enum import Enum
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import typer
from rich.console import Console
from rich.table import Table

from .config import RunConfig, dump_config, load_config, load_settings
from .errors import ConfigError, InvalidParametersError, NumericalError
from .fsc import FscResult, run_fsc
from .oracle import ErrorReport, error_metrics, reference_series
from .plotting import plot_local_error, plot_moment, plot_sweep
from .problems import ProblemSpec
from .quadrature import NodeKind
from .spectral import CSV_FLOAT, MomentSeries

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


# Configure logging
def setup_logging():
    settings = load_settings()
    os.makedirs(settings.log_dir, exist_ok=True)

    logger_instance = logging.getLogger("flow_spectral_chaos")
    logger_instance.setLevel(getattr(logging, settings.log_level, logging.INFO))

    # Prevent duplicate handlers if called multiple times (e.g. in tests or reloads)
    if logger_instance.hasHandlers():
        logger_instance.handlers.clear()

    file_handler = RotatingFileHandler(
        f"{settings.log_dir}/fsc.log",
        maxBytes=5 * 1024 * 1024,
        backupCount=3,
        encoding='utf-8'
    )
    file_handler.setFormatter(logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    ))

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(logging.Formatter(
        '%(levelname)s: %(message)s'
    ))

    logger_instance.addHandler(file_handler)
    logger_instance.addHandler(console_handler)
    return logger_instance


logger = setup_logging()

app = typer.Typer(help="Flow-driven spectral chaos: moments of ODEs with random inputs.")
console = Console()


class SweepAxis(str, Enum):
    P = "P"
    DT = "dt"
    Q = "Q"
    SEED = "seed"


@dataclass
class RunOutcome:
    problem: ProblemSpec
    result: FscResult
    reference: MomentSeries
    report: ErrorReport
    elapsed: float


def _exit_code(e: Exception) -> int:
    if isinstance(e, ConfigError):
        return EXIT_CONFIG
    if isinstance(e, NumericalError):
        return EXIT_NUMERICAL
    return 1


def compute_reference(cfg: RunConfig, problem: ProblemSpec) -> MomentSeries:
    kind = cfg.reference
    logger.info(f"{problem.name}: computing {kind.value} reference")
    return reference_series(
        problem, cfg.fsc.dt, cfg.fsc.T,
        realizations=cfg.oracle.realizations,
        seed=cfg.oracle_seed,
        dense_points=cfg.oracle.dense_points,
        kind=kind,
    )


def execute(cfg: RunConfig, reference: Optional[MomentSeries] = None) -> RunOutcome:
    """One FSC simulation plus its error report against the reference."""
    problem = cfg.validate()
    nodes = cfg.quadrature.build(problem.measure, cfg.seed)
    started = time.perf_counter()
    result = run_fsc(
        problem.ode, cfg.fsc, nodes, problem.measure,
        [(r.name, r.component) for r in problem.responses],
        tensor_rhs=problem.tensor_rhs,
    )
    elapsed = time.perf_counter() - started
    if reference is None:
        reference = compute_reference(cfg, problem)
    report = error_metrics(result.series[problem.response.name], reference, cfg.reference)
    return RunOutcome(problem, result, reference, report, elapsed)


def write_outputs(out_dir: Path, cfg: RunConfig, outcome: RunOutcome) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    problem = outcome.problem
    primary = problem.response.name
    written = []

    moments = out_dir / "moments.csv"
    outcome.result.series[primary].to_csv(moments)
    written.append(moments)
    for response in problem.responses[1:]:
        extra = out_dir / f"moments_{response.name}.csv"
        outcome.result.series[response.name].to_csv(extra)
        written.append(extra)
    errors = out_dir / "errors.csv"
    outcome.report.to_csv(errors)
    written.append(errors)

    summary = {
        "problem": problem.name,
        "response": primary,
        "seed": cfg.seed,
        "quadrature": cfg.quadrature.spell(),
        **outcome.report.summary(),
        "diagnostics": asdict(outcome.result.diagnostics),
        "wall_clock_s": outcome.elapsed,
    }
    summary_path = out_dir / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
    written.append(summary_path)

    if cfg.output.plots:
        series = outcome.result.series[primary]
        written.append(plot_moment(out_dir, "mean", series, outcome.reference))
        written.append(plot_moment(out_dir, "variance", series, outcome.reference))
        written.append(plot_local_error(out_dir, outcome.report, title=f"{problem.name}: local error"))
    return written


def _resolve_out(out: Optional[Path], cfg: RunConfig, name: str) -> Path:
    if out is not None:
        return out
    if cfg.output.directory:
        return Path(cfg.output.directory)
    return Path(load_settings().output_dir) / name


def _load(config: Path, seed: Optional[int], full_scale: bool) -> RunConfig:
    cfg = load_config(config, full_scale=full_scale)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg


@app.command()
def run(
    config: Path = typer.Argument(..., help="Run configuration file (INI sections [problem], [fsc], ...)."),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory; overrides [output] directory."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed for Monte Carlo nodes and references."),
    full_scale: bool = typer.Option(False, "--full-scale", help="Long-horizon defaults: T=150 s, 10^6 realizations."),
    print_config: bool = typer.Option(False, "--print-config", help="Print the resolved configuration and exit."),
    dry_run: bool = typer.Option(False, "--dry-run", help="Validate the configuration only."),
):
    """Runs one FSC simulation and writes moments, errors, a summary and plots."""
    try:
        cfg = _load(config, seed, full_scale)
        if print_config:
            typer.echo(dump_config(cfg))
            return
        problem = cfg.validate()
        if dry_run:
            logger.info(f"{config}: valid ({problem.name}, P={cfg.fsc.P}, dt={cfg.fsc.dt}, T={cfg.fsc.T})")
            return
        outcome = execute(cfg)
        out_dir = _resolve_out(out, cfg, problem.name)
        written = write_outputs(out_dir, cfg, outcome)
        logger.info(
            f"{problem.name}: global error mean={outcome.report.global_mean:.3e} "
            f"var={outcome.report.global_var:.3e}; wrote {len(written)} files to {out_dir}"
        )
    except Exception as e:
        logger.error(f"Run of {config} failed: {str(e)}")
        logger.error(traceback.format_exc())
        raise typer.Exit(code=_exit_code(e))


# --- sweep ---

def apply_axis(cfg: RunConfig, axis: SweepAxis, value: float) -> RunConfig:
    if axis is SweepAxis.P:
        return replace(cfg, fsc=replace(cfg.fsc, P=int(value)))
    if axis is SweepAxis.DT:
        return replace(cfg, fsc=replace(cfg.fsc, dt=float(value)))
    if axis is SweepAxis.Q:
        if cfg.quadrature.kind is NodeKind.MONTE_CARLO:
            return replace(cfg, quadrature=replace(cfg.quadrature, q=int(value)))
        return replace(cfg, quadrature=replace(cfg.quadrature, points_per_dim=(int(value),)))
    return replace(cfg, quadrature=replace(cfg.quadrature, seed=int(value)))


def parse_values(axis: SweepAxis, text: str) -> List[float]:
    values = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            number = float(item)
        except ValueError:
            raise InvalidParametersError(f"Sweep value '{item}' is not a number") from None
        if axis is not SweepAxis.DT and number != int(number):
            raise InvalidParametersError(f"Sweep over {axis.value} needs integers, got '{item}'")
        values.append(number)
    if not values:
        raise InvalidParametersError("--values is empty")
    return values


def sweep_point(cfg: RunConfig, reference: Optional[MomentSeries]) -> Tuple[float, float, float, str]:
    """(global mean error, global variance error, wall-clock, failure) for one point."""
    started = time.perf_counter()
    try:
        outcome = execute(cfg, reference)
        return outcome.report.global_mean, outcome.report.global_var, time.perf_counter() - started, ""
    except Exception as e:
        logger.warning(f"Sweep point failed: {str(e)}")
        return math.nan, math.nan, time.perf_counter() - started, str(e)


def _references(points: List[RunConfig]) -> Dict[float, Optional[MomentSeries]]:
    # One reference per distinct dt; other axes leave the reference unchanged.
    refs: Dict[float, Optional[MomentSeries]] = {}
    for cfg in points:
        if cfg.fsc.dt in refs:
            continue
        try:
            refs[cfg.fsc.dt] = compute_reference(cfg, cfg.validate())
        except Exception as e:
            logger.warning(f"No reference at dt={cfg.fsc.dt}: {str(e)}")
            refs[cfg.fsc.dt] = None
    return refs


def write_sweep(out_dir: Path, axis: SweepAxis, values: List[float], rows: List[Tuple[float, float, float, str]],
                title: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", encoding="utf-8", newline="") as f:
        f.write(f"{axis.value},global_mean,global_var\n")
        for value, (gm, gv, _, _) in zip(values, rows):
            f.write(f"{format(value, CSV_FLOAT)},{format(gm, CSV_FLOAT)},{format(gv, CSV_FLOAT)}\n")
    records = [
        {axis.value: value, "global_mean": gm, "global_var": gv, "wall_clock_s": wall, "error": err or None}
        for value, (gm, gv, wall, err) in zip(values, rows)
    ]
    with open(out_dir / "sweep.json", "w", encoding="utf-8") as f:
        json.dump(records, f, indent=2)
    plot_sweep(out_dir, axis.value, values, [r[0] for r in rows], [r[1] for r in rows], title=title)


@app.command()
def sweep(
    config: Path = typer.Argument(..., help="Base run configuration file."),
    axis: SweepAxis = typer.Option(..., "--axis", help="Parameter to vary."),
    values: str = typer.Option(..., "--values", help="Comma-separated values, e.g. 3,4,5,6."),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed for Monte Carlo nodes and references."),
    full_scale: bool = typer.Option(False, "--full-scale", help="Long-horizon defaults: T=150 s, 10^6 realizations."),
    workers: int = typer.Option(1, "--workers", help="Worker processes for the sweep points."),
):
    """Global errors as one parameter varies; failed points are kept as NaN rows."""
    try:
        base = _load(config, seed, full_scale)
        problem = base.validate()
        grid = parse_values(axis, values)
        points = [apply_axis(base, axis, v) for v in grid]
        refs = _references(points)
        jobs = [(cfg, refs.get(cfg.fsc.dt)) for cfg in points]
        logger.info(f"{problem.name}: sweeping {axis.value} over {grid} with {workers} worker(s)")
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(sweep_point, *zip(*jobs)))
        else:
            rows = [sweep_point(cfg, ref) for cfg, ref in jobs]

        out_dir = _resolve_out(out, base, f"{problem.name}-sweep-{axis.value}")
        write_sweep(out_dir, axis, grid, rows, title=f"{problem.name}: {axis.value} sweep")

        table = Table(title=f"{problem.name} ({base.reference.value} reference)")
        table.add_column(axis.value, justify="right")
        table.add_column("global mean", justify="right")
        table.add_column("global var", justify="right")
        table.add_column("wall-clock [s]", justify="right")
        for value, (gm, gv, wall, err) in zip(grid, rows):
            table.add_row(f"{value:g}", f"{gm:.3e}", f"{gv:.3e}", f"{wall:.2f}" + (" (failed)" if err else ""))
        console.print(table)
        logger.info(f"Wrote sweep results to {out_dir}")
    except Exception as e:
        logger.error(f"Sweep of {config} failed: {str(e)}")
        logger.error(traceback.format_exc())
        raise typer.Exit(code=_exit_code(e))


@app.command()
def reference(
    config: Path = typer.Argument(..., help="Run configuration file."),
    out: Optional[Path] = typer.Option(None, "--out", help="Output CSV path."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed for the Monte Carlo reference."),
    full_scale: bool = typer.Option(False, "--full-scale", help="Long-horizon defaults: T=150 s, 10^6 realizations."),
):
    """Computes only the reference moments of a configuration."""
    try:
        cfg = _load(config, seed, full_scale)
        problem = cfg.validate()
        series = compute_reference(cfg, problem)
        path = out or _resolve_out(None, cfg, problem.name) / "reference.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        series.to_csv(path)
        logger.info(f"{problem.name}: wrote {cfg.reference.value} reference to {path}")
    except Exception as e:
        logger.error(f"Reference for {config} failed: {str(e)}")
        logger.error(traceback.format_exc())
        raise typer.Exit(code=_exit_code(e))

