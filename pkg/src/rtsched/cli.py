"""Command-line interface: ``rtsched generate | solve | validate | report | pareto``.

Exit codes: 0 success, 2 usage or input error, 3 infeasible, 4 time limit hit
without any incumbent.
"""

from __future__ import annotations

import json
import math
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import analysis
from .colgen import CGConfig, PlacementError, compute_horizon, run_column_generation
from .domain import Instance, validate_solution
from .generator import ClinicConfig, simulate, snapshot_days
from .heuristics import HeuristicFailure, greedy_solve, restart_search
from .io import FormatError, load_instance, load_solution, save_instance, save_solution
from .objective import ObjectiveWeights, resolve_weights
from .oracle import OracleCapExceeded, brute_force_optimal

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_TIMEOUT = 0, 2, 3, 4
FIXTURE_ENV = "RTSCHED_FIXTURES"


class CliError(click.ClickException):
    exit_code = EXIT_USAGE


def _weights(objective: str | None, alpha: str | None) -> ObjectiveWeights:
    try:
        if alpha:
            return resolve_weights(alpha)
        return resolve_weights(objective or "4")
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _load(path: str) -> Instance:
    p = Path(path)
    if not p.exists() and os.environ.get(FIXTURE_ENV):
        p = Path(os.environ[FIXTURE_ENV]) / path
    try:
        return load_instance(p)
    except (FormatError, OSError) as exc:
        raise CliError(str(exc)) from None


@click.group()
def main() -> None:
    """Radiotherapy patient scheduling tools."""


@main.command()
@click.option("--arrival-rate", "rates", multiple=True, type=float, default=(16.0, 18.0), show_default=True,
              help="Poisson arrivals per weekday; repeat for several setups.")
@click.option("--windows", "windows", multiple=True, type=int, default=(2, 4), show_default=True)
@click.option("--window-length", type=int, multiple=True, help="Override window lengths (minutes).")
@click.option("--days", type=int, default=300, show_default=True, help="Simulated weekdays.")
@click.option("--count", type=int, default=20, show_default=True, help="Snapshots per setup.")
@click.option("--first-snapshot", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def generate(rates, windows, window_length, days, count, first_snapshot, seed, out_dir) -> None:
    """Simulate the clinic and write instance snapshots as JSON."""
    if count < 1 or days < 1 or first_snapshot > days or days - first_snapshot + 1 < count:
        raise CliError("need 1 <= count <= days - first_snapshot + 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rate in rates:
        for W in windows:
            try:
                cfg = ClinicConfig(arrival_rate=rate, windows=W,
                                   window_lengths=tuple(window_length) if window_length else None)
            except ValueError as exc:
                raise CliError(str(exc)) from None
            rng = np.random.default_rng([seed, int(rate * 1000), W])
            keep = set(snapshot_days(np.random.default_rng([seed, 1]), first_snapshot, days, count))
            weights = resolve_weights("4")
            for day, (inst, _) in enumerate(simulate(cfg, days, lambda i: greedy_solve(i, weights), rng), 1):
                if day in keep:
                    name = f"lambda{rate:g}_W{W}_day{day:03d}"
                    save_instance(Instance(inst.park, inst.time, inst.protocols, inst.patients,
                                           inst.occupancy, name=name), out / f"{name}.json")
            click.echo(f"setup lambda={rate:g} W={W}: {len(keep)} instances")


@main.command()
@click.argument("instance", type=click.Path())
@click.option("--method", type=click.Choice(["cg", "greedy", "restart", "oracle"]), default="cg", show_default=True)
@click.option("--objective", default="4", show_default=True, help="Preset #1..#4, S1..S6.")
@click.option("--alpha", default=None, help="Explicit weights a1,a2,a3,a4,a5,a6 (overrides --objective).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--time-limit-s", type=float, default=3600.0, show_default=True)
@click.option("--warm-start", type=click.Choice(["none", "restart", "greedy", "best"]), default="best",
              show_default=True)
@click.option("--size-horizon/--keep-horizon", default=False,
              help="Recompute the horizon (randomized greedy plus 30 days) before solving.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Solution JSON path.")
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None, help="Run log (JSON lines).")
def solve(instance, method, objective, alpha, seed, time_limit_s, warm_start, size_horizon, out, log_path) -> None:
    """Solve an instance and write the solution."""
    weights = _weights(objective, alpha)
    inst = _load(instance)
    rng = np.random.default_rng(seed)
    log_lines = []

    def emit(event: dict) -> None:
        log_lines.append(json.dumps(event, sort_keys=False))

    t0 = time.monotonic()
    try:
        if size_horizon:
            inst = inst.with_horizon(compute_horizon(inst, rng))
        if method == "cg":
            cfg = CGConfig(objective=weights, seed=seed, time_limit=time_limit_s,
                           warm_start=None if warm_start == "none" else warm_start)
            res = run_column_generation(
                inst, weights, cfg,
                on_iteration=lambda r: emit({"iteration": r.iteration, "lp_value": r.lp_value,
                                             "columns_added": r.columns_added,
                                             "min_reduced_cost": _finite(r.min_reduced_cost),
                                             "pool_size": r.pool_size, "seconds": round(r.seconds, 3)}))
            for node, value, source in res.ip.incumbent_history:
                emit({"incumbent": value, "node": node, "source": source})
            sol = res.solution
        elif method == "greedy":
            sol = greedy_solve(inst, weights)
        elif method == "restart":
            sol = restart_search(inst, weights, rng)
        else:
            sol = brute_force_optimal(inst, weights)
    except (PlacementError, HeuristicFailure) as exc:
        click.echo(f"infeasible: {exc}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    except OracleCapExceeded as exc:
        raise CliError(str(exc)) from None
    sol.meta["seconds"] = round(time.monotonic() - t0, 3)
    sol.meta["instance"] = str(instance)
    sol.meta["weights"] = list(weights.alphas)
    emit({"status": sol.status, "objective": _finite(sol.objective_value), "bound": _finite(sol.bound),
          "relative_gap": _finite(sol.relative_gap)})
    if log_path:
        Path(log_path).write_text("\n".join(log_lines) + "\n")
    if out:
        save_solution(sol, out)
    if not sol.schedules:
        click.echo(f"no solution ({sol.status})", err=True)
        sys.exit(EXIT_TIMEOUT if sol.status in ("no_incumbent", "timeout") else EXIT_INFEASIBLE)
    gap = "" if sol.relative_gap is None else f" gap={sol.relative_gap:.4%}"
    click.echo(f"{method}: objective={sol.objective_value:g} status={sol.status}{gap}")


def _finite(x):
    return x if isinstance(x, (int, float)) and math.isfinite(x) else None


@main.command()
@click.argument("instance", type=click.Path())
@click.argument("solution", type=click.Path(exists=True, dir_okay=False))
def validate(instance, solution) -> None:
    """Check a solution against every scheduling rule."""
    inst = _load(instance)
    try:
        sol = load_solution(solution)
    except FormatError as exc:
        raise CliError(str(exc)) from None
    report = validate_solution(inst, sol)
    click.echo(str(report))
    sys.exit(EXIT_OK if report.ok else EXIT_INFEASIBLE)


@main.command()
@click.argument("solutions", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--instance", "instance_path", type=click.Path(), default=None,
              help="Instance for all solutions (default: the path recorded in each solution).")
@click.option("--placeholders/--no-placeholders", default=False, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Per-patient CSV.")
@click.option("--summary", type=click.Path(dir_okay=False), default=None, help="Per-priority CSV.")
def report(solutions, instance_path, placeholders, out, summary) -> None:
    """Per-patient metrics and per-priority summaries as CSV."""
    rows = []
    for path in solutions:
        try:
            sol = load_solution(path)
        except FormatError as exc:
            raise CliError(str(exc)) from None
        src = instance_path or sol.meta.get("instance")
        if not src:
            raise CliError(f"{path}: no instance recorded; pass --instance")
        rows.extend(analysis.patient_metrics(_load(src), sol, placeholders))
    text = analysis.to_csv(rows, analysis.METRIC_FIELDS)
    summ = analysis.to_csv(analysis.summarize(rows), analysis.SUMMARY_FIELDS)
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)
    if summary:
        Path(summary).write_text(summ)
    else:
        click.echo(summ, nl=False)


@main.command()
@click.argument("instance", type=click.Path())
@click.option("--grid", "grid", multiple=True, required=True,
              help="Weight pair 'a1,a4'; repeat for each point of the sweep.")
@click.option("--base", default="0,0,0,0,0,0", show_default=True,
              help="Remaining weights (a1 and a4 are overwritten by each grid pair).")
@click.option("--method", type=click.Choice(["cg", "oracle"]), default="cg", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--time-limit-s", type=float, default=600.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def pareto(instance, grid, base, method, seed, time_limit_s, out) -> None:
    """Weighted-sum sweep between waiting time and window preference."""
    inst = _load(instance)
    try:
        pairs = [tuple(float(v) for v in g.split(",")) for g in grid]
        base_w = [float(v) for v in base.split(",")]
    except ValueError:
        raise CliError("grid entries must look like 'a1,a4' and --base like 'a1,...,a6'") from None
    if any(len(p) != 2 for p in pairs) or len(base_w) != 6:
        raise CliError("grid entries must look like 'a1,a4' and --base like 'a1,...,a6'")

    def run(i: Instance, w: ObjectiveWeights):
        if method == "oracle":
            return brute_force_optimal(i, w)
        return run_column_generation(i, w, CGConfig(objective=w, seed=seed, time_limit=time_limit_s,
                                                    warm_start="best")).solution

    try:
        points = analysis.pareto_sweep(inst, pairs, run, base_w)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    rows = [{"alpha1": p.alpha1, "alpha4": p.alpha4, "waiting": p.waiting, "preference": p.preference,
             "objective": p.objective, "dominated": int(p.dominated)} for p in points]
    text = analysis.to_csv(rows, ["alpha1", "alpha4", "waiting", "preference", "objective", "dominated"])
    if out:
        Path(out).write_text(text)
    click.echo(text, nl=False)


if __name__ == "__main__":  # pragma: no cover
    main()
