"""Command-line entry point: ``curvdim run | figure1 | sweep``.

Exit codes: 0 when every verdict passes, 1 when any check fails, 2 for an
invalid config or a scenario that cannot be built, 3 when a size cap is hit.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import CurvDimError, ResourceError
from .report import csv_rows, write_csv, write_json, write_raster
from .scenarios import ConfigError, Scenario, ScenarioResult, load_config, run_scenario

__all__ = ["main", "run_config", "sweep_config"]

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RESOURCE = 0, 1, 2, 3


def _run_one(args) -> ScenarioResult:
    sc, h_override, overrides = args
    return run_scenario(sc, h_override, overrides)


def _run_all(scenarios: list[Scenario], jobs: int, h_override=None, overrides=None) -> list[ScenarioResult]:
    work = [(sc, h_override, overrides) for sc in scenarios]
    if jobs <= 1 or len(work) <= 1:
        return [_run_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, work))  # map keeps config order


def write_outputs(results: list[ScenarioResult], out: Path) -> None:
    """``report.json``, ``results.csv`` and ``rasters/<scenario>/<set>.txt``."""
    out.mkdir(parents=True, exist_ok=True)
    rows = [row for res in results for row in csv_rows(res.name, res.reports)]
    write_csv(out / "results.csv", rows)
    write_json(out / "report.json", {
        "verdict": all(r.verdict for r in results),
        "scenarios": [
            {"name": r.name, "verdict": r.verdict, "grid": r.grid, "checks": [rep.to_dict() for rep in r.reports]}
            for r in results
        ],
    })
    for res in results:
        d = out / "rasters" / res.name
        d.mkdir(parents=True, exist_ok=True)
        for name, centers in res.rasters.items():
            write_raster(d / f"{name}.txt", centers, 1.0)


def run_config(path, jobs: int = 1, out=None, h_override: float | None = None) -> tuple[int, list[ScenarioResult]]:
    """Run every scenario of a config file; returns ``(exit_code, results)``."""
    results = _run_all(load_config(path), jobs, h_override)
    if out is not None:
        write_outputs(results, Path(out))
    return (EXIT_PASS if all(r.verdict for r in results) else EXIT_FAIL), results


def sweep_config(path, param: str, lo: float, hi: float, steps: int, jobs: int = 1, h_override=None):
    """Largest value on ``linspace(lo, hi, steps)`` for which every check passes.

    Assumes verdicts are monotone in the parameter (passing below a threshold,
    failing above it) and bisects on grid indices.  Returns ``(value, log)``
    where ``value`` is ``None`` when even ``lo`` fails and ``log`` maps every
    evaluated value to its verdict.
    """
    if param not in ("K", "N"):
        raise ConfigError(f"cannot sweep {param!r}; choose K or N")
    if steps < 1:
        raise ConfigError("--steps must be >= 1")
    grid = np.linspace(lo, hi, steps)
    scenarios = load_config(path)
    log: dict[float, bool] = {}

    def ok(i: int) -> bool:
        v = float(grid[i])
        if v not in log:
            log[v] = all(r.verdict for r in _run_all(scenarios, jobs, h_override, {param: v}))
        return log[v]

    if not ok(0):
        return None, log
    if ok(steps - 1):
        return float(grid[-1]), log
    good, bad = 0, steps - 1
    while bad - good > 1:
        mid = (good + bad) // 2
        if ok(mid):
            good = mid
        else:
            bad = mid
    return float(grid[good]), log


def _summary(results: list[ScenarioResult]) -> None:
    for res in results:
        worst = min((r.worst_margin for r in res.reports), default=float("nan"))
        print(f"{res.name}: {'PASS' if res.verdict else 'FAIL'} (worst margin {worst:.3e})")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curvdim", description="Check curvature-dimension type inequalities on discretized spaces.")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run the checks declared in a config file")
    r.add_argument("config")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--out", default="curvdim-out")
    r.add_argument("--h-override", type=float, default=None)
    f = sub.add_parser("figure1", help="midpoint set versus interpolation support in the plane")
    f.add_argument("--h", type=float, default=0.025)
    f.add_argument("--out", default="figure1-out")
    s = sub.add_parser("sweep", help="largest parameter value on a grid with an all-pass verdict")
    s.add_argument("config")
    s.add_argument("--param", default="K", choices=["K", "N"])
    s.add_argument("--from", dest="lo", type=float, required=True)
    s.add_argument("--to", dest="hi", type=float, required=True)
    s.add_argument("--steps", type=int, default=11)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--h-override", type=float, default=None)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "run":
            code, results = run_config(args.config, args.jobs, args.out, args.h_override)
            _summary(results)
            return code
        if args.cmd == "figure1":
            from .figure1 import reproduce_figure1

            res = reproduce_figure1(args.h, args.out)
            print(f"m(M_1/2) = {res.m_midpoint:.6g}, m(D_1/2) = {res.m_support:.6g}, gap = {res.gap:.6g} (tol {res.tol:.3g})")
            for p in res.pairs:
                print(f"pair {p['pair']} t={p['t']:g}: |m(M_t) - m(D_t)| = {p['diff']:.3g} {'ok' if p['ok'] else 'FAIL'}")
            return EXIT_PASS if res.verdict else EXIT_FAIL
        value, log = sweep_config(args.config, args.param, args.lo, args.hi, args.steps, args.jobs, args.h_override)
        for v in sorted(log):
            print(f"{args.param} = {v:g}: {'PASS' if log[v] else 'FAIL'}")
        print(f"largest passing {args.param}: {'none' if value is None else f'{value:g}'}")
        return EXIT_PASS if value is not None else EXIT_FAIL
    except ResourceError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CurvDimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
