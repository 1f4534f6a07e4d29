"""``cutplane`` command line.

Every command writes ``result.json`` into ``--out``; solver commands also
stream ``trace.csv`` (one flushed row per iteration) and the benchmark
writes ``bench.csv``. Exit codes: 0 success, 2 when the run finished but
its target was not met (no ball found, residuals too large), 1 on errors.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator

import click
import numpy as np

from . import __version__
from .bench import BENCH_FIELDS, BenchSpec, bench_leverage
from .config import SCHEMA_VERSION, ConfigError, RunConfig, check_seed, integer, load_json, number, parse_config
from .convex import minimize_convex
from .instances import ad_instance, convex_instance, feasibility_instance, fisher_instance, saddle_instance
from .markets import EquilibriumNotReached, EquilibriumReport, MarketAssumptionError, solve_arrow_debreu, solve_fisher
from .saddle import solve_saddle
from .vaidya import FoundPoint, TraceRow, VaidyaParams, run_feasibility

EXIT_OK, EXIT_ERROR, EXIT_TARGET = 0, 1, 2

# Default profiles; configuration overrides apply on top.
SOLVER_PROFILE = VaidyaParams.desk(C_iter=35.0, exact_leverage=True)
MARKET_PROFILE = SOLVER_PROFILE

log = logging.getLogger("cutplane")


def _setup_logging() -> None:
    level = os.environ.get("CUTPLANE_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _jsonable(v: Any) -> Any:
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_result(out: Path, command: str, seed: int, status: str, payload: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "seed": seed, "status": status}
    doc.update(payload)
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=True)
    (out / "result.json").write_text(text + "\n", encoding="utf-8")


@contextmanager
def trace_writer(out: Path, timing: bool) -> Iterator[Any]:
    with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TraceRow.FIELDS)
        fh.flush()

        def on_trace(row: TraceRow) -> None:
            vals = list(row.as_tuple())
            if not timing:
                vals[TraceRow.FIELDS.index("wall_time")] = 0.0
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in vals])
            fh.flush()

        yield on_trace


def _context(instance: str | None, config: str | None, seed: int, out: str, timing: bool | None) -> tuple[dict | None, RunConfig, Path]:
    check_seed(seed)
    cfg = parse_config(load_json(config) if config else None)
    if timing is False:
        cfg.timing = False
    data = load_json(instance) if instance else None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return data, cfg, path


def _common(f: Any) -> Any:
    f = click.option("--no-timing", "no_timing", is_flag=True, help="Write zero wall times (byte-stable output).")(f)
    f = click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")(f)
    f = click.option("--seed", required=True, type=click.IntRange(0, 2**64 - 1), help="Unsigned 64-bit seed.")(f)
    f = click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None, help="Solver configuration JSON.")(f)
    return f


def _instance_opt(f: Any) -> Any:
    return click.option("--instance", required=True, type=click.Path(exists=True, dir_okay=False), help="Instance JSON.")(f)


@click.group()
@click.version_option(__version__)
def cli() -> None:
    """Cutting-plane solvers with maintained leverage scores."""


@cli.command()
@_instance_opt
@_common
def feasibility(instance: str, config: str | None, seed: int, out: str, no_timing: bool) -> int:
    """Find a point in a convex set or rule out a ball of radius eps."""
    data, cfg, path = _context(instance, config, seed, out, not no_timing)
    inst = feasibility_instance(data or {})
    params = cfg.params(inst.oracle.n, seed)
    with trace_writer(path, cfg.timing) as on_trace:
        res = run_feasibility(inst.oracle, inst.R, inst.eps, params, on_trace=on_trace)
    if isinstance(res, FoundPoint):
        write_result(path, "feasibility", seed, "found_point",
                     {"x": res.x, "oracle_calls": res.oracle_calls, "iterations": res.iterations})
        return EXIT_OK
    write_result(path, "feasibility", seed, "no_ball",
                 {"eps": res.eps, "oracle_calls": res.oracle_calls, "iterations": res.iterations, "final_F": res.final_F})
    return EXIT_TARGET


@cli.command()
@_instance_opt
@_common
def convex(instance: str, config: str | None, seed: int, out: str, no_timing: bool) -> int:
    """Minimize a convex objective over a box."""
    data, cfg, path = _context(instance, config, seed, out, not no_timing)
    inst = convex_instance(data or {})
    params = cfg.params(inst.S.n, seed, SOLVER_PROFILE)
    with trace_writer(path, cfg.timing) as on_trace:
        res = minimize_convex(inst.f, inst.S, inst.R, inst.alpha, params, on_trace=on_trace)
    rel = (res.value - inst.f_min) / (inst.f_max - inst.f_min)
    ok = rel <= inst.alpha
    write_result(path, "convex", seed, "ok" if ok else "target_missed",
                 {"x": res.x, "value": res.value, "relative_gap": rel, "alpha": inst.alpha,
                  "oracle_calls": res.oracle_calls})
    return EXIT_OK if ok else EXIT_TARGET


@cli.command()
@_instance_opt
@_common
def saddle(instance: str, config: str | None, seed: int, out: str, no_timing: bool) -> int:
    """Approximate saddle point of a convex-concave game on boxes."""
    data, cfg, path = _context(instance, config, seed, out, not no_timing)
    inst = saddle_instance(data or {})
    prob = inst.problem
    params = cfg.params(prob.dim, seed, SOLVER_PROFILE)
    with trace_writer(path, cfg.timing) as on_trace:
        res = solve_saddle(prob, inst.eps, seed, params, on_trace=on_trace)
    gap = inst.gap(res.x, res.y)
    target = inst.eps * (prob.L or 0.0) * prob.r
    ok = gap <= target
    write_result(path, "saddle", seed, "ok" if ok else "target_missed",
                 {"x": res.x, "y": res.y, "duality_gap": gap, "target": target,
                  "certificate": res.certificate, "feasible_mass": res.feasible_mass,
                  "oracle_calls": res.oracle_calls})
    return EXIT_OK if ok else EXIT_TARGET


def _market_payload(rep: EquilibriumReport, eps: float) -> dict:
    return {"prices": rep.prices, "allocation": rep.allocation, "eps_eq": eps,
            "residuals": {"clearing": rep.clearing, "budget": rep.budget, "bang_per_buck": rep.bang_per_buck},
            "method": rep.method, "oracle_calls": rep.oracle_calls}


def _run_market(kind: str, solver: Any, market: Any, dim: int, eps: float, cfg: RunConfig, seed: int, path: Path) -> int:
    params = cfg.params(dim, seed, MARKET_PROFILE)
    try:
        with trace_writer(path, cfg.timing) as on_trace:
            rep = solver(market, eps, seed=seed, params=params, saddle_eps=cfg.saddle_eps, on_trace=on_trace)
    except EquilibriumNotReached as exc:
        write_result(path, kind, seed, "target_missed", _market_payload(exc.report, eps))
        return EXIT_TARGET
    write_result(path, kind, seed, "ok", _market_payload(rep, eps))
    return EXIT_OK


@cli.command("market-ad")
@_instance_opt
@_common
def market_ad(instance: str, config: str | None, seed: int, out: str, no_timing: bool) -> int:
    """Linear exchange (Arrow-Debreu) market equilibrium."""
    data, cfg, path = _context(instance, config, seed, out, not no_timing)
    market, eps = ad_instance(data or {})
    eps = cfg.eps_eq or eps or 1e-2
    return _run_market("market-ad", solve_arrow_debreu, market, 4 * market.n, eps, cfg, seed, path)


@cli.command("market-fisher")
@_instance_opt
@_common
def market_fisher(instance: str, config: str | None, seed: int, out: str, no_timing: bool) -> int:
    """Fisher market with spending-constraint utilities."""
    data, cfg, path = _context(instance, config, seed, out, not no_timing)
    market, eps = fisher_instance(data or {})
    eps = cfg.eps_eq or eps or 1e-2
    dim = 2 * market.n_goods + market.n_buyers
    return _run_market("market-fisher", solve_fisher, market, dim, eps, cfg, seed, path)


@cli.command("bench-leverage")
@click.option("--instance", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Optional JSON with stream parameters n, m, K, step.")
@_common
def bench_leverage_cmd(instance: str | None, config: str | None, seed: int, out: str, no_timing: bool) -> int:
    """Per-step drift and update time of the leverage maintainers."""
    data, cfg, path = _context(instance, config, seed, out, not no_timing)
    params = dict(cfg.bench)
    if data:
        params.update({k: v for k, v in data.items() if k not in ("schema_version", "kind")})
    try:
        spec = BenchSpec(
            n=integer(params.get("n", 16), "n"),
            m=integer(params.get("m", 48), "m"),
            K=integer(params.get("K", 100), "K"),
            step=number(params.get("step", 0.009), "step"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = 0
    with open(path / "bench.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_FIELDS)
        fh.flush()
        for row in bench_leverage(spec, seed, timing=cfg.timing):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
            fh.flush()
            rows += 1
    write_result(path, "bench-leverage", seed, "ok",
                 {"n": spec.n, "m": spec.m, "K": spec.K, "step": spec.step, "rows": rows})
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    try:
        code = cli.main(args=argv, prog_name="cutplane", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        return EXIT_ERROR
    except click.exceptions.Abort:
        return EXIT_ERROR
    except (ConfigError, MarketAssumptionError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - the CLI reports every failure as exit 1
        log.debug("unhandled error", exc_info=True)
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_ERROR
    return EXIT_OK if code is None else int(code)


if __name__ == "__main__":
    sys.exit(main())
