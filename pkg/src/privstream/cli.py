"""Command-line entry points: ``simulate``, ``analyze``, ``critvals``.

Runs are driven by a JSON config file; command-line flags override file
values.  All file outputs are written atomically, and the exit status is
nonzero exactly when an error was surfaced.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from typing import Optional, Sequence

import numpy as np

from .dataio import load_csv
from .errors import ConfigError, PrivstreamError
from .inference import CriticalValueTable, critical_values
from .models import FAMILIES, make_model
from .privacy import NoiseSource, PrivacyBudget
from .report import (AnalysisReport, write_analysis_report,
                     write_simulation_report)
from .sgd import StepSchedule
from .simulate import SimDesign, fit_stream, simulate_design

logger = logging.getLogger(__name__)

WORKERS_ENV = "PRIVSTREAM_WORKERS"

_SGD_STREAM, _RELEASE_STREAM = 2, 3  # mirrors the replication layout


# ---------------------------------------------------------------------------
# config handling


def _require(condition, message):
    if not condition:
        raise ConfigError(message)


def _check_keys(section: dict, allowed, where):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(
            f"unknown config key(s) in {where}: {sorted(unknown)}")


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _require(isinstance(cfg, dict), "config root must be an object")
    return cfg


def _parse_mu(value) -> float:
    if value in ("inf", "infinite", None):
        return math.inf
    try:
        mu = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"mu must be a number or 'inf', got {value!r}") \
            from None
    return mu


_DESIGN_KEYS = ("family", "p", "n", "mu", "sigma_structure", "noise_sd",
                "replications", "levels", "gamma", "alpha", "seed", "c",
                "tau", "theta0", "eval_ns")
_CRITVAL_KEYS = ("paths", "grid", "seed", "cache")


def design_from_config(section: dict, seed_override=None) -> SimDesign:
    _check_keys(section, _DESIGN_KEYS, "design")
    schedule = StepSchedule(gamma=float(section.get("gamma", 0.5)),
                            alpha=float(section.get("alpha", 0.51)))
    seed = seed_override if seed_override is not None \
        else int(section.get("seed", 0))
    return SimDesign(
        family=section.get("family", "huber_linear"),
        p=int(section.get("p", 3)),
        n=int(section.get("n", 200_000)),
        mu=_parse_mu(section.get("mu", "inf")),
        sigma_structure=section.get("sigma_structure", "identity"),
        noise_sd=float(section.get("noise_sd", 0.5)),
        replications=int(section.get("replications", 200)),
        levels=tuple(section.get("levels", (0.95,))),
        schedule=schedule,
        seed=seed,
        c=float(section.get("c", 1.345)),
        tau=float(section.get("tau", 0.5)),
        theta0=section.get("theta0"),
        eval_ns=tuple(section.get("eval_ns", ())),
    )


def _critval_params(section: dict, default_seed: int) -> dict:
    _check_keys(section, _CRITVAL_KEYS, "critical_values")
    return {"paths": int(section.get("paths", 200_000)),
            "grid": int(section.get("grid", 1_000)),
            "seed": int(section.get("seed", default_seed)),
            "cache": section.get("cache")}


def ensure_table(levels, paths: int, grid: int, seed: int,
                 cache: Optional[str], workers: int
                 ) -> tuple[CriticalValueTable, bool]:
    """Load a cached critical-value table on exact parameter match,
    otherwise recompute and (atomically) refresh the cache."""
    levels = tuple(sorted(levels))
    if cache and os.path.exists(cache):
        try:
            cached = CriticalValueTable.load(cache)
        except PrivstreamError as exc:
            logger.warning("ignoring unreadable cache %s: %s", cache, exc)
        else:
            if cached.matches(levels, paths, grid, seed):
                logger.info("reusing cached critical values from %s", cache)
                return cached, True
    logger.info("simulating %d pivot paths on a %d-point grid", paths, grid)
    table = critical_values(levels, paths=paths, grid=grid,
                            rng=NoiseSource(seed, 0), workers=workers)
    if cache:
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(
            os.path.abspath(cache)))
        os.close(fd)
        table.save(tmp)
        os.replace(tmp, cache)
    return table, False


def _workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else 1


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    _check_keys(cfg, ("mode", "design", "critical_values", "out", "figures"),
                "config")
    _require(cfg.get("mode", "simulate") == "simulate",
             "config mode does not match the 'simulate' subcommand")
    design = design_from_config(cfg.get("design", {}), args.seed)
    out = args.out or cfg.get("out")
    _require(out, "an output stem is required ('out' key or --out)")

    cv = _critval_params(cfg.get("critical_values", {}), design.seed)
    cache = cv["cache"] or f"{out}.critvals.txt"
    table, _ = ensure_table(design.quantile_levels(), cv["paths"],
                            cv["grid"], cv["seed"], cache, _workers(args))

    report = simulate_design(design, table)
    paths = write_simulation_report(report, out)

    render = cfg.get("figures", True) and not args.no_figures
    if render:
        from . import figures
        figures.save_cp_al_figure(report, f"{out}.cp_al.png")
        paths["cp_al"] = f"{out}.cp_al.png"
        if len(design.levels) > 1:
            figures.save_coverage_vs_nominal_figure(
                report, f"{out}.coverage.png")
            paths["coverage"] = f"{out}.coverage.png"

    for row in report.summary:
        print(f"{row.method:>4s}  n={row.n:<8d} level={row.level:.3f}  "
              f"CP={100 * row.cp:6.2f}% ({100 * row.cp_se:.2f})  "
              f"AL={row.al:.6f} ({row.al_se:.6f})")
    if report.release_budget is not None:
        print(f"plug-in release budget (GDP): {report.release_budget:.6f}")
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return 0


def _checkpoint_grid(n_total: int, count: int) -> tuple:
    ks = np.arange(1, count + 1)
    return tuple(sorted(set(int(math.ceil(n_total * k / count))
                            for k in ks)))


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    _check_keys(cfg, ("mode", "data", "response", "standardize",
                      "categorical", "model", "privacy", "schedule",
                      "level", "checkpoints", "seed", "critical_values",
                      "out", "figures"), "config")
    _require(cfg.get("mode", "analyze") == "analyze",
             "config mode does not match the 'analyze' subcommand")

    data_path = args.data or cfg.get("data")
    _require(data_path, "a dataset is required ('data' key or --data)")
    _require("response" in cfg, "config must name the response column")
    out = args.out or cfg.get("out")
    _require(out, "an output stem is required ('out' key or --out)")

    model_cfg = cfg.get("model", {})
    _check_keys(model_cfg, ("family", "c", "tau"), "model")
    _require(model_cfg.get("family", "huber_linear") in FAMILIES,
             f"model family must be one of {FAMILIES}")
    model = make_model(model_cfg.get("family", "huber_linear"),
                       c=float(model_cfg.get("c", 1.345)),
                       tau=float(model_cfg.get("tau", 0.5)))

    privacy_cfg = cfg.get("privacy", {})
    _check_keys(privacy_cfg, ("mu",), "privacy")
    budget = PrivacyBudget(mu=_parse_mu(privacy_cfg.get("mu", "inf")))

    sched_cfg = cfg.get("schedule", {})
    _check_keys(sched_cfg, ("gamma", "alpha"), "schedule")
    schedule = StepSchedule(gamma=float(sched_cfg.get("gamma", 0.5)),
                            alpha=float(sched_cfg.get("alpha", 0.51)))

    level = float(cfg.get("level", 0.95))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))

    dataset = load_csv(data_path, cfg["response"],
                       standardize=bool(cfg.get("standardize", False)),
                       categorical_maps=cfg.get("categorical"))

    checkpoints = _checkpoint_grid(len(dataset), int(cfg.get("checkpoints",
                                                             20)))
    cv = _critval_params(cfg.get("critical_values", {}), seed)
    cache = cv["cache"] or f"{out}.critvals.txt"
    q_level = 1.0 - (1.0 - level) / 2.0
    table, _ = ensure_table((q_level,), cv["paths"], cv["grid"], cv["seed"],
                            cache, _workers(args))

    base = NoiseSource(seed, 0)
    fit = fit_stream(model, schedule, budget, dataset.x, dataset.y,
                     checkpoints, (level,), table,
                     base.child(_SGD_STREAM), base.child(_RELEASE_STREAM))
    analysis = AnalysisReport(columns=dataset.columns, fit=fit,
                              private=budget.is_private)
    paths = write_analysis_report(analysis, out)

    if cfg.get("figures", True) and not args.no_figures:
        from . import figures
        figures.save_trajectory_figure(analysis, f"{out}.trajectory.png")
        paths["trajectory"] = f"{out}.trajectory.png"

    final = len(fit.eval_ns) - 1
    print(f"fitted n={fit.eval_ns[final]} observations, "
          f"{len(dataset.columns)} coefficients")
    for j, name in enumerate(dataset.columns):
        print(f"  {name:>20s}: {fit.theta_bar[final, j]: .6f}")
    if fit.release_budget is not None:
        print(f"plug-in release budget (GDP): {fit.release_budget:.6f}")
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return 0


def cmd_critvals(args) -> int:
    try:
        levels = tuple(sorted(float(tok) for tok in
                              args.levels.split(",") if tok.strip()))
    except ValueError:
        raise ConfigError(f"could not parse --levels {args.levels!r}") \
            from None
    _require(levels, "--levels must name at least one quantile level")
    seed = args.seed if args.seed is not None else 0
    table, cached = ensure_table(levels, args.paths, args.grid, seed,
                                 args.out, _workers(args))
    if cached:
        print(f"reused cached table from {args.out}")
    for lvl, val in zip(table.levels, table.values):
        print(f"{lvl:.6f} {val:.6f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privstream",
        description="Locally private streaming estimation and inference.")
    parser.add_argument("--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo design")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", help="output stem (overrides config)")
    sim.add_argument("--seed", type=int, help="override the design seed")
    sim.add_argument("--workers", type=int,
                     help=f"worker processes (or ${WORKERS_ENV})")
    sim.add_argument("--no-figures", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="fit one CSV dataset")
    ana.add_argument("--config", required=True)
    ana.add_argument("--data", help="CSV file (overrides config)")
    ana.add_argument("--out", help="output stem (overrides config)")
    ana.add_argument("--seed", type=int, help="override the config seed")
    ana.add_argument("--workers", type=int,
                     help=f"worker processes (or ${WORKERS_ENV})")
    ana.add_argument("--no-figures", action="store_true")
    ana.set_defaults(func=cmd_analyze)

    cv = sub.add_parser("critvals",
                        help="tabulate random-scaling critical values")
    cv.add_argument("--levels", required=True,
                    help="comma-separated quantile levels, e.g. 0.95,0.975")
    cv.add_argument("--paths", type=int, default=1_000_000)
    cv.add_argument("--grid", type=int, default=1_000)
    cv.add_argument("--seed", type=int)
    cv.add_argument("--out", help="cache file (reused on parameter match)")
    cv.add_argument("--workers", type=int,
                    help=f"worker processes (or ${WORKERS_ENV})")
    cv.set_defaults(func=cmd_critvals)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except PrivstreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
