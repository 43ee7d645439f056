"""Command-line entry point: single runs, recipe sweeps, regret summaries, diagnostics grids."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import shlex
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np

from .bench import (RECIPES, Benchmark, RunSpec, aggregate_log_regret, build_prior, execute,
                    expand_recipe, get_benchmark, log_regret, spec_prior)
from .engine import (RunAborted, RunConfig, RunTrace, build_context, diagnostics_grid, run,
                     run_prior_sampling)
from .priors import prior_from_space_dict
from .space import SearchSpace

log = logging.getLogger("priorbo")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_OBJECTIVE = 3

_CONFIG_FIELDS = ("budget", "doe_count", "beta", "gamma", "surrogate", "constrained",
                  "interleave_prob", "seed")


class ConfigError(ValueError):
    pass


class CommandObjective:
    """Objective evaluated by an external process.

    The command receives ``{"x": {...}}`` as one JSON line on stdin and must
    print ``{"y": <real>, "feasible": <bool>}`` as its last stdout line.
    """

    def __init__(self, command, timeout: float | None = None, cwd: str | None = None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self.cwd = cwd

    def __call__(self, x: dict[str, Any]) -> dict:
        payload = json.dumps({"x": x}, default=_json_default) + "\n"
        proc = subprocess.run(self.command, input=payload, capture_output=True, text=True,
                              timeout=self.timeout, cwd=self.cwd, check=False)
        if proc.returncode != 0:
            raise RuntimeError(f"command exited with {proc.returncode}: {proc.stderr.strip()}")
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if not lines:
            raise RuntimeError("command printed no result")
        out = json.loads(lines[-1])
        return {"y": float(out["y"]), "feasible": bool(out.get("feasible", True))}


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def load_json(path) -> dict:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: "
                          f"{exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _run_config(cfg: dict, seed: int | None) -> RunConfig:
    kw = {k: cfg[k] for k in _CONFIG_FIELDS if k in cfg}
    if seed is not None:
        kw["seed"] = seed
    try:
        return RunConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _check_sources(cfg: dict) -> str:
    present = [k for k in ("benchmark", "command", "recipe") if k in cfg]
    if len(present) != 1:
        raise ConfigError("config needs exactly one of 'benchmark', 'command' or 'recipe'")
    return present[0]


def _space_and_prior(cfg: dict, bench: Benchmark | None, base_dir: Path, rng):
    if "space" in cfg:
        try:
            space = SearchSpace.from_dict(cfg["space"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad space: {exc}") from None
    elif bench is not None:
        space = bench.space
    else:
        raise ConfigError("an external command needs a 'space'")
    if bench is not None and space.names != bench.space.names:
        raise ConfigError(f"space parameters {space.names} do not match benchmark "
                          f"{bench.space.names}")
    if "prior" in cfg:
        if bench is None:
            raise ConfigError("'prior' builders need a benchmark; put priors on the parameters")
        return space, build_prior(replace(bench, space=space), cfg["prior"], rng)
    if "space" in cfg:
        return space, prior_from_space_dict(space, cfg["space"], base_dir)
    return space, build_prior(bench, {"type": "uniform"}, rng)


def _setup(cfg: dict, cfg_path: Path, seed: int | None):
    """Resolve objective, space, prior and run config for a single-run config."""
    kind = _check_sources(cfg)
    if kind == "recipe":
        raise ConfigError("recipe configs are run with 'priorbo sweep'")
    rc = _run_config(cfg, seed)
    prior_rng = np.random.default_rng(np.random.SeedSequence(rc.seed, spawn_key=(1,)))
    bench = None
    if kind == "benchmark":
        try:
            bench = get_benchmark(cfg["benchmark"])
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
        objective = bench
    else:
        objective = CommandObjective(cfg["command"], cfg.get("timeout"), str(cfg_path.parent))
    space, prior = _space_and_prior(cfg, bench, cfg_path.parent, prior_rng)
    return bench, objective, space, prior, rc


def _meta(bench: Benchmark | None, cfg: dict, rc: RunConfig, **extra) -> dict:
    return {"benchmark": bench.name if bench else None,
            "optimum_value": bench.optimum_value if bench else None,
            "method": cfg.get("method", "bo"),
            "config": {k: getattr(rc, k) for k in _CONFIG_FIELDS}, **extra}


def _write_outputs(out: Path, trace: RunTrace, meta: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    trace.write_csv(out / "trace.csv")
    (out / "meta.json").write_text(json.dumps(meta, indent=2, default=_json_default) + "\n")


def cmd_run(args) -> int:
    path = Path(args.config)
    cfg = load_json(path)
    bench, objective, space, prior, rc = _setup(cfg, path, args.seed)
    out = Path(args.out or cfg.get("out", "."))
    meta = _meta(bench, cfg, rc)
    strict = cfg.get("on_error", "abort") == "abort"
    method = cfg.get("method", "bo")
    try:
        if method == "prior_sampling":
            trace = run_prior_sampling(space, prior, objective,
                                       (rc.doe_count or space.dim + 1) + rc.budget, rc.seed)
        elif method == "bo":
            trace = run(space, prior, objective, rc, strict=strict)
        else:
            raise ConfigError(f"unknown method {method!r}")
    except RunAborted as exc:
        _write_outputs(out, exc.trace, {**meta, "aborted": str(exc)})
        print(f"error: {exc}; partial trace written to {out / 'trace.csv'}", file=sys.stderr)
        return EXIT_OBJECTIVE
    _write_outputs(out, trace, meta)
    best = trace.best()
    print(f"{len(trace)} evaluations, best y = {best.y if best else float('nan'):.6g}; "
          f"trace in {out / 'trace.csv'}")
    return EXIT_OK


def cmd_diag(args) -> int:
    path = Path(args.config)
    cfg = load_json(path)
    bench, objective, space, prior, rc = _setup(cfg, path, args.seed)
    if space.dim > 2:
        raise ConfigError("diagnostics grids need a 1D or 2D space")
    iters = sorted({int(v) for v in args.iters.split(",") if v.strip()})
    if not iters or iters[0] < 0:
        raise ConfigError("--iters must be non-negative integers")
    out = Path(args.out or cfg.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def callback(t_done, history):
        if t_done not in iters:
            return
        rng = np.random.default_rng(np.random.SeedSequence(rc.seed, spawn_key=(2, t_done)))
        ctx = build_context(history, prior, t_done, rc, rng)
        target = out / f"diag_{t_done}.csv"
        write_table(target, diagnostics_grid(space, ctx, args.grid))
        written.append(target)

    try:
        trace = run(space, prior, objective, replace(rc, budget=iters[-1]), callback=callback,
                    strict=True)
    except RunAborted as exc:
        _write_outputs(out, exc.trace, {**_meta(bench, cfg, rc), "aborted": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OBJECTIVE
    _write_outputs(out, trace, _meta(bench, cfg, rc))
    print("wrote " + ", ".join(str(p) for p in written))
    return EXIT_OK


def write_table(path, cols: dict[str, np.ndarray]) -> None:
    names = list(cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*(cols[n] for n in names)):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def _execute_to_dir(job: tuple[RunSpec, str]) -> str:
    spec, out = job
    bench = get_benchmark(spec.benchmark)
    target = Path(out)
    target.mkdir(parents=True, exist_ok=True)
    prior = spec_prior(spec)

    def callback(t_done, history):
        if t_done not in spec.diag_iters:
            return
        rng = np.random.default_rng(np.random.SeedSequence(spec.config.seed,
                                                           spawn_key=(2, t_done)))
        ctx = build_context(history, prior, t_done, spec.config, rng)
        write_table(target / f"diag_{t_done}.csv",
                    diagnostics_grid(bench.space, ctx, spec.diag_grid))

    trace = execute(spec, prior, callback if spec.diag_iters else None)
    _write_outputs(target, trace, {**spec.to_dict(), "optimum_value": bench.optimum_value})
    return str(target)


def max_workers() -> int:
    raw = os.environ.get("PRIORBO_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"PRIORBO_THREADS must be an integer, got {raw!r}") from None


def run_specs(specs: list[RunSpec], out: Path) -> list[str]:
    jobs = [(s, str(out / s.group / f"seed_{s.seed_index}")) for s in specs]
    workers = min(max_workers(), len(jobs)) if jobs else 1
    if workers == 1:
        return [_execute_to_dir(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_execute_to_dir, jobs))


def cmd_sweep(args) -> int:
    name = args.recipe
    master = args.seed if args.seed is not None else 0
    if name.endswith(".json"):
        cfg = load_json(name)
        if _check_sources(cfg) != "recipe":
            raise ConfigError("sweep configs need a 'recipe' key")
        name = cfg["recipe"]
        master = cfg.get("seed", master)
        args.seeds = cfg.get("seeds", args.seeds)
        args.out = args.out or cfg.get("out")
    if name not in RECIPES:
        raise ConfigError(f"unknown recipe {name!r}; choose from {', '.join(RECIPES)}")
    groups = tuple(args.groups.split(",")) if args.groups else None
    try:
        specs = expand_recipe(name, n_seeds=args.seeds, master_seed=master,
                              n_evals=args.evals, groups=groups)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None
    out = Path(args.out or name)
    run_specs(specs, out)
    for g in sorted({s.group for s in specs}):
        rows = summarize_dir(out / g)
        write_summary(out / g / "summary.csv", rows)
        final = rows[-1]
        print(f"{g}: final mean log10 regret {final[1]:.3f} +/- {final[2]:.3f} "
              f"({final[3]} seeds)")
    return EXIT_OK


def _load_trace(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    inc, y, feas = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            inc.append(float(row["incumbent"]))
            y.append(float(row["y"]))
            feas.append(row["feasible"] == "1")
    return np.array(inc), np.array(y), np.array(feas)


def summarize_dir(root: Path) -> list[tuple]:
    """Per-iteration mean/std log10 regret over every ``trace.csv`` below ``root``.

    Traces must come from one benchmark. Runs of an external command have no
    known optimum; their regret is taken against the best value seen in any
    of the traces.
    """
    root = Path(root)
    paths = sorted(root.rglob("trace.csv"))
    if not paths:
        raise ConfigError(f"no trace.csv files under {root}")
    metas = []
    for p in paths:
        m = p.with_name("meta.json")
        metas.append(json.loads(m.read_text()) if m.exists() else {})
    names = {m.get("benchmark") for m in metas}
    if len(names) != 1:
        raise ConfigError(f"traces under {root} mix benchmarks: "
                          f"{sorted(str(n) for n in names)}")
    traces = [_load_trace(p) for p in paths]
    optimum = metas[0].get("optimum_value")
    if optimum is None:
        feas_y = [y[f] for _, y, f in traces if f.any()]
        optimum = float(min(v.min() for v in feas_y)) if feas_y else math.nan
    series = [log_regret(inc, optimum) for inc, _, _ in traces]
    mean, std, count = aggregate_log_regret(series)
    return [(i + 1, float(mean[i]), float(std[i]), int(count[i])) for i in range(len(mean))]


def write_summary(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mean_log_regret", "std_log_regret", "n_seeds"])
        for it, m, s, n in rows:
            w.writerow([it, repr(m) if math.isfinite(m) else "nan",
                        repr(s) if math.isfinite(s) else "nan", n])


def cmd_summarize(args) -> int:
    root = Path(args.dir)
    rows = summarize_dir(root)
    target = Path(args.out) if args.out else root / "summary.csv"
    write_summary(target, rows)
    print(f"{len(rows)} iterations summarized into {target}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="priorbo", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one optimization from a JSON config")
    p.add_argument("config", help="JSON run config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory for trace.csv and meta.json")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("diag", help="dump prior/model/acquisition grids at chosen iterations")
    p.add_argument("config", help="JSON run config over a 1D or 2D space")
    p.add_argument("--iters", default="0,5,10,20", help="comma-separated BO iterations to dump")
    p.add_argument("--grid", type=int, default=501, help="grid points per dimension")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory for diag_<t>.csv")
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("sweep", help="run a named recipe over seeds")
    p.add_argument("recipe", help=f"one of {', '.join(RECIPES)}, or a JSON file with 'recipe'")
    p.add_argument("--out")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--evals", type=int, help="override total evaluations per run")
    p.add_argument("--groups", help="comma-separated subset of recipe arms")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("summarize", help="mean/std log regret over traces in a directory")
    p.add_argument("dir", help="directory searched recursively for trace.csv")
    p.add_argument("--out", help="summary CSV path (default <dir>/summary.csv)")
    p.set_defaults(func=cmd_summarize)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
