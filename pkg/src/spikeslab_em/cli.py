"""Command-line interface.

Every subcommand writes ``result.json`` and ``manifest.json`` into ``--out``
(plus ``path.csv`` or ``table.csv``/``table.txt`` where relevant) and prints
a one-line summary. Exit status: 0 success, 1 usage error, 2 runtime failure.

``replay --manifest DIR/manifest.json --out NEW`` reruns the recorded
argument list; all deterministic artifacts come out byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bbem import FREQUENCIES, WEIGHT_SCALES, BootstrapConfig, run_bbem
from .data import DESIGNS, DataError, Dataset, SimDesign, load_csv, standardize
from .em import EmConfig, HyperParams, run_em
from .experiments import ExperimentError, ExperimentSpec, run_experiment
from .posterior import WeightedDesign, build_posterior, update_posterior
from .rng import stream
from .tuning import CV_GRID, TuningError, V0Grid, selection_path, tune_bic, tune_cv

COMMANDS = ("fit", "ensemble", "path", "tune", "simulate", "bench", "replay")
# artifacts whose content depends on the wall clock; listed in the manifest
TIMING_ARTIFACTS = ("timings.json",)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit status 1 instead of argparse's 2
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# argument grammar


def _add_prior(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("prior")
    g.add_argument("--v0", type=float, default=None, help="spike variance (default 0.01)")
    g.add_argument("--v1", type=float, default=100.0)
    g.add_argument("--a0", type=float, default=1.1)
    g.add_argument("--b0", type=float, default=1.1)
    g.add_argument("--nu", type=float, default=1.0)
    g.add_argument("--lambda", dest="lam", type=float, default=1.0)


def _add_em(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("EM")
    g.add_argument("--theta0", type=float, default=None, help="default 0.5, or sqrt(n)/p when p > n")
    g.add_argument("--sigma0", type=float, default=1.0)
    g.add_argument("--gamma-init", default="all_zeros", choices=["all_zeros", "all_ones", "random"])
    g.add_argument("--k0", type=int, default=3)
    g.add_argument("--max-iter", type=int, default=100)


def _add_bbem(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("ensemble")
    g.add_argument("--K", type=int, default=100)
    g.add_argument("--L", type=int, default=None, help="default min(p, ceil(n/2)) when p > n, else p")
    g.add_argument("--weight-scale", default="sum_to_n", choices=[w for w in WEIGHT_SCALES if w != "unit"])
    g.add_argument("--frequency", default="replicates", choices=list(FREQUENCIES))


def _add_input(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("input")
    g.add_argument("--input", required=True, help="CSV file with a header row")
    g.add_argument("--response", required=True, help="response column name or zero-based index")
    g.add_argument("--standardize", action="store_true", help="standardize X and center y")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="spikeslab-em", description="EM and Bayesian-bootstrap EM variable selection")
    top.add_argument("--version", action="version", version=__version__)
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="single EM run")
    _add_input(p), _add_prior(p), _add_em(p), _add_common(p)

    p = sub.add_parser("ensemble", help="Bayesian-bootstrap EM")
    _add_input(p), _add_prior(p), _add_em(p), _add_bbem(p), _add_common(p)
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("path", help="selection frequencies over a v0 grid (CSV)")
    _add_input(p), _add_prior(p), _add_em(p), _add_bbem(p), _add_common(p)
    p.add_argument("--grid", default="log:-4:0:17", help='"a,b,c" or "log:LO:HI:NUM" (base-10 exponents)')
    p.add_argument("--engine", default="bbem", choices=["em", "bbem"])

    p = sub.add_parser("tune", help="choose v0 by BIC or k-fold CV")
    _add_input(p), _add_prior(p), _add_em(p), _add_bbem(p), _add_common(p)
    p.add_argument("--criterion", default="cv", choices=["bic", "cv"])
    p.add_argument("--grid", default=",".join(repr(v) for v in CV_GRID))
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--engine", default="em", choices=["em", "bbem"])
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("simulate", help="repeat a published simulation study")
    p.add_argument("--design", required=True, choices=list(DESIGNS))
    p.add_argument("--n", type=int, default=None, help="default 40/50/100 by design")
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--method", default="em", choices=["em", "bbem"])
    p.add_argument("--tuner", default="cv", choices=["fixed", "bic", "cv"])
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--grid", default=",".join(repr(v) for v in CV_GRID))
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--reference", default=None, help="published row to compare against")
    p.add_argument("--tolerance", type=float, default=None)
    _add_prior(p), _add_em(p), _add_bbem(p), _add_common(p)

    p = sub.add_parser("bench", help="time incremental vs full posterior refresh")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--p", type=int, default=1000)
    p.add_argument("--flips", type=int, default=5, help="maximum flips per trial")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--v0", type=float, default=0.01)
    p.add_argument("--v1", type=float, default=100.0)
    _add_common(p)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    return top


# ---------------------------------------------------------------------------
# config resolution


def _hyper(args, v0_default: float = 0.01) -> HyperParams:
    v0 = v0_default if args.v0 is None else args.v0
    try:
        return HyperParams(v0, args.v1, args.a0, args.b0, args.nu, args.lam)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _em_config(args, n: int, p: int) -> EmConfig:
    theta = args.theta0 if args.theta0 is not None else (math.sqrt(n) / p if p > n else 0.5)
    try:
        return EmConfig(args.max_iter, args.k0, theta, args.sigma0, args.gamma_init, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def default_L(n: int, p: int) -> int:
    return min(p, math.ceil(n / 2)) if p > n else p


def _bb_config(args, n: int, p: int) -> BootstrapConfig:
    L = args.L if args.L is not None else default_L(n, p)
    if L > p:
        raise UsageError(f"--L {L} exceeds p={p}")
    try:
        return BootstrapConfig(args.K, L, args.seed, args.weight_scale, args.frequency)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _grid(args, hp: HyperParams) -> V0Grid:
    try:
        grid = V0Grid.parse(args.grid)
        grid.check_against(hp)
    except ValueError as exc:
        raise UsageError(f"bad --grid: {exc}") from None
    return grid


def _hyper_dict(hp: HyperParams) -> dict:
    return {"v0": hp.v0, "v1": hp.v1, "a0": hp.a0, "b0": hp.b0, "nu": hp.nu, "lambda": hp.lam}


def _em_dict(cfg: EmConfig) -> dict:
    return {
        "theta0": cfg.theta_init,
        "sigma0": cfg.sigma2_init,
        "gamma_init": cfg.gamma_init,
        "k0": cfg.k0,
        "max_iter": cfg.max_iter,
    }


def _bb_dict(cfg: BootstrapConfig) -> dict:
    return {"K": cfg.K, "L": cfg.L, "weight_scale": cfg.weight_scale, "frequency": cfg.frequency}


def _load(args) -> tuple[Dataset, str]:
    ds = load_csv(args.input, args.response, standardize_data=args.standardize)
    digest = hashlib.sha256(Path(args.input).read_bytes()).hexdigest()
    return ds, digest


def _floats(a) -> list:
    return [float(x) for x in np.asarray(a, dtype=float)]


# ---------------------------------------------------------------------------
# subcommands; each returns (config, result, extra files, summary line)


def cmd_fit(args):
    ds, digest = _load(args)
    hp = _hyper(args)
    cfg = _em_config(args, ds.n, ds.p)
    res = run_em(ds, hp, cfg)
    result = {
        "columns": ds.names,
        "gamma": [int(g) for g in res.gamma],
        "m": _floats(res.m),
        "sigma2": res.state.sigma2,
        "theta": res.state.theta,
        "converged": res.converged,
        "iterations": res.iterations,
        "log_posterior": _floats(res.log_posterior_path()),
    }
    config = {"hyper": _hyper_dict(hp), "em": _em_dict(cfg), "standardize": args.standardize}
    sel = [n for n, g in zip(ds.names, res.gamma) if g]
    summary = f"fit: {len(sel)} of {ds.p} selected ({', '.join(sel[:8])}{'...' if len(sel) > 8 else ''}); converged={res.converged} after {res.iterations} iterations"
    return config, result, {}, digest, summary


def _map_fn(jobs: int):
    if jobs <= 1:
        return None
    from joblib import Parallel, delayed

    return lambda f, ks: Parallel(n_jobs=jobs)(delayed(f)(k) for k in ks)


def cmd_ensemble(args):
    ds, digest = _load(args)
    hp = _hyper(args)
    em_cfg = _em_config(args, ds.n, ds.p)
    bb = _bb_config(args, ds.n, ds.p)
    ens = run_bbem(ds, hp, em_cfg, bb, map_fn=_map_fn(args.jobs))
    sel = ens.selected(args.threshold)
    result = {
        "columns": ds.names,
        "phi": _floats(ens.phi),
        "m_bar": _floats(ens.m_bar),
        "selected": [int(s) for s in sel],
        "inclusions": [int(c) for c in ens.inclusions],
        "failed_replicates": ens.n_failed,
        "converged_replicates": sum(r.converged for r in ens.replicates),
    }
    config = {
        "hyper": _hyper_dict(hp),
        "em": _em_dict(em_cfg),
        "bootstrap": _bb_dict(bb),
        "threshold": args.threshold,
        "standardize": args.standardize,
    }
    summary = f"ensemble: {int(sel.sum())} of {ds.p} with phi >= {args.threshold:g} (K={bb.K}, L={bb.L}, {ens.n_failed} failed)"
    return config, result, {}, digest, summary


def cmd_path(args):
    ds, digest = _load(args)
    hp = _hyper(args)
    grid = _grid(args, hp)
    em_cfg = _em_config(args, ds.n, ds.p)
    bb = _bb_config(args, ds.n, ds.p)
    path = selection_path(ds, hp, grid, args.engine, em_cfg, bb)
    result = {"columns": ds.names, "grid": list(grid.values), "engine": args.engine,
              "phi": [_floats(col) for col in path.phi_matrix.T]}
    config = {"hyper": _hyper_dict(hp), "em": _em_dict(em_cfg), "bootstrap": _bb_dict(bb),
              "grid": list(grid.values), "engine": args.engine, "standardize": args.standardize}
    summary = f"path: {ds.p} variables x {len(grid)} grid values ({args.engine}) -> path.csv"
    return config, result, {"path.csv": path.to_csv()}, digest, summary


def cmd_tune(args):
    ds, digest = _load(args)
    hp = _hyper(args)
    grid = _grid(args, hp)
    em_cfg = _em_config(args, ds.n, ds.p)
    bb = _bb_config(args, ds.n, ds.p)
    if args.criterion == "bic":
        work = ds if ds.standardization is not None else standardize(ds)
        tr = tune_bic(work, hp, grid, args.engine, em_cfg, bb, args.threshold)
    else:
        if args.folds < 2 or args.folds > ds.n:
            raise UsageError("--folds must lie in [2, n]")
        tr = tune_cv(ds, hp, grid, args.folds, args.engine, em_cfg, bb, seed=args.seed)
    result = tr.to_dict()
    config = {"hyper": _hyper_dict(hp), "em": _em_dict(em_cfg), "bootstrap": _bb_dict(bb),
              "grid": list(grid.values), "engine": args.engine, "criterion": args.criterion,
              "folds": args.folds, "threshold": args.threshold, "standardize": args.standardize}
    summary = f"tune: best v0 = {tr.best_v0:g} by {args.criterion} over {len(grid)} values"
    return config, result, {}, digest, summary


DEFAULT_N = {"tibshirani": 40, "correlated": 50, "large_p": 100}


def cmd_simulate(args):
    from .experiments import compare_to_reference

    design = SimDesign(args.design, args.n or DEFAULT_N[args.design], args.p, args.sigma)
    hp = _hyper(args)
    if args.tuner == "fixed" and args.v0 is None:
        raise UsageError("--tuner fixed requires --v0")
    grid = _grid(args, hp)
    L = args.L if args.L is not None else (default_L(design.n, design.p) if args.method == "bbem" else None)
    spec = ExperimentSpec(
        design, args.reps, args.method, args.tuner, args.v0 if args.tuner == "fixed" else None,
        args.seed, grid, args.folds, args.K, L, args.threshold, args.theta0, args.weight_scale,
        args.frequency, hp=hp,
    )
    table = run_experiment(spec, jobs=args.jobs)
    result = table.to_dict()
    if args.reference:
        tol = args.tolerance if args.tolerance is not None else 0.0
        rep = compare_to_reference(table, args.reference, tol)
        result["comparison"] = {
            "reference": rep.reference, "citation": rep.citation, "passed": rep.passed,
            "cells": [{"cell": c.cell, "observed": c.observed, "reference": c.reference,
                       "tolerance": c.tolerance} for c in rep.cells],
        }
    stats = table.stats()
    summary = "simulate: " + ", ".join(f"{c}={stats[c]:.2f}" for c in table.columns()) + \
        f" over {table.replicates} replicates ({table.failures} failed, {table.wall_clock:.1f}s)"
    files = {"table.csv": table.to_csv(), "table.txt": table.to_text()}
    return spec.to_dict(), result, files, None, summary


def bench_trials(n: int, p: int, max_flips: int, trials: int, seed: int, v0: float = 0.01, v1: float = 100.0):
    """Time rank-l refreshes against full rebuilds on one random design.

    The refresh runs as inside EM: in place on a private copy of V made
    before the clock starts.
    """
    rng = stream(seed, "bench")
    X = rng.standard_normal((n, p))
    y = X[:, :3] @ np.array([1.0, 2.0, 3.0]) + rng.standard_normal(n)
    des = WeightedDesign(X, y)
    d = np.where(rng.random(p) < 0.05, v1, v0)
    base = build_posterior(des, d)
    t_inc, t_full, errs, sizes = [], [], [], []
    for _ in range(trials):
        l = int(rng.integers(1, max_flips + 1))
        flip = rng.choice(p, size=l, replace=False)
        d2 = d.copy()
        d2[flip] = np.where(d[flip] == v1, v0, v1)
        work = dataclasses.replace(base, V=base.V.copy())
        t0 = time.perf_counter()
        inc = update_posterior(work, flip, d2, des, refresh=False, overwrite=True)
        t1 = time.perf_counter()
        full = build_posterior(des, d2)
        t2 = time.perf_counter()
        t_inc.append(t1 - t0)
        t_full.append(t2 - t1)
        errs.append(float(np.linalg.norm(inc.V - full.V) / np.linalg.norm(full.V)))
        sizes.append(l)
    return np.array(t_inc), np.array(t_full), np.array(errs), np.array(sizes)


def cmd_bench(args):
    if args.flips < 1 or args.trials < 1:
        raise UsageError("--flips and --trials must be >= 1")
    t_inc, t_full, errs, sizes = bench_trials(args.n, args.p, args.flips, args.trials, args.seed, args.v0, args.v1)
    speedup = float(np.median(t_full) / np.median(t_inc))
    config = {"n": args.n, "p": args.p, "max_flips": args.flips, "trials": args.trials, "v0": args.v0, "v1": args.v1}
    # errors are a deterministic function of the seed; timings are not
    result = {"max_rel_fro_error": float(errs.max()), "flip_sizes": [int(s) for s in sizes],
              "timings_file": "timings.json"}
    timings = {"median_incremental_s": float(np.median(t_inc)), "median_full_s": float(np.median(t_full)),
               "speedup": speedup, "incremental_s": _floats(t_inc), "full_s": _floats(t_full)}
    summary = (f"bench: p={args.p}, n={args.n}, <= {args.flips} flips: incremental {np.median(t_inc) * 1e3:.2f} ms, "
               f"full {np.median(t_full) * 1e3:.2f} ms, speedup {speedup:.1f}x (median of {args.trials})")
    return config, result, {"timings.json": _dumps(timings)}, None, summary


HANDLERS = {"fit": cmd_fit, "ensemble": cmd_ensemble, "path": cmd_path, "tune": cmd_tune,
            "simulate": cmd_simulate, "bench": cmd_bench}


# ---------------------------------------------------------------------------
# output


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _strip_out(argv: Sequence[str]) -> list[str]:
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        out.append(a)
    return out


def _write(out: Path, files: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")


def run(argv: Sequence[str]) -> int:
    argv = list(argv)
    args = build_parser().parse_args(argv)
    if args.command == "replay":
        try:
            manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
            recorded = list(manifest["argv"])
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read manifest: {exc}") from None
        return run(recorded + ["--out", args.out])
    if getattr(args, "jobs", 1) < 1:
        raise UsageError("--jobs must be >= 1")

    config, result, extra, digest, summary = HANDLERS[args.command](args)
    files = {"result.json": _dumps(result)}
    files.update(extra)
    manifest = {
        "command": args.command,
        "argv": _strip_out(argv),
        "config": config,
        "seed": args.seed,
        "version": __version__,
        "input_sha256": digest,
        "artifacts": {k: hashlib.sha256(v.encode("utf-8")).hexdigest() for k, v in sorted(files.items())
                      if k not in TIMING_ARTIFACTS},
        "timing_artifacts": [k for k in sorted(files) if k in TIMING_ARTIFACTS],
    }
    files["manifest.json"] = _dumps(manifest)
    _write(Path(args.out), files)
    print(summary)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (np.linalg.LinAlgError, TuningError, ExperimentError, KeyError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
