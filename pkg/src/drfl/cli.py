"""Command-line entry point: ``drfl train | sweep | cv | volume``.

Exit codes: 0 success, 1 usage/config/data error, 2 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .admm import ClientError, RunRecord
from .baselines import METHODS, train
from .config import ConfigError, load_config, load_yaml, override, parse_grid, parse_schedule, prepare_data, truth_from
from .data import DataError
from .experiments import content_hash, cross_validate, run_noise_sweep, write_manifest, write_rows
from .inner_solver import SolverError
from .model import SpecError
from .transport import containment_curve, default_rho_grid, volume_ratio

log = logging.getLogger("drfl")

THREADS_ENV = "DRFL_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    cfg = load_config(args.config)
    return override(cfg, threads=args.threads, max_iters=getattr(args, "max_iters", None), c=getattr(args, "c", None))


def _methods(text: str) -> list[str]:
    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in METHODS]
    if bad or not names:
        raise ConfigError(f"unknown method(s) {bad}; expected a subset of {', '.join(METHODS)}")
    return names


def cmd_train(args) -> int:
    cfg = _load(args)
    if args.method not in METHODS:
        raise ConfigError(f"unknown method {args.method!r}")
    prep = prepare_data(cfg)
    out = _outdir(args.out)
    w, rec, converged = train(args.method, cfg.problem, prep.clients, cfg.solver)
    np.savetxt(out / "w.csv", w.reshape(1, -1), delimiter=",", fmt="%.17g")
    record = {"method": args.method, "converged": bool(converged)}
    if isinstance(rec, RunRecord):
        rec.write_trace(out / "trace.csv")
        record.update(
            iterations=rec.iterations,
            final_objective=rec.final_objective,
            worst_case_losses=rec.worst_case_losses,
            z=rec.z,
            pi=rec.pi,
        )
    else:
        record.update(objective=rec.objective, client_losses=rec.client_losses)
    write_manifest(
        out / "manifest.json",
        command="train",
        spec=cfg.problem.to_dict(),
        seed=cfg.seed,
        input_hash=content_hash(*prep.inputs_hash_arrays),
        record=record,
        w=w,
    )
    if not converged:
        print(f"warning: {args.method} did not converge; wrote the last iterate", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    methods = _methods(args.methods)
    schedule = parse_schedule(load_yaml(args.schedule), cfg.seed) if args.schedule else cfg.schedule
    if schedule is None:
        raise ConfigError("no noise schedule: pass --schedule or add a 'schedule' section")
    prep = prepare_data(cfg)
    out = _outdir(args.out)
    models, all_converged = {}, True
    for m in methods:
        w, _, conv = train(m, cfg.problem, prep.clients, cfg.solver)
        models[m] = w
        all_converged &= bool(conv)
    rows = run_noise_sweep(models, prep.X_test, prep.y_test, schedule, cfg.task)
    write_rows(rows, out / "sweep.csv")
    write_manifest(
        out / "manifest.json",
        command="sweep",
        spec=cfg.problem.to_dict(),
        seed=cfg.seed,
        input_hash=content_hash(*prep.inputs_hash_arrays),
        methods=methods,
        schedule={"mode": schedule.mode, "grid": schedule.grid, "fixed": schedule.fixed, "ratio": schedule.ratio},
        converged=all_converged,
    )
    return EXIT_OK if all_converged else EXIT_NONCONVERGED


def cmd_cv(args) -> int:
    cfg = _load(args)
    grid = parse_grid(load_yaml(args.grid)) if args.grid else cfg.grid
    k = args.folds or cfg.folds
    prep = prepare_data(cfg)
    out = _outdir(args.out)
    res = cross_validate(args.method, cfg.problem, prep.clients, grid, k, cfg.seed, cfg.solver, cfg.solver.threads)
    res.write_csv(out / "cv.csv")
    write_manifest(
        out / "manifest.json",
        command="cv",
        method=args.method,
        spec=cfg.problem.to_dict(),
        seed=cfg.seed,
        folds=k,
        input_hash=content_hash(*prep.inputs_hash_arrays),
        best=res.best,
        fold_resamples=res.fold_resamples,
    )
    converged = all(r["converged"] for r in res.table)
    return EXIT_OK if converged else EXIT_NONCONVERGED


def cmd_volume(args) -> int:
    vol = {}
    truth = None
    seed = 0
    if args.config:
        cfg = load_config(args.config)
        vol, seed, truth = cfg.volume, cfg.seed, truth_from(cfg)
    n_samples = int(vol.get("n_samples", 1000))
    rho = default_rho_grid(int(vol.get("rho_points", 200)))
    curve = containment_curve(truth, n_samples, int(vol.get("n_trials", 100)), rho, seed)
    volume = volume_ratio(truth, vol.get("levels"), int(vol.get("n_random", 10_000)), seed, curve, n_samples)
    out = _outdir(args.out)
    curve.write_csv(out / "containment.csv")
    volume.write_csv(out / "volume.csv")
    write_manifest(
        out / "manifest.json",
        command="volume",
        seed=seed,
        truth=(truth.to_dict() if truth else None),
        n_samples=n_samples,
        n_trials=curve.n_trials,
        resampled=curve.resampled,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drfl", description="Distributionally robust federated learning toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("config", nargs=None if config_required else "?", help="YAML run configuration")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=_default_threads(), help=f"worker threads (default ${THREADS_ENV} or 1)")

    t = sub.add_parser("train", help="train one model")
    common(t)
    t.add_argument("--method", default="drfl")
    t.add_argument("--max-iters", dest="max_iters", type=int)
    t.add_argument("--c", type=float, help="ADMM step size")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="train methods and evaluate on a test-noise sweep")
    common(s)
    s.add_argument("--schedule", help="YAML noise schedule (overrides the config section)")
    s.add_argument("--methods", default=",".join(METHODS))
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("cv", help="k-fold grid search")
    common(c)
    c.add_argument("--method", default="drfl", choices=METHODS)
    c.add_argument("--grid", help="YAML grid with rho/kappa/theta lists")
    c.add_argument("--folds", type=int)
    c.set_defaults(func=cmd_cv)

    v = sub.add_parser("volume", help="containment and volume Monte Carlo study")
    common(v, config_required=False)
    v.set_defaults(func=cmd_volume)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, SpecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, ClientError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
