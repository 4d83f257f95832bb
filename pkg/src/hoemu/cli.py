"""Command-line interface: design, simulate, fit, infer, bench and curves.

Exit status is 0 on success, 2 for configuration errors, 3 for data
errors and 4 for numerical failures. Errors are reported on stderr as a
readable message followed by a one-line JSON record.
"""

import argparse
import contextlib
import json
import os
import sys
import time
import warnings

import numpy as np

from . import bench, design, emulate, forward, infer, material
from .config import DIRECTIONS, RunConfig, resolve
from .errors import ConfigError, DataError, HoemuError
from .gp.local import LocalGPConfig
from .gp.lowrank import LowRankConfig
from .io import atomic_write_text, dumps, write_json

METHODS = {"out": "output", "output": "output", "loss": "loss"}
LOSS_NAMES = {"euc": "euclidean", "euclidean": "euclidean", "mah": "mahalanobis", "mahalanobis": "mahalanobis"}


def _parse_set(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip().replace("-", "_")] = value
    return out


def _config(args, **flag_values):
    cfg = resolve(args.config, **_parse_set(args.set))
    extra = {"threads": args.threads}
    extra.update(flag_values)
    return cfg.with_overrides(**extra)


def _emit(cfg):
    sys.stdout.write(cfg.dumps())
    return 0


def _note(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


def _require(path, what):
    if not path:
        raise ConfigError(f"no {what} given")
    if not os.path.exists(path):
        raise DataError(f"{what} {path} does not exist")
    return path


def _theta_arg(text):
    try:
        theta = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"--theta expects comma-separated numbers: {exc}") from exc
    return material.validate_theta(theta)


def local_config(cfg):
    return LocalGPConfig(k=cfg.k, init=cfg.init, restarts=cfg.restarts, noise_init=cfg.noise_init, seed=cfg.seed)


def lowrank_config(cfg, framework):
    rank = cfg.rank_output if framework == "output" else cfg.rank_loss
    return LowRankConfig(n_r=cfg.n_r, k=rank, seed=cfg.lowrank_seed)


def optimizer_config(cfg, interpolator):
    strategy = infer.GLOBAL_SEARCH if interpolator == "local" else infer.CG_MULTISTART
    lo = (cfg.lo,) * material.N_THETA
    hi = (cfg.hi,) * material.N_THETA
    return infer.OptimizerConfig(
        strategy=strategy,
        trial_points=cfg.trial_points,
        stage_one_points=cfg.stage_one_points,
        starts=cfg.starts,
        maxiter=cfg.maxiter,
        local_runs=cfg.local_runs,
        lo=lo,
        hi=hi,
        fd_step=cfg.fd_step,
        seed=cfg.seed,
    )


def stretch_grid(cfg):
    return np.linspace(cfg.lambda_min, cfg.lambda_max, cfg.n_lambda)


def loss_spec(cfg, ts):
    return emulate.LossSpec.from_training(cfg.loss, ts, cfg.sigma)


def build_emulator(cfg, ts, y0=None):
    """Fit the emulator selected by ``cfg`` (``y0`` needed for loss emulation)."""
    if cfg.framework == "output":
        return emulate.fit_output_emulator(
            ts, cfg.interpolator, local_config(cfg), lowrank_config(cfg, "output")
        )
    if y0 is None:
        raise ConfigError("loss emulation needs observed data (--data)")
    return emulate.fit_loss_emulator(
        ts,
        y0,
        loss_spec(cfg, ts),
        cfg.interpolator,
        local_config(cfg),
        lowrank_config(cfg, "loss"),
        log_transform=cfg.log_transform,
    )


# -- subcommands -------------------------------------------------------------


def cmd_design(args):
    cfg = _config(args, n_train=args.n, skip=args.skip, lo=args.lo, hi=args.hi)
    if args.emit_config:
        return _emit(cfg)
    if not 1 <= args.dim <= design.MAX_DIM:
        raise ConfigError(f"--dim must lie in [1, {design.MAX_DIM}]")
    if args.seed_index < 0:
        raise ConfigError("--seed-index must be non-negative")
    U = design.SobolGenerator(args.dim, cfg.skip).points(cfg.skip + args.seed_index, cfg.n_train)
    Theta = design.scale_to_box(U, cfg.lo, cfg.hi)
    text = forward.format_design(Theta)
    if args.out:
        atomic_write_text(args.out, text)
        _note(args, f"wrote {cfg.n_train} design points to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_simulate(args):
    cfg = _config(args)
    if args.emit_config:
        return _emit(cfg)
    if (args.design is None) == (args.theta is None):
        raise ConfigError("give exactly one of --design or --theta")
    if args.theta is not None:
        y = forward.forward_analytic(_theta_arg(args.theta))
        text = forward.format_observed(y)
    else:
        Theta = forward.load_design(_require(args.design, "design file"), (cfg.lo, cfg.hi))
        text = forward.format_dataset(forward.forward_batch(Theta))
    if args.out:
        atomic_write_text(args.out, text)
        _note(args, f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _method_flags(args):
    return {
        "framework": METHODS.get(args.method, args.method) if args.method else None,
        "interpolator": args.interp,
        "loss": LOSS_NAMES.get(args.loss, args.loss) if args.loss else None,
        "k": args.k,
        "seed": getattr(args, "seed", None),
    }


def cmd_fit(args):
    cfg = _config(args, train=args.train, observed=args.data, **_method_flags(args))
    if args.emit_config:
        return _emit(cfg)
    if not args.out:
        raise ConfigError("fit needs --out for the emulator file")
    ts = forward.load_dataset(_require(cfg.train, "training dataset"))
    y0 = forward.load_observed(_require(cfg.observed, "observed-data file")) if cfg.framework == "loss" else None
    t0 = time.perf_counter()
    em = build_emulator(cfg, ts, y0)
    emulate.save_emulator(em, args.out, cfg.train)
    _note(args, f"fitted {cfg.framework} emulator ({cfg.interpolator}) in {time.perf_counter() - t0:.2f} s -> {args.out}")
    return 0


def _curves(cfg, theta, hessian, out_dir, stem="curve"):
    paths = []
    for direction in DIRECTIONS:
        lams = stretch_grid(cfg)
        if hessian is not None:
            bands = infer.curve_confidence_bands(theta, hessian, direction, lams, cfg.n_samples, cfg.level, cfg.seed)
            rows = bands.rows()
            header = "lambda,sigma,ci_lower,ci_upper"
        else:
            rows = material.stretch_stress_curve(theta, direction, lams)
            header = "lambda,sigma"
        body = "\n".join(",".join(repr(float(v)) for v in row) for row in rows)
        path = os.path.join(out_dir, f"{stem}_{direction}.csv")
        atomic_write_text(path, header + "\n" + body + "\n")
        paths.append(path)
    return paths


def cmd_infer(args):
    cfg = _config(args, train=args.train, observed=args.data, emulator=args.emulator, **_method_flags(args))
    if args.emit_config:
        return _emit(cfg)
    y0 = forward.load_observed(_require(cfg.observed, "observed-data file"))
    t0 = time.perf_counter()
    if cfg.emulator:
        em = emulate.load_emulator(_require(cfg.emulator, "emulator file"))
        interpolator = em.interpolator
        if isinstance(em, emulate.LossEmulator):
            if not np.array_equal(em.y0, y0):
                raise DataError("observed data differ from the data the loss emulator was built on")
            objective = emulate.SurrogateObjective(em)
        else:
            objective = emulate.SurrogateObjective(em, y0, loss_spec(cfg, em.ts))
    else:
        ts = forward.load_dataset(_require(cfg.train, "training dataset"))
        em = build_emulator(cfg, ts, y0)
        interpolator = cfg.interpolator
        loss = loss_spec(cfg, ts) if cfg.framework == "output" else None
        objective = emulate.SurrogateObjective(em, y0 if cfg.framework == "output" else None, loss)
    result = infer.minimize(objective, optimizer_config(cfg, interpolator))
    lo, hi = np.full(material.N_THETA, cfg.lo), np.full(material.N_THETA, cfg.hi)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result.with_uncertainty(objective, cfg.hessian_step, lo, hi)
    record = {"schema": "hoemu.inference/1", "config": cfg.to_dict(), **result.record()}
    record["hessian_warnings"] = sorted({str(w.message) for w in caught})
    text = dumps(record)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    if args.curves:
        for p in _curves(cfg, result.theta, result.hessian, args.curves):
            _note(args, f"wrote {p}")
    _note(args, f"theta_hat={np.array2string(result.theta, precision=6)} loss={result.loss:.6g} "
          f"({time.perf_counter() - t0:.1f} s, {result.diagnostics['n_evals']} evaluations)")
    return 0


def cmd_bench(args):
    cfg = _config(args, train=args.train, test=args.test, seed=args.seed)
    if args.emit_config:
        return _emit(cfg)
    train = forward.load_dataset(_require(cfg.train, "training dataset"))
    test = forward.load_dataset(_require(cfg.test, "test dataset"))
    if args.cases is not None:
        if args.cases < 1:
            raise ConfigError("--cases must be >= 1")
        test = test.subset(np.arange(min(args.cases, len(test))))
    combos = bench.ALL_COMBOS if not args.combos else [bench.MethodCombo.parse(c) for c in args.combos.split(",")]
    settings = bench.BenchSettings(
        local=local_config(cfg),
        output_rank=lowrank_config(cfg, "output"),
        loss_rank=lowrank_config(cfg, "loss"),
        global_search=optimizer_config(cfg, "local"),
        cg=optimizer_config(cfg, "lowrank"),
        sigma=cfg.sigma,
    )

    def progress(combo, case, mse):
        _note(args, f"{combo.label} case {case}: " + ("failed" if mse is None else f"mse={mse:.4g}"))

    report = bench.run_benchmark(train, test, combos, cfg.seed, settings, progress)
    out = args.out or "."
    record = report.record()
    record["config"] = cfg.to_dict()
    write_json(os.path.join(out, "bench_report.json"), record)
    rows = bench.summarize(report)
    atomic_write_text(os.path.join(out, "bench_summary.txt"), bench.format_summary(rows))
    for c in report.combos:
        col = "\n".join("" if np.isnan(v) else repr(float(v)) for v in report.mse[c.label])
        atomic_write_text(os.path.join(out, f"mse_{c.label}.csv"), "mse\n" + col + "\n")
    sys.stdout.write(bench.format_summary(rows))
    for label, seconds in report.runtime.items():
        _note(args, f"{label}: {seconds:.1f} s")
    return 0


def cmd_curves(args):
    cfg = _config(args)
    if args.emit_config:
        return _emit(cfg)
    if (args.theta is None) == (args.result is None):
        raise ConfigError("give exactly one of --theta or --result")
    hessian = None
    if args.theta is not None:
        theta = _theta_arg(args.theta)
    else:
        try:
            with open(_require(args.result, "inference result"), encoding="utf-8") as fh:
                rec = json.load(fh)
            theta = np.array(rec["theta"], dtype=float)
            hessian = None if rec.get("hessian") is None else np.array(rec["hessian"], dtype=float)
        except (ValueError, KeyError) as exc:
            raise DataError(f"cannot read inference result {args.result}: {exc}") from exc
    for p in _curves(cfg, theta, hessian, args.out or ".", args.stem):
        _note(args, f"wrote {p}")
    return 0


# -- parser ------------------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config knob (repeatable)")
    p.add_argument("--emit-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("--threads", type=int, help="cap on BLAS/OpenMP threads (0 leaves the default)")
    p.add_argument("--quiet", action="store_true", help="suppress progress messages")


def _methods(p):
    p.add_argument("--method", choices=sorted(METHODS), help="output or loss emulation")
    p.add_argument("--interp", choices=["local", "lowrank"], help="surrogate interpolator")
    p.add_argument("--loss", choices=sorted(LOSS_NAMES), help="loss function")
    p.add_argument("--k", type=int, help="local-GP neighbour count")


def build_parser():
    parser = argparse.ArgumentParser(prog="hoemu", description="GP emulation for Holzapfel-Ogden parameter inference")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="Sobol design over the parameter box")
    _common(p)
    p.add_argument("--n", type=int, help="number of points")
    p.add_argument("--dim", type=int, default=material.N_THETA)
    p.add_argument("--skip", type=int, help="sequence index of the first point (default 1)")
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--seed-index", type=int, default=0, help="points to skip after --skip (extends a design)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="run the analytic forward model")
    _common(p)
    p.add_argument("--design", help="design file with theta columns")
    p.add_argument("--theta", help="single parameter vector a,b,c,d (writes an observed-data file)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit and save an emulator")
    _common(p)
    _methods(p)
    p.add_argument("--train")
    p.add_argument("--data", help="observed data (loss emulation)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("infer", help="estimate parameters from observed data")
    _common(p)
    _methods(p)
    p.add_argument("--data", help="observed-data file")
    p.add_argument("--train", help="training dataset (fit on the fly)")
    p.add_argument("--emulator", help="saved emulator instead of --train")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="result file (stdout when omitted)")
    p.add_argument("--curves", help="directory for stretch-stress curve files with confidence bands")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="synthetic recovery benchmark")
    _common(p)
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--combos", help="comma-separated labels such as output-local-euclidean (default all 8)")
    p.add_argument("--cases", type=int, help="use only the first N test cases")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("curves", help="stretch-stress curves, with bands from an inference result")
    _common(p)
    p.add_argument("--theta")
    p.add_argument("--result", help="inference result file")
    p.add_argument("--stem", default="curve")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_curves)
    return parser


def _thread_limit(n):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        threads = args.threads if args.threads is not None else RunConfig().with_env().threads
        with _thread_limit(threads):
            return args.func(args)
    except HoemuError as exc:
        code = exc.exit_code
        print(f"hoemu: error: {exc}", file=sys.stderr)
        record = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}}
        if getattr(exc, "line", None) is not None:
            record["error"]["line"] = exc.line
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
