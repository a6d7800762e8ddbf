"""Command-line entry point: ``gradsparse <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
degeneracy.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path

import numpy as np
from scipy import stats as sps

from . import bench, gradmodel, simharness
from .compressors import COMPRESSORS, make_compressor
from .errors import (
    AllZeroInput,
    ConfigError,
    DegenerateInput,
    DivergenceDetected,
    GradSparseError,
    NonConvergence,
)
from .sparsify import k_from_ratio
from .tracefile import read_trace, write_trace

log = logging.getLogger("gradsparse")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
FIT_QUANTILES = (0.9, 0.99, 0.999)
FIT_RATIOS = (0.1, 0.01, 0.001)
FAMILIES = ("exponential", "gamma", "gpd")
TRAIN_COLUMNS = ("iter", "loss", "k_hat", "eta", "M", "elapsed_ns")
TRACE_LAWS = ("gaussian", "laplace", "gamma", "gpd", "powerlaw")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


# -- fit --

def fit_report(grad, family: str) -> list[tuple]:
    """Rows ``(family, kind, name, value)``: parameters, quantiles and thresholds."""
    g = gradmodel.as_gradient(grad)
    absg = np.abs(g)
    families = FAMILIES if family == "all" else (family,)
    rows = []
    for fam in families:
        params = gradmodel.fit(fam, absg)
        for name, value in vars(params).items():
            rows.append((fam, "param", name, float(value) if not isinstance(value, bool) else int(value)))
        for q in FIT_QUANTILES:
            rows.append((fam, "quantile_empirical", q, float(np.quantile(absg, q))))
            rows.append((fam, "quantile_model", q, gradmodel.threshold_from_params(params, 1.0 - q)))
        for delta in FIT_RATIOS:
            rows.append((fam, "threshold", delta, gradmodel.threshold_from_params(params, delta)))
    return rows


def cmd_fit(args) -> str:
    rows = fit_report(read_trace(args.trace), args.family)
    return _csv_text(("family", "kind", "name", "value"), rows)


# -- compress --

def compress_row(grad, compressor: str, delta: float, seed: int = 0) -> dict:
    g = gradmodel.as_gradient(grad)
    comp = make_compressor(compressor, delta, seed=seed)
    sparse, st = comp(g, 0)
    k = g.size if delta >= 1.0 else k_from_ratio(delta, g.size)
    return {
        "compressor": compressor, "delta": float(delta), "d": g.size, "k": k, "k_hat": st.k_hat,
        "k_hat_over_k": st.k_hat / k, "eta": float(st.threshold), "elapsed_ns": st.elapsed_ns,
    }


def cmd_compress(args) -> str:
    row = compress_row(read_trace(args.trace), args.compressor, args.delta, args.seed or 0)
    return _csv_text(tuple(row), [tuple(row.values())])


# -- train --

def train_rows(result: simharness.TrainResult) -> list[tuple]:
    rows = []
    for r in result.records:
        m = r.stages[0] if r.stages else ""
        rows.append((r.iteration, r.loss, float(np.mean(r.k_hat)), float(np.mean(r.eta)), m,
                     int(np.mean(r.elapsed_ns))))
    return rows


def train_summary(result: simharness.TrainResult) -> dict:
    """Final loss and mean k_hat/k with its 90% confidence half-width over iterations."""
    q = np.array([r.k_hat_mean / r.k_target for r in result.records])
    n = q.size
    half = float(sps.t.ppf(0.95, n - 1) * q.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return {
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
        "mean_k_hat_over_k": float(q.mean()),
        "ci90_half_width": half,
        "iterations": n,
    }


def cmd_train(args) -> str:
    from .config import load_config

    cfg = load_config(args.config, seed=args.seed, out=args.out)
    if cfg.train is None:
        raise ConfigError(["train: section required for the train command"])
    try:
        result = simharness.train(cfg.train)
    except DivergenceDetected as exc:
        _write_train(cfg.out, simharness.TrainResult(math.nan, exc.records, None))
        raise
    summary = _write_train(cfg.out, result)
    return _csv_text(("metric", "value"), summary.items())


def _write_train(out: Path, result) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    (out / "train.csv").write_text(_csv_text(TRAIN_COLUMNS, train_rows(result)))
    if not result.records:
        return {}
    summary = train_summary(result)
    (out / "train_summary.csv").write_text(_csv_text(("metric", "value"), summary.items()))
    return summary


# -- bench --

def cmd_bench(args) -> str:
    from .config import load_config

    cfg = load_config(args.config, seed=args.seed, out=args.out)
    spec = cfg.bench if cfg.bench is not None else bench.BenchSpec(seed=cfg.seed)
    cfg.out.mkdir(parents=True, exist_ok=True)

    def progress(row):
        log.info("%s d=%d delta=%g median=%.3f ms speedup=%.2f", row.compressor, row.size, row.delta,
                 row.median_ns / 1e6, row.speedup_vs_topk)

    rows = bench.bench_run(spec, progress=progress)
    path = cfg.out / "bench.csv"
    bench.write_csv(rows, path)
    return path.read_text()


# -- diagnose --

def diagnose_ks(d: int, points: int = 60) -> np.ndarray:
    ks = np.unique(np.round(np.logspace(0, math.log10(d), points)).astype(np.int64))
    return ks[(ks >= 1) & (ks <= d)]


def cmd_diagnose(args) -> str:
    g = read_trace(args.trace)
    report = gradmodel.compressibility_check(g)
    curve = gradmodel.sparsification_error_curve(g, diagnose_ks(g.size))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "sigma_k.csv").write_text(_csv_text(("k", "sigma_k"), zip(curve.ks.tolist(), curve.errors.tolist())))
    c2 = curve.bound_constant(report.decay_exponent) if math.isfinite(report.decay_exponent) else math.inf
    fields = {
        "decay_exponent": report.decay_exponent,
        "prefactor": report.prefactor,
        "fit_residual": report.fit_residual,
        "is_compressible": int(report.is_compressible),
        "degenerate": int(report.degenerate),
        "n_fit": report.n_fit,
        "sigma_bound_c2": c2,
    }
    return _csv_text(("metric", "value"), fields.items())


# -- trace-gen --

def generate_trace(law: str, size: int, seed: int, scale: float = 1.0, shape: float | None = None) -> np.ndarray:
    """Symmetric synthetic gradient whose magnitudes follow ``law``."""
    rng = np.random.default_rng(seed)
    signs = rng.choice(np.array([-1.0, 1.0]), size)
    if law == "gaussian":
        return scale * rng.standard_normal(size)
    if law == "laplace":
        return rng.laplace(0.0, scale, size)
    if law == "gamma":
        return signs * rng.gamma(0.8 if shape is None else shape, scale, size)
    if law == "gpd":
        c = 0.2 if shape is None else shape
        return signs * sps.genpareto.rvs(c, scale=scale, size=size, random_state=rng)
    if law == "powerlaw":
        p = 0.7 if shape is None else shape
        return signs * scale * np.arange(1, size + 1, dtype=np.float64) ** -p
    raise GradSparseError(f"unknown law {law!r}")


def cmd_trace_gen(args) -> str:
    g = generate_trace(args.law, args.size, args.seed or 0, args.scale, args.shape)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trace(out, g, dtype=np.float32 if args.dtype == "f32" else np.float64)
    return _csv_text(("path", "law", "size", "dtype"), [(str(out), args.law, args.size, args.dtype)])


# -- plumbing --

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides the config file)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=["csv"], default="csv")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gradsparse", description="Gradient sparsification toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", parents=[common], help="fit sparsity-inducing laws to a trace")
    s.add_argument("trace")
    s.add_argument("--family", choices=FAMILIES + ("all",), default="all")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("compress", parents=[common], help="compress a trace once and report k_hat")
    s.add_argument("trace")
    s.add_argument("--compressor", default="sidco_e", help=f"one of: {', '.join(COMPRESSORS)}")
    s.add_argument("--delta", type=float, required=True)
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("train", parents=[common], help="simulated distributed training run")
    s.set_defaults(func=cmd_train, needs_config=True)

    s = sub.add_parser("bench", parents=[common], help="compression latency microbenchmark")
    s.set_defaults(func=cmd_bench, needs_config=True)

    s = sub.add_parser("diagnose", parents=[common], help="compressibility report and sigma_k curve")
    s.add_argument("trace")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("trace-gen", parents=[common], help="write a synthetic gradient trace")
    s.add_argument("--law", choices=TRACE_LAWS, required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--shape", type=float, default=None, help="gamma/GPD shape or power-law exponent")
    s.add_argument("--dtype", choices=["f32", "f64"], default="f64")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_trace_gen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "needs_config", False) and not args.config:
        print("error: --config is required for this command", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "compress" and args.compressor not in COMPRESSORS:
        print(f"error: unknown compressor {args.compressor!r}; valid names: {', '.join(COMPRESSORS)}",
              file=sys.stderr)
        return EXIT_CONFIG
    try:
        sys.stdout.write(args.func(args))
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateInput, AllZeroInput, NonConvergence, DivergenceDetected) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GradSparseError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
