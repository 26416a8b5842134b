"""Command-line surface: data generation, fitting, prediction, the
space-as-input reshape, benchmark sweeps, and a gradient self-check.

Subcommands and exit codes:

    gen       synthetic LHS design + GP outputs + train/test split
    fit       fit an emulator from CSVs, write a model JSON
    predict   predict at test inputs from a saved model
    reshape   fold output coordinates into the design as an extra input
    bench     timing/accuracy sweeps over n or m, CSV report
    gradcheck analytic gradient vs central differences, prints max error

    0 success, 2 usage error, 3 data error, 4 numerical error

CSV conventions: comma delimiter, mandatory header row (x1..xp for
designs, y1..yk for outputs, "index" for row-index files), floats written
in shortest round-trip form so write-then-read is lossless. Reported fit
and predict times are measured around the library calls, never around
file I/O.
"""

import argparse
import csv
import os
import sys
import time
import warnings

import numpy as np

from .design import lhs_sample, sample_gp
from .errors import (InvalidParameterError, NumericalError, ParseError,
                     ShapeError)
from .fitting import FitOptions, FittedEmulator, fit
from .kernels import KernelSpec
from .predict import ppe_weights, predict_exact, predict_nn, relative_rmse, rmse
from .vecchia import (vecchia_factors, vecchia_marginal_grad,
                      vecchia_marginal_neg2log)


# ---------------------------------------------------------------------------
# CSV I/O

def read_matrix(path):
    """Read a headed numeric CSV into an (n, c) float array.

    Malformed content raises ParseError carrying the 1-based file line
    and, for bad cells, the 1-based column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file")
        width = len(header)
        if width == 0:
            raise ParseError(f"{path}: empty header", row=1)
        rows = []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != width:
                raise ParseError(
                    f"{path}: expected {width} fields, got {len(record)}",
                    row=lineno)
            out = np.empty(width)
            for j, cell in enumerate(record):
                try:
                    out[j] = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: could not parse {cell!r} as a number",
                        row=lineno, column=j + 1)
            rows.append(out)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return np.vstack(rows)


def read_index(path):
    """Read a one-column index CSV into an int array."""
    vals = read_matrix(path)
    if vals.shape[1] != 1:
        raise ParseError(f"{path}: index file must have one column")
    idx = vals[:, 0]
    if np.any(idx != np.floor(idx)) or np.any(idx < 0):
        raise ParseError(f"{path}: indices must be nonnegative integers")
    return idx.astype(np.int64)


def write_matrix(path, arr, prefix="x"):
    """Write an (n, c) array as CSV with headers prefix1..prefixC."""
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write(",".join(f"{prefix}{j + 1}" for j in range(arr.shape[1])))
        fh.write("\n")
        for row in arr:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def write_index(path, idx):
    with open(path, "w") as fh:
        fh.write("index\n")
        for v in idx:
            fh.write(f"{int(v)}\n")


# ---------------------------------------------------------------------------
# shared helpers

def _parse_floats(text, what):
    try:
        vals = [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise InvalidParameterError(f"could not parse {what} list {text!r}")
    if not vals:
        raise InvalidParameterError(f"{what} list is empty")
    return np.asarray(vals)


def _parse_ints(text, what):
    vals = _parse_floats(text, what)
    if np.any(vals != np.floor(vals)):
        raise InvalidParameterError(f"{what} list must be integers: {text!r}")
    return [int(v) for v in vals]


def _apply_threads(args):
    threads = getattr(args, "threads", None)
    if threads is None:
        return
    if threads < 1:
        raise InvalidParameterError(f"--threads must be >= 1, got {threads}")
    import numba
    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))


def _load_training(design_path, output_path, index_path=None):
    X = read_matrix(design_path)
    Y = read_matrix(output_path)
    if Y.shape[0] != X.shape[0]:
        raise ShapeError(
            f"design has {X.shape[0]} rows but output has {Y.shape[0]}")
    if index_path is not None:
        idx = read_index(index_path)
        if idx.size and idx.max() >= X.shape[0]:
            raise ShapeError(
                f"index {idx.max()} out of range for {X.shape[0]} rows")
        X = X[idx]
        Y = Y[idx]
    return X, Y


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen(args):
    _apply_threads(args)
    if args.n < 2:
        raise InvalidParameterError(f"--n must be >= 2, got {args.n}")
    ranges = _parse_floats(args.ranges, "ranges")
    if ranges.size == 1 and args.p > 1:
        ranges = np.full(args.p, ranges[0])
    if ranges.size != args.p:
        raise InvalidParameterError(
            f"--ranges needs {args.p} values, got {ranges.size}")
    spec = KernelSpec(args.family, ranges, nugget_ratio=args.nugget_ratio)
    seq = np.random.SeedSequence(args.seed)
    s_design, s_outputs, s_split = seq.spawn(3)
    design = lhs_sample(args.n, args.p, seed=s_design)
    Y = sample_gp(design, spec, k=args.k, sigma2=args.sigma2, seed=s_outputs)
    perm = np.random.default_rng(s_split).permutation(args.n)
    n_train = (args.n + 1) // 2
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    os.makedirs(args.out, exist_ok=True)
    write_matrix(os.path.join(args.out, "design.csv"), design.points, "x")
    write_matrix(os.path.join(args.out, "output.csv"), Y, "y")
    write_index(os.path.join(args.out, "train_index.csv"), train_idx)
    write_index(os.path.join(args.out, "test_index.csv"), test_idx)
    print(f"gen: wrote {args.n} runs ({n_train} train, "
          f"{args.n - n_train} test), p={args.p}, k={args.k} to {args.out}")
    return 0


def _fit_options_from(args):
    return FitOptions(
        maxiter=args.maxiter,
        subsample_fraction=args.subsample_fraction,
        subsample_seed=args.subsample_seed,
    )


def cmd_fit(args):
    _apply_threads(args)
    X, Y = _load_training(args.design, args.output, args.train_index)
    t0 = time.perf_counter()
    model = fit(X, Y, family=args.family, trend=args.trend, m=args.m,
                method=args.method, prior=args.prior,
                nugget_ratio=args.nugget_ratio,
                options=_fit_options_from(args))
    fit_seconds = time.perf_counter() - t0
    if args.embed:
        model.save(args.model)
    else:
        model.save(args.model, design_csv=args.design, output_csv=args.output,
                   train_index_csv=args.train_index)
    if args.dump_plan:
        if model.plan is None:
            warnings.warn("no conditioning plan for the exact method; "
                          "--dump-plan skipped")
        else:
            with open(args.dump_plan, "w") as fh:
                fh.write(model.plan.to_json())
    conv = model.diagnostics.get("converged_any", False)
    lam_txt = ",".join(f"{v:.6g}" for v in model.spec.ranges)
    print(f"fit: method={model.method} n={model.n} k={model.k} "
          f"ranges=[{lam_txt}] converged={conv} seconds={fit_seconds:.3f}")
    if args.report:
        _append_report(args.report, {
            "n": model.n, "m": model.m if model.m is not None else "",
            "k": model.k, "method": model.method,
            "fit_seconds": f"{fit_seconds:.6f}", "predict_seconds": "",
            "rmse": "", "relative_rmse": "",
            "ranges": ";".join(repr(float(v)) for v in model.spec.ranges),
            "converged": str(bool(conv)).lower(),
        })
    return 0


def cmd_predict(args):
    _apply_threads(args)
    model = FittedEmulator.load(args.model)
    Xt = read_matrix(args.test)
    t0 = time.perf_counter()
    if args.m_pred is not None:
        res = predict_nn(model, Xt, args.m_pred)
    else:
        res = predict_exact(model, Xt)
    predict_seconds = time.perf_counter() - t0
    msg = f"predict: n_test={Xt.shape[0]} seconds={predict_seconds:.3f}"
    if args.m_pred is not None and args.compare_full:
        t1 = time.perf_counter()
        res_full = predict_exact(model, Xt)
        full_seconds = time.perf_counter() - t1
        ratio = full_seconds / max(predict_seconds, 1e-12)
        gap = float(np.max(np.abs(res.mean - res_full.mean)))
        msg += (f" full_seconds={full_seconds:.3f} speedup={ratio:.2f}"
                f" max_mean_gap={gap:.3e}")
    os.makedirs(args.out, exist_ok=True)
    write_matrix(os.path.join(args.out, "pred_mean.csv"), res.mean, "y")
    write_matrix(os.path.join(args.out, "pred_sd.csv"), res.sd(), "y")
    if args.weights:
        W = ppe_weights(model, Xt)
        write_matrix(os.path.join(args.out, "weights.csv"), W, "w")
    if args.truth:
        truth = read_matrix(args.truth)
        err = rmse(res.mean, truth)
        rel = relative_rmse(res.mean, truth)
        msg += f" rmse={err:.6g} relative_rmse={rel:.6g}"
    print(msg)
    return 0


def reshape_space_as_input(X, Y, coord, mode="full", seed=None):
    """Fold the k output columns into scalar responses.

    coord gives the output coordinate of each column. Mode "full" pairs
    every run with every column: (n*k, p+1) design, (n*k, 1) output, run
    index varying slowest. Mode "sampled" keeps n rows, pairing each run
    with one uniformly drawn column.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    coord = np.asarray(coord, dtype=np.float64).reshape(-1)
    n, p = X.shape
    k = Y.shape[1]
    if Y.shape[0] != n:
        raise ShapeError(f"design has {n} rows but output has {Y.shape[0]}")
    if coord.size != k:
        raise ShapeError(
            f"coordinate vector has {coord.size} entries for {k} output "
            f"columns")
    if mode == "full":
        Xr = np.repeat(X, k, axis=0)
        cr = np.tile(coord, n)
        yr = Y.reshape(-1)
    elif mode == "sampled":
        rng = np.random.default_rng(seed)
        jsel = rng.integers(0, k, size=n)
        Xr = X
        cr = coord[jsel]
        yr = Y[np.arange(n), jsel]
    else:
        raise InvalidParameterError(f"unknown reshape mode {mode!r}")
    return np.column_stack([Xr, cr]), yr.reshape(-1, 1)


def cmd_reshape(args):
    X = read_matrix(args.design)
    Y = read_matrix(args.output)
    coord = read_matrix(args.coord)
    if coord.shape[1] != 1:
        raise ShapeError("coordinate file must have one column")
    Xr, yr = reshape_space_as_input(X, Y, coord[:, 0], args.mode, args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_matrix(os.path.join(args.out, "design.csv"), Xr, "x")
    write_matrix(os.path.join(args.out, "output.csv"), yr, "y")
    print(f"reshape: mode={args.mode} wrote {Xr.shape[0]} rows with "
          f"{Xr.shape[1]} input columns to {args.out}")
    return 0


BENCH_COLUMNS = ["n", "m", "k", "method", "fit_seconds", "predict_seconds",
                 "rmse", "relative_rmse", "ranges", "converged"]


def _append_report(path, row):
    exists = os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        if not exists:
            writer.writeheader()
        writer.writerow(row)


def _bench_one(n, m, k, method, spec_true, args, seed):
    seq = np.random.SeedSequence(seed)
    s_design, s_outputs, s_split = seq.spawn(3)
    total = 2 * n
    design = lhs_sample(total, args.p, seed=s_design)
    Y = sample_gp(design, spec_true, k=k, sigma2=1.0, seed=s_outputs)
    perm = np.random.default_rng(s_split).permutation(total)
    tr, te = np.sort(perm[:n]), np.sort(perm[n:])
    Xtr, Ytr = design.points[tr], Y[tr]
    Xte, Yte = design.points[te], Y[te]
    t0 = time.perf_counter()
    model = fit(Xtr, Ytr, family=args.family, trend=args.trend, m=m,
                method=method, options=_fit_options_from(args))
    fit_seconds = time.perf_counter() - t0
    t1 = time.perf_counter()
    res = predict_exact(model, Xte)
    predict_seconds = time.perf_counter() - t1
    return {
        "n": n, "m": m if method == "vecchia" else "", "k": k,
        "method": method,
        "fit_seconds": f"{fit_seconds:.6f}",
        "predict_seconds": f"{predict_seconds:.6f}",
        "rmse": f"{rmse(res.mean, Yte):.8g}",
        "relative_rmse": f"{relative_rmse(res.mean, Yte):.8g}",
        "ranges": ";".join(repr(float(v)) for v in model.spec.ranges),
        "converged": str(bool(
            model.diagnostics.get("converged_any", False))).lower(),
    }


def cmd_bench(args):
    _apply_threads(args)
    sweep_n = _parse_ints(args.sweep_n, "sweep-n") if args.sweep_n else []
    sweep_m = _parse_ints(args.sweep_m, "sweep-m") if args.sweep_m else []
    if not sweep_n and not sweep_m:
        raise InvalidParameterError(
            "bench needs at least one of --sweep-n / --sweep-m")
    ranges = _parse_floats(args.ranges, "ranges")
    if ranges.size == 1 and args.p > 1:
        ranges = np.full(args.p, ranges[0])
    if ranges.size != args.p:
        raise InvalidParameterError(
            f"--ranges needs {args.p} values, got {ranges.size}")
    spec_true = KernelSpec(args.family, ranges)
    methods = [tok.strip() for tok in args.methods.split(",") if tok.strip()]
    for met in methods:
        if met not in ("vecchia", "exact"):
            raise InvalidParameterError(f"unknown method {met!r}")
    configs = [(n, args.m_fixed) for n in sweep_n]
    configs += [(args.n_fixed, m) for m in sweep_m]
    if os.path.exists(args.out):
        os.remove(args.out)
    for cfg_i, (n, m) in enumerate(configs):
        for method in methods:
            row = _bench_one(n, m, args.k, method, spec_true, args,
                             seed=args.seed + cfg_i)
            _append_report(args.out, row)
            print(f"bench: n={n} m={row['m']} method={method} "
                  f"fit={row['fit_seconds']}s predict={row['predict_seconds']}s "
                  f"relative_rmse={row['relative_rmse']}")
    print(f"bench: report written to {args.out}")
    return 0


def gradient_fd_instance(rng, n_max=100):
    """One randomized, well-conditioned gradient-check instance.

    Ranges are shrunk until every conditional variance stays above 1e-5
    and no factorization jitter engages; differencing the objective is
    meaningless below that floor because the value itself is computed
    through a cancellation of the same magnitude.
    """
    from .ordering import default_scale, maximin_order, nn_condition
    from .trend import TrendBasis
    n = int(rng.integers(10, n_max + 1))
    p = int(rng.integers(1, 6))
    k = int(rng.integers(1, 4))
    X = rng.random((n, p))
    Y = rng.standard_normal((n, k))
    fam = ["matern32", "matern52", "pow_exp:1.5",
           "pow_exp:1.9"][int(rng.integers(4))]
    trend = TrendBasis(["constant", "linear"][int(rng.integers(2))])
    m = min([3, 10, n - 1][int(rng.integers(3))], n - 1)
    spec = KernelSpec(fam, np.ones(p))
    scale = default_scale(X)
    plan = nn_condition(X, maximin_order(X, scale), m, scale)
    lam = np.exp(rng.uniform(np.log(0.15), np.log(1.0), size=p))
    for _ in range(40):
        fac = vecchia_factors(X, Y, plan, spec.with_ranges(lam), trend)
        if fac.omega.min() >= 1e-5 and fac.jitters.max() == 0.0:
            return X, Y, plan, spec, trend, lam
        lam = 0.7 * lam
    return None


def gradient_fd_error(X, Y, plan, spec, trend, lam):
    """Max relative gap between the analytic gradient and a fourth-order
    central difference of the objective, over the range dimensions."""
    grad = vecchia_marginal_grad(
        vecchia_factors(X, Y, plan, spec.with_ranges(lam), trend))

    def value(v):
        return vecchia_marginal_neg2log(
            vecchia_factors(X, Y, plan, spec.with_ranges(v), trend))

    worst = 0.0
    for j in range(lam.size):
        h = 3e-4 * lam[j]
        step = np.zeros_like(lam)
        step[j] = h
        fd = (value(lam - 2 * step) - 8.0 * value(lam - step)
              + 8.0 * value(lam + step) - value(lam + 2 * step)) / (12.0 * h)
        worst = max(worst, abs(grad[j] - fd) / max(1.0, abs(fd)))
    return worst


def cmd_gradcheck(args):
    _apply_threads(args)
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    done = 0
    while done < args.instances:
        inst = gradient_fd_instance(rng)
        if inst is None:
            continue
        worst = max(worst, gradient_fd_error(*inst))
        done += 1
    print(f"gradcheck: max relative gradient error {worst:.3e} over "
          f"{args.instances} instances (tolerance {args.tol:g})")
    if not np.isfinite(worst) or worst > args.tol:
        raise NumericalError(
            f"gradient check failed: {worst:.3e} > {args.tol:g}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_common_fit_flags(sp):
    sp.add_argument("--family", default="matern32",
                    help="kernel family (matern32, matern52, pow_exp:<alpha>)")
    sp.add_argument("--trend", default="constant",
                    choices=["constant", "linear", "none"])
    sp.add_argument("--maxiter", type=int, default=100)
    sp.add_argument("--subsample-fraction", type=float, default=None,
                    help="estimate ranges on this fraction of output columns")
    sp.add_argument("--subsample-seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vecem",
        description="Scalable GP emulation with nearest-neighbor likelihoods")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen", help="synthetic design + GP outputs")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, required=True,
                    help="total runs; split evenly into train/test")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--ranges", required=True,
                    help="comma-separated true ranges (unit-cube units)")
    sp.add_argument("--family", default="matern32")
    sp.add_argument("--sigma2", type=float, default=1.0)
    sp.add_argument("--nugget-ratio", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=None)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("fit", help="fit an emulator from CSVs")
    sp.add_argument("--design", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--train-index", default=None)
    sp.add_argument("--model", required=True, help="model JSON output path")
    sp.add_argument("--m", type=int, default=30)
    sp.add_argument("--method", default="vecchia",
                    choices=["vecchia", "exact"])
    sp.add_argument("--prior", default="jr", choices=["jr", "none"])
    sp.add_argument("--nugget-ratio", type=float, default=0.0)
    sp.add_argument("--embed", action="store_true",
                    help="embed training data in the model file")
    sp.add_argument("--dump-plan", default=None,
                    help="write the conditioning plan JSON here")
    sp.add_argument("--report", default=None,
                    help="append a timing row to this CSV")
    sp.add_argument("--threads", type=int, default=None)
    _add_common_fit_flags(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("predict", help="predict from a saved model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--test", required=True, help="test design CSV")
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth", default=None)
    sp.add_argument("--m-pred", type=int, default=None,
                    help="nearest-neighbor prediction with this many points")
    sp.add_argument("--compare-full", action="store_true",
                    help="also time full prediction and report the speedup")
    sp.add_argument("--weights", action="store_true",
                    help="write training-output weights per test point")
    sp.add_argument("--threads", type=int, default=None)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("reshape",
                        help="fold output coordinates into the design")
    sp.add_argument("--design", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--coord", required=True,
                    help="one-column CSV: coordinate of each output column")
    sp.add_argument("--mode", default="full", choices=["full", "sampled"])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_reshape)

    sp = sub.add_parser("bench", help="timing/accuracy sweeps")
    sp.add_argument("--out", required=True, help="report CSV path")
    sp.add_argument("--sweep-n", default=None,
                    help="comma-separated training sizes (fixed m)")
    sp.add_argument("--sweep-m", default=None,
                    help="comma-separated conditioning sizes (fixed n)")
    sp.add_argument("--n-fixed", type=int, default=1600)
    sp.add_argument("--m-fixed", type=int, default=30)
    sp.add_argument("--p", type=int, default=4)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--ranges", default="0.5,0.8,1.2,0.3")
    sp.add_argument("--methods", default="vecchia,exact")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=None)
    _add_common_fit_flags(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("gradcheck",
                        help="analytic gradient vs central differences")
    sp.add_argument("--instances", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-5)
    sp.add_argument("--threads", type=int, default=None)
    sp.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except InvalidParameterError as exc:
        print(f"vecem: {exc}", file=sys.stderr)
        return 2
    except (ParseError, ShapeError) as exc:
        print(f"vecem: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"vecem: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"vecem: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
