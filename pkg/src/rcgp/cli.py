"""Command-line interface.

Every subcommand writes one table to stdout, or to ``--out`` when given.
A config file (``key = value`` lines under ``[section]`` headers) can
supply any flag: keys in ``[global]`` apply to every subcommand, keys in
a section named after the subcommand apply to it alone, and explicit
flags override both. Exit codes: 0 success, 1 input error, 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bayesopt import BOConfig, TEST_OBJECTIVES, run_bo
from .benchmark import SETTINGS, BenchmarkConfig, _workers, run_benchmark, setting_spec
from .core import Ablation, fit, log_pseudo_marginal, predict_mean_var
from .data import Dataset, load_csv, synth_generate
from .errors import InputError, NumericalError
from .kernels import EmpiricalMean, KernelParams, ZeroMean
from .robustness import ContaminationSpec, FitConfig, contaminate, default_offsets, pif_curve
from .selection import HyperSearchConfig, loo_objective, optimize_hyperparams, weight_for_family
from .sparse import InducingConfig, optimize_inducing, rcsvgp_predict_mean_var


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _table_text(columns, rows, fmt) -> str:
    if fmt == "json":
        rows = [[None if isinstance(v, float) and not math.isfinite(v) else v for v in r] for r in rows]
        return json.dumps([dict(zip(columns, r)) for r in rows], indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return "" if not math.isfinite(v) else f"{v:.10g}"
    return v


def _emit(args, name, columns, rows):
    _write(args, name, _table_text(columns, rows, args.format))


def _write(args, name, text):
    if args.out is None:
        sys.stdout.write(text)
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.{args.format}"
    path.write_text(text)
    print(path, file=sys.stderr)


# ---------------------------------------------------------------------------
# Shared argument groups
# ---------------------------------------------------------------------------


def _add_global(p):
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--config", help="config file with [global] and per-command sections")
    p.add_argument("--out", help="output directory (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def _add_data(p):
    p.add_argument("--dataset", default="synthetic", help="'synthetic' or a CSV path")
    p.add_argument("--target", default="-1", help="target column name or index for CSV data")
    p.add_argument("--n", type=int, default=300, help="synthetic sample size")
    p.add_argument("--noise", type=float, default=0.3, help="synthetic noise variance")
    p.add_argument("--noise-is-std", action="store_true", help="read --noise as a standard deviation")


def _add_model(p, models=("gp", "rcgp")):
    p.add_argument("--model", choices=models, default=models[-1])
    p.add_argument("--lengthscale", type=float, help="kernel lengthscale (default: optimised)")
    p.add_argument("--signal-variance", type=float, help="kernel signal variance (default: optimised)")
    p.add_argument("--sigma2", type=float, help="noise variance (default: optimised)")
    p.add_argument("--weight", choices=("imq", "se"), default="imq", help="robust weight family")
    p.add_argument("--epsilon", type=float, default=0.05, help="outlier fraction for the soft threshold")
    p.add_argument("--mean", choices=("empirical", "zero"), default="empirical")
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--no-shrinkage", action="store_true")
    p.add_argument("--no-noise-reweighting", action="store_true")


def _load(args) -> Dataset:
    if args.dataset == "synthetic":
        return synth_generate(args.seed, args.n, noise=args.noise, noise_is_std=args.noise_is_std)
    return load_csv(args.dataset, args.target)


def _mean(args, y):
    return EmpiricalMean.fit(y) if args.mean == "empirical" else ZeroMean()


def _ablation(args) -> Ablation:
    return Ablation(args.no_shrinkage, args.no_noise_reweighting)


def _family(args):
    return "constant" if args.model in ("gp", "svgp") else args.weight


def _fit_model(args, ds: Dataset):
    """Fit with given hyperparameters, optimising the ones left unset."""
    mean = _mean(args, ds.y)
    abl = _ablation(args)
    family = _family(args)
    fixed = args.lengthscale is not None and args.signal_variance is not None and args.sigma2 is not None
    if fixed:
        kernel = KernelParams(args.lengthscale, args.signal_variance)
        weight = weight_for_family(family, ds.X, ds.y, mean, args.epsilon)
        return fit(ds.X, ds.y, kernel, mean, args.sigma2, weight, abl), None
    objective = "marginal_likelihood" if family == "constant" else "loo"
    res = _search(args, ds, mean, family, objective, abl)
    return fit(ds.X, ds.y, res.kernel, mean, res.sigma2, res.weight, abl), res


def _search(args, ds, mean, family, objective, abl):
    if args.lengthscale is not None or args.signal_variance is not None:
        k0 = KernelParams(args.lengthscale or 1.0, args.signal_variance or float(np.var(ds.y)) or 1.0)
    else:
        k0 = None
    hc = HyperSearchConfig(initial_kernel=k0, initial_sigma2=args.sigma2, objective=objective,
                           restarts=args.restarts, seed=args.seed, epsilon=args.epsilon)
    res = optimize_hyperparams(ds.X, ds.y, mean, family, hc, abl)
    if res.warning:
        print(f"warning: {res.warning}", file=sys.stderr)
    return res


def _weight_c(weight) -> float:
    return float(getattr(weight, "c", float("nan")))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args):
    ds = _load(args)
    cols = [f"x{j}" for j in range(ds.d)] + ["y", "f"]
    f = ds.f_true if ds.f_true is not None else np.full(ds.n, np.nan)
    rows = [list(map(float, x)) + [float(y), float(fi)] for x, y, fi in zip(ds.X, ds.y, f)]
    _emit(args, "synth", cols, rows)


def cmd_contaminate(args):
    ds = _load(args)
    spec = ContaminationSpec(args.regime, args.fraction, args.seed, args.direction)
    y, X, mask = contaminate(ds.y, ds.X, spec)
    cols = [f"x{j}" for j in range(ds.d)] + ["y", "outlier"]
    rows = [list(map(float, x)) + [float(v), int(o)] for x, v, o in zip(X, y, mask)]
    _emit(args, "contaminated", cols, rows)


def cmd_fit(args):
    ds = _load(args)
    model, res = _fit_model(args, ds)
    lpm = log_pseudo_marginal(model) if not (args.no_shrinkage or args.no_noise_reweighting) else float("nan")
    rows = [
        ["model", args.model], ["n", ds.n],
        ["lengthscale", float(np.atleast_1d(model.kernel.lengthscale)[0])],
        ["signal_variance", model.kernel.signal_variance], ["sigma2", model.sigma2],
        ["c", _weight_c(model.weight)], ["loo", loo_objective(model)], ["log_pseudo_marginal", lpm],
    ]
    _emit(args, "fit", ["key", "value"], rows)


def cmd_predict(args):
    ds = _load(args)
    model, _ = _fit_model(args, ds)
    if args.at is not None:
        X_star = load_csv(args.at, -1).X if args.at_has_target else _load_points(args.at)
    else:
        lo, hi = ds.X.min(axis=0), ds.X.max(axis=0)
        if ds.d != 1:
            raise InputError("--grid works for one-dimensional inputs; pass --at for more")
        X_star = np.linspace(lo[0], hi[0], args.grid)[:, None]
    mu, var = predict_mean_var(model, X_star)
    cols = [f"x{j}" for j in range(X_star.shape[1])] + ["mean", "var"]
    rows = [list(map(float, x)) + [float(m), float(v)] for x, m, v in zip(X_star, mu, var)]
    _emit(args, "predict", cols, rows)


def _load_points(path) -> np.ndarray:
    try:
        A = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read points from {path}: {exc}") from exc
    return A


def cmd_loo_opt(args):
    ds = _load(args)
    mean = _mean(args, ds.y)
    family = _family(args)
    objective = args.objective or ("marginal_likelihood" if family == "constant" else "loo")
    res = _search(args, ds, mean, family, objective, _ablation(args))
    rows = [[it, float(v)] for it, v in res.trace]
    summary = {
        "model": args.model, "objective": objective, "initial_objective": res.initial_objective,
        "final_objective": res.objective, "lengthscale": float(np.atleast_1d(res.kernel.lengthscale)[0]),
        "signal_variance": res.kernel.signal_variance, "sigma2": res.sigma2, "c": _weight_c(res.weight),
    }
    if args.format == "json":
        _write(args, "loo_opt", json.dumps({"result": summary, "trace": rows}, indent=2) + "\n")
    else:
        _emit(args, "loo_opt", ["key", "value"], [[k, v] for k, v in summary.items()])
        if args.out is not None:
            _emit(args, "loo_opt_trace", ["iteration", "objective"], rows)


def cmd_pif(args):
    ds = _load(args)
    if not 0 <= args.index < ds.n:
        raise InputError(f"--index {args.index} out of range for n={ds.n}")
    mean = _mean(args, ds.y)
    if args.dataset == "synthetic" and args.lengthscale is None and args.sigma2 is None:
        # the generating hyperparameters
        kernel, sigma2 = KernelParams(1.0, 1.0), args.noise**2 if args.noise_is_std else args.noise
    elif args.lengthscale is None or args.signal_variance is None or args.sigma2 is None:
        res = _search(args, ds, mean, _family(args), "marginal_likelihood" if args.model == "gp" else "loo",
                      _ablation(args))
        kernel, sigma2 = res.kernel, res.sigma2
    else:
        kernel, sigma2 = KernelParams(args.lengthscale, args.signal_variance), args.sigma2
    weight = weight_for_family(_family(args), ds.X, ds.y, mean, args.epsilon)
    cfg = FitConfig(kernel, sigma2, mean, weight, _ablation(args))
    grid = ds.y[args.index] + default_offsets(math.sqrt(sigma2), args.points, args.low, args.high)
    curve = pif_curve(ds.X, ds.y, cfg, args.index, grid)
    rows = [[float(o), float(k)] for o, k in zip(curve.offsets, curve.kl)]
    _emit(args, f"pif_{args.model}", ["offset", "kl"], rows)


def cmd_svgp(args):
    ds = _load(args)
    y = ds.y
    if args.outliers != "none":
        y, _, _ = contaminate(ds.y, ds.X, ContaminationSpec(args.outliers, args.fraction, args.seed))
    mean = _mean(args, y)
    kernel = None
    if args.lengthscale is not None and args.signal_variance is not None:
        kernel = KernelParams(args.lengthscale, args.signal_variance)
    ic = InducingConfig(m=args.m, seed=args.seed, kernel=kernel, sigma2=args.sigma2, mean=mean,
                        weight_family=_family(args), epsilon=args.epsilon, ablation=_ablation(args))
    res = optimize_inducing(ds.X, y, ic)
    if res.warning:
        print(f"warning: {res.warning}", file=sys.stderr)
    vp = res.posterior(ds.X, y, mean)
    mu, _ = rcsvgp_predict_mean_var(vp, ds.X)
    rmse = float(np.sqrt(np.mean((mu - ds.f_true) ** 2))) if ds.f_true is not None else float("nan")
    rows = [
        ["model", args.model], ["m", res.U.shape[0]], ["objective", res.objective],
        ["lengthscale", float(res.kernel.lengthscale)], ["signal_variance", res.kernel.signal_variance],
        ["sigma2", res.sigma2], ["c", _weight_c(res.weight)], ["rmse_latent", rmse],
    ]
    _emit(args, f"svgp_{args.model}", ["key", "value"], rows)


def _bo_one(objective, config):
    return run_bo(objective, config)


def cmd_bo(args):
    configs = [BOConfig(args.surrogate, args.acquisition, args.contamination, args.iterations, args.seed + s,
                        args.lam, args.n_init, args.budget, args.restarts, args.epsilon)
               for s in range(args.seeds)]
    workers = min(_workers(), len(configs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            states = list(ex.map(_bo_one, [args.objective] * len(configs), configs))
    else:
        states = [_bo_one(args.objective, c) for c in configs]
    for st in states:
        if st.aborted:
            print(f"warning: seed {st.seed}: {st.aborted}", file=sys.stderr)
    T = min(len(st.cumulative_regret) for st in states)
    if T == 0:
        raise NumericalError("no run completed an iteration")
    R = np.array([st.cumulative_regret[:T] for st in states])
    S = np.array([st.seconds[:T] for st in states])
    std = R.std(axis=0, ddof=1) if len(states) > 1 else np.zeros(T)
    rows = [[t + 1, float(R[:, t].mean()), float(std[t]), float(S[:, t].mean())] for t in range(T)]
    _emit(args, f"bo_{args.objective}_{args.surrogate}", ["iteration", "mean_regret", "std_regret", "seconds"], rows)


def cmd_benchmark(args):
    ds = _load(args)
    models = tuple(m.strip() for m in args.models.split(",") if m.strip())
    spec = setting_spec(args.outliers, args.fraction, args.seed)
    cfg = BenchmarkConfig(ds, spec, models, args.splits, args.test_fraction, args.seed, args.epsilon,
                          _ablation(args), args.restarts, record_timing=not args.no_timing)
    report = run_benchmark(cfg)
    if args.out is not None:
        for p in report.write(args.out, args.format):
            print(p, file=sys.stderr)
    else:
        sys.stdout.write(report.to_json() if args.format == "json" else report.to_csv())


# ---------------------------------------------------------------------------
# Parser and config handling
# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="rcgp", description="Robust and conjugate Gaussian process tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="draw the synthetic GP dataset")
    _add_global(p)
    _add_data(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("contaminate", help="inject outliers into a dataset")
    _add_global(p)
    _add_data(p)
    p.add_argument("--regime", choices=SETTINGS[1:], default="uniform")
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--direction", choices=("subtract", "add"), default="subtract")
    p.set_defaults(func=cmd_contaminate)

    p = sub.add_parser("fit", help="fit GP or RCGP and report hyperparameters")
    _add_global(p)
    _add_data(p)
    _add_model(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="fit and predict at new inputs")
    _add_global(p)
    _add_data(p)
    _add_model(p)
    p.add_argument("--at", help="CSV of query inputs (header row, feature columns)")
    p.add_argument("--at-has-target", action="store_true", help="the --at file has a trailing target column")
    p.add_argument("--grid", type=int, default=200, help="grid size over the training range for 1-d data")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("loo-opt", help="hyperparameter search with trace")
    _add_global(p)
    _add_data(p)
    _add_model(p)
    p.add_argument("--objective", choices=("loo", "marginal_likelihood"))
    p.set_defaults(func=cmd_loo_opt)

    p = sub.add_parser("pif", help="posterior influence curve for one contaminated point")
    _add_global(p)
    _add_data(p)
    _add_model(p)
    p.add_argument("--index", type=int, default=150)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--low", type=float, default=1e-2, help="smallest offset in noise standard deviations")
    p.add_argument("--high", type=float, default=1e2, help="largest offset in noise standard deviations")
    p.set_defaults(func=cmd_pif)

    p = sub.add_parser("svgp", help="sparse variational fit (SVGP or RCSVGP)")
    _add_global(p)
    _add_data(p)
    _add_model(p, ("svgp", "rcsvgp"))
    p.add_argument("--m", type=int, help="inducing points (default ceil(sqrt(n)))")
    p.add_argument("--outliers", choices=SETTINGS, default="none")
    p.add_argument("--fraction", type=float, default=0.1)
    p.set_defaults(func=cmd_svgp)

    p = sub.add_parser("bo", help="Bayesian optimisation regret traces")
    _add_global(p)
    p.add_argument("--objective", choices=sorted(TEST_OBJECTIVES), default="branin")
    p.add_argument("--surrogate", choices=("gp", "rcgp"), default="rcgp")
    p.add_argument("--acquisition", choices=("ucb", "pi"), default="ucb")
    p.add_argument("--contamination", type=float, default=0.0, help="probability an evaluation is an outlier")
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--lam", type=float, default=2.0)
    p.add_argument("--n-init", type=int, default=5)
    p.add_argument("--budget", type=int, default=2048)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.set_defaults(func=cmd_bo)

    p = sub.add_parser("benchmark", help="train/test MAE benchmark")
    _add_global(p)
    _add_data(p)
    p.add_argument("--outliers", choices=SETTINGS, default="none")
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--models", default="gp,rcgp", help="comma list from gp,rcgp,svgp,rcsvgp")
    p.add_argument("--splits", type=int, default=50)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--no-shrinkage", action="store_true")
    p.add_argument("--no-noise-reweighting", action="store_true")
    p.add_argument("--no-timing", action="store_true", help="record zero seconds for byte-identical reports")
    p.set_defaults(func=cmd_benchmark)
    return parser, sub.choices


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _config_defaults(path, command, subparser) -> dict:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise InputError(f"malformed config {path}: {exc}") from exc
    actions = {a.dest: a for a in subparser._actions if a.option_strings}
    out = {}
    for section in ("global", command):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            dest = key.strip().replace("-", "_")
            if dest in ("config", "help"):
                continue
            action = actions.get(dest)
            if action is None:
                if section == "global":
                    continue  # global keys may belong to other commands
                raise InputError(f"config key {key!r} in [{section}] is not a flag of '{command}'")
            out[dest] = _convert(action, raw, key)
    return out


def _convert(action, raw: str, key: str):
    raw = raw.strip()
    if isinstance(action, argparse._StoreTrueAction):
        v = raw.lower()
        if v not in _TRUE | _FALSE:
            raise InputError(f"config key {key!r} expects a boolean, got {raw!r}")
        return v in _TRUE
    try:
        val = action.type(raw) if action.type else raw
    except (TypeError, ValueError):
        raise InputError(f"config key {key!r}: cannot parse {raw!r}") from None
    if action.choices is not None and val not in action.choices:
        raise InputError(f"config key {key!r}: {raw!r} is not one of {list(action.choices)}")
    return val


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    if not argv:
        sys.stderr.write(parser.format_help())
        return 1
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            sys.stderr.write(parser.format_help())
            return 1
        if args.config:
            sp = subparsers[args.command]
            sp.set_defaults(**_config_defaults(args.config, args.command, sp))
            args = parser.parse_args(argv)
        args.func(args)
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
