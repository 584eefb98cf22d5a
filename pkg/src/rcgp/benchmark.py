"""Train/test benchmark of GP against robust GP under outlier regimes."""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import Ablation, fit, predict_mean_var
from .data import Dataset, standardize, synth_generate, train_test_split
from .errors import InputError, RCGPError
from .kernels import EmpiricalMean
from .robustness import ContaminationSpec, contaminate
from .selection import HyperSearchConfig, optimize_hyperparams
from .sparse import InducingConfig, optimize_inducing, rcsvgp_predict_mean_var

MODELS = ("gp", "rcgp", "svgp", "rcsvgp")
SETTINGS = ("none", "uniform", "asymmetric", "focused")
REPORT_COLUMNS = ["model", "setting", "mae_mean", "mae_std", "seconds_mean", "seconds_std"]


@dataclass(frozen=True, eq=False)
class BenchmarkConfig:
    """One benchmark setting.

    ``contamination=None`` means clean training data. ``objective_gp`` is
    the hyperparameter objective of the standard GP; the robust GP always
    uses the leave-one-out objective.
    """

    dataset: Dataset
    contamination: ContaminationSpec | None = None
    models: tuple = ("gp", "rcgp")
    splits: int = 50
    test_fraction: float = 0.2
    seed: int = 0
    epsilon: float = 0.05
    ablation: Ablation = Ablation()
    restarts: int = 3
    objective_gp: str = "marginal_likelihood"
    record_timing: bool = True
    output_dir: str | None = None

    def __post_init__(self):
        if self.splits < 1:
            raise InputError("splits must be at least 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise InputError("test fraction must lie in (0, 1)")
        bad = [m for m in self.models if m not in MODELS]
        if bad:
            raise InputError(f"unknown models {bad}; choose from {MODELS}")

    @property
    def setting(self) -> str:
        return "none" if self.contamination is None else self.contamination.regime

    def echo(self) -> dict:
        return {
            "dataset": self.dataset.name,
            "provenance": {k: _plain(v) for k, v in self.dataset.provenance.items()},
            "setting": self.setting,
            "contamination": None if self.contamination is None else asdict(self.contamination),
            "models": list(self.models),
            "splits": self.splits,
            "test_fraction": self.test_fraction,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "ablation": asdict(self.ablation),
            "restarts": self.restarts,
            "objective_gp": self.objective_gp,
        }


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


@dataclass(frozen=True)
class SplitResult:
    split: int
    model: str
    setting: str
    mae: float
    mae_original: float
    seconds: float
    status: str = "ok"
    message: str = ""


@dataclass(frozen=True, eq=False)
class BenchmarkReport:
    config: dict
    rows: list
    splits: list = field(default_factory=list)
    version: str = __version__

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS + ["mae_original_mean", "mae_original_std", "failed"])
        for r in self.rows:
            w.writerow([r["model"], r["setting"]] + [_fmt(r[k]) for k in REPORT_COLUMNS[2:]]
                       + [_fmt(r["mae_original_mean"]), _fmt(r["mae_original_std"]), r["failed"]])
        return buf.getvalue()

    def splits_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["split", "model", "setting", "mae", "mae_original", "seconds", "status", "message"])
        for s in self.splits:
            w.writerow([s.split, s.model, s.setting, _fmt(s.mae), _fmt(s.mae_original), _fmt(s.seconds),
                        s.status, s.message])
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "version": self.version,
            "config": self.config,
            "rows": self.rows,
            "splits": [asdict(s) for s in self.splits],
        }
        return json.dumps(payload, indent=2, allow_nan=True) + "\n"

    def row(self, model: str, setting: str | None = None) -> dict:
        for r in self.rows:
            if r["model"] == model and (setting is None or r["setting"] == setting):
                return r
        raise KeyError((model, setting))

    def write(self, out_dir, fmt: str = "csv") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"benchmark_{self.config['dataset']}_{self.config['setting']}"
        paths = []
        if fmt == "json":
            p = out / f"{stem}.json"
            p.write_text(self.to_json())
            paths.append(p)
        else:
            p = out / f"{stem}.csv"
            p.write_text(self.to_csv())
            paths.append(p)
        p = out / f"{stem}_splits.csv"
        p.write_text(self.splits_csv())
        paths.append(p)
        return paths


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return ""
    return f"{v:.6f}"


def _run_split(config: BenchmarkConfig, k: int) -> list[SplitResult]:
    ds = config.dataset
    rng = np.random.default_rng([config.seed, k])
    tr_idx, te_idx = train_test_split(ds.n, config.test_fraction, rng)
    train, test = ds.subset(tr_idx), ds.subset(te_idx)
    if config.contamination is not None:
        spec = ContaminationSpec(config.contamination.regime, config.contamination.fraction,
                                 int(rng.integers(2**31)), config.contamination.direction)
        y_c, X_c, _ = contaminate(train.y, train.X, spec)
        train = Dataset(train.name, X_c, y_c, train.provenance, None)
    train_s, test_s, tf = standardize(train, test)
    # latent values are scored when known; otherwise the clean test targets
    target_s = test_s.f_true if test_s.f_true is not None else test_s.y
    target = test.f_true if test.f_true is not None else test.y
    mean = EmpiricalMean.fit(train_s.y)

    out = []
    for model in config.models:
        t0 = time.perf_counter()
        try:
            if model == "gp":
                hc = HyperSearchConfig(objective=config.objective_gp, restarts=config.restarts, seed=k)
                res = optimize_hyperparams(train_s.X, train_s.y, mean, "constant", hc)
                fitted = fit(train_s.X, train_s.y, res.kernel, mean, res.sigma2)
            elif model == "rcgp":
                hc = HyperSearchConfig(objective="loo", restarts=config.restarts, seed=k, epsilon=config.epsilon)
                res = optimize_hyperparams(train_s.X, train_s.y, mean, "imq", hc, config.ablation)
                fitted = fit(train_s.X, train_s.y, res.kernel, mean, res.sigma2, res.weight, config.ablation)
            else:
                ic = InducingConfig(seed=k, mean=mean, epsilon=config.epsilon, ablation=config.ablation,
                                    weight_family="constant" if model == "svgp" else "imq")
                fitted = optimize_inducing(train_s.X, train_s.y, ic).posterior(train_s.X, train_s.y, mean)
            secs = time.perf_counter() - t0
            if model in ("gp", "rcgp"):
                mu, _ = predict_mean_var(fitted, test_s.X)
            else:
                mu, _ = rcsvgp_predict_mean_var(fitted, test_s.X)
        except RCGPError as exc:
            out.append(SplitResult(k, model, config.setting, float("nan"), float("nan"), float("nan"),
                                   "failed", str(exc)))
            continue
        mae = float(np.mean(np.abs(mu - target_s)))
        mae_o = float(np.mean(np.abs(tf.inverse_y(mu) - target)))
        out.append(SplitResult(k, model, config.setting, mae, mae_o, secs if config.record_timing else 0.0))
    return out


def _workers() -> int:
    cap = os.environ.get("RCGP_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise InputError(f"RCGP_THREADS must be an integer, got {cap!r}") from None
    return n


def _stats(vals):
    a = np.asarray(vals, dtype=float)
    if a.size == 0:
        return float("nan"), float("nan")
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def run_benchmark(config: BenchmarkConfig) -> BenchmarkReport:
    """Run every split, aggregate per model and optionally write files."""
    workers = min(_workers(), config.splits)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per_split = list(ex.map(_run_split, [config] * config.splits, range(config.splits)))
    else:
        per_split = [_run_split(config, k) for k in range(config.splits)]
    results = [r for rs in per_split for r in rs]

    rows = []
    for model in config.models:
        ok = [r for r in results if r.model == model and r.status == "ok"]
        mae_m, mae_s = _stats([r.mae for r in ok])
        mo_m, mo_s = _stats([r.mae_original for r in ok])
        sec_m, sec_s = _stats([r.seconds for r in ok])
        rows.append({
            "model": model, "setting": config.setting,
            "mae_mean": mae_m, "mae_std": mae_s,
            "seconds_mean": sec_m, "seconds_std": sec_s,
            "mae_original_mean": mo_m, "mae_original_std": mo_s,
            "failed": sum(1 for r in results if r.model == model and r.status != "ok"),
        })
    report = BenchmarkReport(config.echo(), rows, results)
    if config.output_dir is not None:
        report.write(config.output_dir)
    return report


def synthetic_dataset(seed: int = 0, n: int = 300, noise_is_std: bool = False) -> Dataset:
    return synth_generate(seed, n, noise_is_std=noise_is_std)


def setting_spec(setting: str, fraction: float = 0.10, seed: int = 0) -> ContaminationSpec | None:
    if setting not in SETTINGS:
        raise InputError(f"unknown setting {setting!r}; choose from {SETTINGS}")
    if setting == "none":
        return None
    return ContaminationSpec(setting, fraction, seed)
