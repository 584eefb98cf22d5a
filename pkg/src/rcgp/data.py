"""Datasets: CSV ingestion, synthetic GP draws and train-only standardisation."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, NumericalError
from .kernels import KernelParams, as_covariates, as_targets, gram_matrix


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates, targets and where they came from.

    ``f_true`` holds noise-free latent values when they are known
    (synthetic draws) and is ``None`` otherwise.
    """

    name: str
    X: np.ndarray
    y: np.ndarray
    provenance: dict = field(default_factory=dict)
    f_true: np.ndarray | None = None

    def __post_init__(self):
        X = as_covariates(self.X)
        y = as_targets(self.y, X.shape[0])
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.f_true is not None:
            object.__setattr__(self, "f_true", as_targets(self.f_true, X.shape[0], "f_true"))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        f = None if self.f_true is None else self.f_true[idx]
        return Dataset(name or self.name, self.X[idx], self.y[idx], dict(self.provenance), f)


def load_csv(path, target_column: str | int = -1, delimiter: str = ",") -> Dataset:
    """Read a headed, numeric CSV file.

    ``target_column`` is a header name or a column index. Row numbers in
    error messages count data rows from 1 (the header is row 0).
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh, delimiter=delimiter))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InputError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if isinstance(target_column, str) and not target_column.lstrip("-").isdigit():
        if target_column not in header:
            raise InputError(f"target column {target_column!r} not in header {header}")
        t = header.index(target_column)
    else:
        t = int(target_column)
        if not -len(header) <= t < len(header):
            raise InputError(f"target column index {t} out of range for {len(header)} columns")
        t %= len(header)
    data = []
    for r, row in enumerate(rows[1:], start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            bad = next(j for j, c in enumerate(row) if not _is_float(c))
            raise InputError(f"{path}: non-numeric value {row[bad]!r} at row {r}, column {header[bad]!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"{path}: missing or non-finite value at row {r}")
        data.append(vals)
    if not data:
        raise InputError(f"{path} has no data rows")
    A = np.array(data)
    X = np.delete(A, t, axis=1)
    if X.shape[1] == 0:
        raise InputError(f"{path} has no feature columns")
    prov = {"source": "csv", "path": str(path), "target": header[t]}
    return Dataset(path.stem, X, A[:, t], prov)


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def synth_generate(
    seed: int = 0,
    n: int = 300,
    kernel: KernelParams = KernelParams(1.0, 1.0),
    noise: float = 0.3,
    noise_is_std: bool = False,
    low: float = -5.0,
    high: float = 5.0,
) -> Dataset:
    """Draw ``f`` from a zero-mean GP on a uniform grid and add Gaussian noise.

    ``noise`` is a variance unless ``noise_is_std`` is set.
    """
    if n < 1:
        raise InputError("n must be at least 1")
    if noise < 0:
        raise InputError("noise must be non-negative")
    X = np.linspace(low, high, n)[:, None]
    rng = np.random.default_rng(seed)
    K = gram_matrix(kernel, X)
    jitter = kernel.nugget
    for _ in range(8):
        try:
            L = np.linalg.cholesky(K)
            break
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-10)
            K = gram_matrix(kernel.with_updates(jitter=jitter), X)
    else:
        raise NumericalError("Gram matrix of the synthetic design is not positive definite")
    f = L @ rng.standard_normal(n)
    std = noise if noise_is_std else math.sqrt(noise)
    y = f + std * rng.standard_normal(n)
    prov = {
        "source": "synthetic", "seed": seed, "n": n,
        "lengthscale": kernel.lengthscale, "signal_variance": kernel.signal_variance,
        "noise": noise, "noise_is_std": noise_is_std,
    }
    return Dataset("synthetic", X, y, prov, f)


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Affine map fitted on training data: ``(x - x_mean) / x_scale``."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    def transform_X(self, X) -> np.ndarray:
        return (as_covariates(X) - self.x_mean) / self.x_scale

    def transform_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_scale

    def inverse_X(self, Z) -> np.ndarray:
        return as_covariates(Z) * self.x_scale + self.x_mean

    def inverse_y(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.y_scale + self.y_mean

    def apply(self, ds: Dataset) -> Dataset:
        f = None if ds.f_true is None else self.transform_y(ds.f_true)
        return Dataset(ds.name, self.transform_X(ds.X), self.transform_y(ds.y), dict(ds.provenance), f)


def fit_standardizer(train: Dataset) -> Standardizer:
    xm = train.X.mean(axis=0)
    xs = train.X.std(axis=0)
    zero = xs == 0
    if np.any(zero):
        warnings.warn(f"zero-variance features {np.flatnonzero(zero).tolist()} mapped to 0", stacklevel=2)
        xs = np.where(zero, 1.0, xs)
    ym = float(train.y.mean())
    ys = float(train.y.std())
    if ys == 0:
        warnings.warn("targets have zero variance; leaving their scale unchanged", stacklevel=2)
        ys = 1.0
    return Standardizer(xm, xs, ym, ys)


def standardize(train: Dataset, test: Dataset | None = None):
    """Fit the map on ``train`` only and apply it to both splits."""
    tr = fit_standardizer(train)
    return tr.apply(train), (None if test is None else tr.apply(test)), tr


def train_test_split(n: int, test_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < test_fraction < 1.0:
        raise InputError(f"test fraction must lie in (0, 1), got {test_fraction}")
    n_test = max(1, int(round(test_fraction * n)))
    if n_test >= n:
        raise InputError("test split would leave no training data")
    perm = rng.permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])
