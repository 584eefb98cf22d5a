import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rcgp.data import Dataset, load_csv, standardize, synth_generate, train_test_split
from rcgp.errors import InputError
from rcgp.kernels import KernelParams


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_rows(tmp_path):
    ds = load_csv(write(tmp_path, "a,b,y\n1,2,3\n4,5,6\n7,8,9\n"))
    assert ds.n == 3 and ds.d == 2
    assert np.array_equal(ds.y, [3.0, 6.0, 9.0]) and np.array_equal(ds.X[:, 1], [2.0, 5.0, 8.0])
    assert ds.provenance["target"] == "y"


def test_load_named_target_and_delimiter(tmp_path):
    ds = load_csv(write(tmp_path, "t;x\n1;2\n3;4\n"), target_column="t", delimiter=";")
    assert np.array_equal(ds.y, [1.0, 3.0]) and np.array_equal(ds.X[:, 0], [2.0, 4.0])
    ds = load_csv(write(tmp_path, "t,x\n1,2\n3,4\n", "e.csv"), target_column=0)
    assert np.array_equal(ds.y, [1.0, 3.0])


def test_load_names_bad_row(tmp_path):
    with pytest.raises(InputError, match="row 2"):
        load_csv(write(tmp_path, "x,y\n1,2\n3,abc\n5,6\n"))


def test_load_table_shaped_like_yacht(tmp_path):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((308, 7))
    lines = ["f1,f2,f3,f4,f5,f6,resistance"] + [",".join(f"{v:.6f}" for v in row) for row in A]
    ds = load_csv(write(tmp_path, "\n".join(lines) + "\n"), target_column="resistance")
    assert ds.n == 308 and ds.d == 6


@pytest.mark.parametrize("text,kw,msg", [
    ("x,y\n1,2\n", {"target_column": "z"}, "not in header"),
    ("x,y\n1,2,3\n", {}, "fields"),
    ("x,y\n1,\n", {}, "row 1"),
    ("x,y\n1,nan\n", {}, "non-finite"),
    ("x,y\n", {}, "no data"),
    ("", {}, "empty"),
    ("y\n1\n", {}, "no feature"),
    ("x,y\n1,2\n", {"target_column": 5}, "out of range"),
])
def test_load_errors(tmp_path, text, kw, msg):
    with pytest.raises(InputError, match=msg):
        load_csv(write(tmp_path, text), **kw)


def test_load_unreadable(tmp_path):
    with pytest.raises(InputError, match="cannot read"):
        load_csv(tmp_path / "missing.csv")


def test_synth_noiseless_is_deterministic():
    a = synth_generate(3, 300, noise=0.0)
    b = synth_generate(3, 300, noise=0.0)
    assert np.array_equal(a.y, b.y) and np.array_equal(a.y, a.f_true)
    assert np.allclose(a.X[:, 0], np.linspace(-5, 5, 300))
    # a smooth draw: second differences are far below first differences
    assert np.max(np.abs(np.diff(a.y, 2))) < 0.1 * np.max(np.abs(np.diff(a.y)))


def test_synth_defaults():
    ds = synth_generate(0)
    assert ds.n == 300 and ds.d == 1
    assert ds.provenance["lengthscale"] == 1.0 and ds.provenance["signal_variance"] == 1.0
    assert ds.provenance["noise"] == 0.3 and not ds.provenance["noise_is_std"]


def test_synth_noise_scale():
    ds = synth_generate(1, 2000, noise=0.3)
    assert np.var(ds.y - ds.f_true) == pytest.approx(0.3, rel=0.1)
    ds = synth_generate(1, 2000, noise=0.3, noise_is_std=True)
    assert np.var(ds.y - ds.f_true) == pytest.approx(0.09, rel=0.1)


def test_synth_marginal_variance_over_seeds():
    draws = np.array([synth_generate(s, 60, KernelParams(1.0, 1.5), noise=0.0).y for s in range(50)])
    for j in (0, 20, 45):
        col = draws[:, j]
        # the sample variance of 50 Gaussian draws has standard error s2 * sqrt(2 / 49)
        se = 1.5 * np.sqrt(2.0 / 49)
        assert abs(col.var(ddof=1) - 1.5) < 3 * se


def test_synth_errors():
    with pytest.raises(InputError):
        synth_generate(0, 0)
    with pytest.raises(InputError):
        synth_generate(0, 10, noise=-1.0)


def test_standardize_identity_on_standard_data():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((100, 3))
    X = (X - X.mean(0)) / X.std(0)
    y = rng.standard_normal(100)
    y = (y - y.mean()) / y.std()
    tr, _, tf = standardize(Dataset("d", X, y))
    assert np.max(np.abs(tr.X - X)) < 1e-12 and np.max(np.abs(tr.y - y)) < 1e-12


@given(st.integers(0, 10_000))
def test_standardize_round_trip_and_moments(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(3.0, 5.0, (40, 2))
    y = rng.normal(-2.0, 0.1, 40)
    tr, te, tf = standardize(Dataset("d", X, y), Dataset("t", X[:5] + 1, y[:5]))
    assert np.max(np.abs(tr.X.mean(0))) < 1e-12 and np.max(np.abs(tr.X.std(0) - 1)) < 1e-12
    assert abs(tr.y.mean()) < 1e-12 and abs(tr.y.std() - 1) < 1e-12
    assert np.max(np.abs(tf.inverse_X(tr.X) - X)) < 1e-12
    assert np.max(np.abs(tf.inverse_y(tr.y) - y)) < 1e-12
    assert np.allclose(te.X, tf.transform_X(X[:5] + 1))


def test_standardize_zero_variance_feature():
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    with pytest.warns(UserWarning, match="zero-variance"):
        tr, _, _ = standardize(Dataset("d", X, np.arange(10.0)))
    assert np.all(tr.X[:, 0] == 0)


def test_standardize_uses_train_only():
    rng = np.random.default_rng(4)
    train = Dataset("a", rng.standard_normal((30, 1)), rng.standard_normal(30))
    t1 = Dataset("b", rng.standard_normal((10, 1)), rng.standard_normal(10))
    t2 = Dataset("b", t1.X * 100 + 7, t1.y - 50)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        _, _, f1 = standardize(train, t1)
        _, _, f2 = standardize(train, t2)
    assert f1.y_mean == f2.y_mean and f1.y_scale == f2.y_scale
    assert np.array_equal(f1.x_mean, f2.x_mean) and np.array_equal(f1.x_scale, f2.x_scale)


def test_split_partitions():
    tr, te = train_test_split(300, 0.2, np.random.default_rng(0))
    assert te.size == 60 and tr.size == 240
    assert np.array_equal(np.sort(np.concatenate([tr, te])), np.arange(300))
    tr2, te2 = train_test_split(300, 0.2, np.random.default_rng(0))
    assert np.array_equal(tr, tr2) and np.array_equal(te, te2)
    with pytest.raises(InputError):
        train_test_split(10, 1.0, np.random.default_rng(0))


def test_dataset_subset_keeps_latent():
    ds = synth_generate(0, 20)
    sub = ds.subset([1, 3])
    assert np.array_equal(sub.f_true, ds.f_true[[1, 3]]) and sub.n == 2
