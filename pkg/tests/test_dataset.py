import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tda.dataset import (
    Normalizer,
    TabularDataset,
    fit_normalizer,
    load_csv,
    minibatches,
    normalized,
    write_csv,
)
from tda.errors import ValidationError


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_with_label_column(tmp_path):
    p = write(tmp_path, "a,b,y\n1,2,0\n3,4,1\n5,6,0\n")
    ds = load_csv(p, label_column="y")
    assert ds.X.shape == (3, 2)
    np.testing.assert_array_equal(ds.labels, [0, 1, 0])
    assert ds.feature_names == ["a", "b"]
    assert ds.name == "d"


def test_load_without_label_column(tmp_path):
    p = write(tmp_path, "a,b,y\n1,2,0\n3,4,1\n5,6,0\n")
    ds = load_csv(p)
    assert ds.X.shape == (3, 3)
    assert ds.labels is None


def test_nan_cell_reports_row_and_column(tmp_path):
    p = write(tmp_path, "a,b,y\n1,2,0\n3,NaN,1\n")
    with pytest.raises(ValidationError, match=r"row 2, column 'b'"):
        load_csv(p, label_column="y")


@pytest.mark.parametrize("text, pattern", [
    ("a,b\n1,2\n3\n", "row 2 has 1 cells"),
    ("a,y\n1,2\n", "not 0 or 1"),
    ("a,b\n1,x\n", "row 1, column 'b'"),
    ("", "empty file"),
    ("a,b\n", "no data rows"),
])
def test_malformed_csv(tmp_path, text, pattern):
    p = write(tmp_path, text)
    with pytest.raises(ValidationError, match=pattern):
        load_csv(p, label_column="y" if "y" in text.split("\n")[0] else None)


def test_missing_file_and_label_column(tmp_path):
    with pytest.raises(ValidationError, match="no such file"):
        load_csv(tmp_path / "nope.csv")
    p = write(tmp_path, "a,b\n1,2\n")
    with pytest.raises(ValidationError, match="label column 'y'"):
        load_csv(p, label_column="y")


def test_write_then_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = TabularDataset("r", rng.standard_normal((20, 4)) * 1e3, rng.integers(0, 2, 20))
    write_csv(ds, tmp_path / "r.csv")
    back = load_csv(tmp_path / "r.csv", label_column="label")
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_dataset_validation():
    with pytest.raises(ValidationError):
        TabularDataset("x", np.array([[1.0, np.inf]]))
    with pytest.raises(ValidationError):
        TabularDataset("x", np.ones((3, 2)), labels=[0, 1])
    with pytest.raises(ValidationError):
        TabularDataset("x", np.ones((2, 2)), labels=[0, 2])
    ds = TabularDataset("x", np.ones((2, 2)))
    with pytest.raises(ValueError):
        ds.X[0, 0] = 5.0


def test_normalizer_hand_values():
    ds = TabularDataset("n", np.array([[2.0, 5.0], [4.0, 5.0], [6.0, 5.0]]))
    Z = normalized(ds).X
    # population std of [2, 4, 6] is sqrt(8/3)
    np.testing.assert_allclose(Z[:, 0], [-1.2247448713915890, 0.0, 1.2247448713915890], atol=1e-12)
    np.testing.assert_array_equal(Z[:, 1], [0.0, 0.0, 0.0])


def test_normalizer_round_trip_and_mismatch():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((30, 5)) * 7 + 3
    norm = fit_normalizer(TabularDataset("n", X))
    np.testing.assert_allclose(norm.inverse_transform(norm.transform(X)), X, atol=1e-9)
    with pytest.raises(ValidationError):
        norm.transform(np.ones((2, 4)))
    assert isinstance(norm, Normalizer)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 6)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_normalization_idempotent(X):
    once = normalized(TabularDataset("h", X))
    twice = normalized(once)
    np.testing.assert_allclose(twice.X, once.X, atol=1e-9)


def test_minibatches_sizes_determinism_partition():
    ds = TabularDataset("b", np.arange(20, dtype=float).reshape(10, 2))
    batches = minibatches(ds, 4, seed=3)
    assert [len(b) for b in batches] == [4, 4, 2]
    again = minibatches(ds, 4, seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(batches, again))
    rows = sorted(tuple(r) for b in batches for r in b)
    assert rows == sorted(tuple(r) for r in ds.X)


def test_minibatches_rejects_bad_size():
    ds = TabularDataset("b", np.ones((3, 1)))
    with pytest.raises(ValidationError):
        minibatches(ds, 0, seed=0)
