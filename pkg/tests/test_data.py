import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spikeslab_em.data import (
    DataError,
    Dataset,
    SimDesign,
    gen_correlated,
    gen_large_p,
    gen_tibshirani,
    load_csv,
    standardize,
    unstandardize,
    write_csv,
)


def write(tmp_path, text, name="d.csv"):
    f = tmp_path / name
    f.write_text(text)
    return f


def test_load_csv_dimensions(tmp_path):
    f = write(tmp_path, "a,b,y\n1,2,3\n4,5,6\n7,8,10\n")
    ds = load_csv(f, "y")
    assert (ds.n, ds.p) == (3, 2)
    assert ds.column_names == ["a", "b"]
    np.testing.assert_array_equal(ds.y, [3, 6, 10])


def test_load_csv_response_by_index(tmp_path):
    f = write(tmp_path, "y,a\n1,2\n3,5\n")
    ds = load_csv(f, 0)
    assert ds.column_names == ["a"]
    np.testing.assert_array_equal(ds.y, [1, 3])


def test_load_csv_standardized(tmp_path):
    f = write(tmp_path, "a,b,y\n1,2,3\n4,5,6\n7,9,10\n2,1,0\n")
    ds = load_csv(f, "y", standardize_data=True)
    np.testing.assert_allclose(ds.X.mean(axis=0), 0, atol=1e-10)
    np.testing.assert_allclose(ds.X.std(axis=0), 1, atol=1e-10)
    assert abs(ds.y.mean()) < 1e-10


@pytest.mark.parametrize(
    "text,match",
    [
        ("a,b,y\n1,x,3\n4,5,6\n", "non-numeric"),
        ("a,b,y\n1,,3\n4,5,6\n", "non-numeric"),
        ("a,b,y\n1,NA,3\n4,5,6\n", "non-numeric"),
        ("a,b,z\n1,2,3\n4,5,6\n", "absent"),
    ],
)
def test_load_csv_errors(tmp_path, text, match):
    with pytest.raises(DataError, match=match):
        load_csv(write(tmp_path, text), "y")


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        load_csv(tmp_path / "nope.csv", "y")


def test_constant_column_rejected(tmp_path):
    f = write(tmp_path, "a,b,y\n1,2,3\n1,5,6\n1,8,10\n")
    assert load_csv(f, "y").p == 2
    with pytest.raises(DataError, match="constant"):
        load_csv(f, "y", standardize_data=True)


def test_csv_round_trip(tmp_path):
    sim = gen_tibshirani(10, 1.0, 3)
    f = tmp_path / "sim.csv"
    write_csv(sim.dataset, f)
    back = load_csv(f, "y")
    np.testing.assert_array_equal(back.X, sim.dataset.X)
    np.testing.assert_array_equal(back.y, sim.dataset.y)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (12, 3), elements=st.floats(-1e3, 1e3)),
    arrays(np.float64, (12,), elements=st.floats(-1e3, 1e3)),
)
def test_standardization_invertible(X, y):
    if np.any(X.std(axis=0) < 1e-3 * (1 + np.abs(X).max())):
        return
    ds = Dataset(X, y)
    back = unstandardize(standardize(ds))
    np.testing.assert_allclose(back.X, X, rtol=1e-10, atol=1e-10 * (1 + np.abs(X).max()))
    np.testing.assert_allclose(back.y, y, rtol=1e-10, atol=1e-10 * (1 + np.abs(y).max()))


def test_dataset_rejects_non_finite():
    with pytest.raises(DataError):
        Dataset(np.array([[1.0, np.nan]]), np.array([1.0]))
    with pytest.raises(DataError):
        Dataset(np.ones((2, 2)), np.ones(3))


# ---------------------------------------------------------------------------
# generators


def corr(X, i, j):
    return np.corrcoef(X[:, i], X[:, j])[0, 1]


def test_tibshirani_shapes_and_truth():
    sim = gen_tibshirani(40, 3.0, 11)
    assert sim.dataset.X.shape == (40, 8)
    assert sim.dataset.y.shape == (40,)
    np.testing.assert_array_equal(sim.gamma, [1, 1, 0, 0, 1, 0, 0, 0])
    np.testing.assert_array_equal(sim.beta, [3, 1.5, 0, 0, 2, 0, 0, 0])


def test_tibshirani_covariance():
    X = gen_tibshirani(100_000, 3.0, 1).dataset.X
    assert corr(X, 0, 1) == pytest.approx(0.5, abs=0.01)
    assert corr(X, 0, 2) == pytest.approx(0.25, abs=0.01)
    assert corr(X, 2, 7) == pytest.approx(0.5**5, abs=0.01)


def test_generators_deterministic():
    for make in (
        lambda s: gen_tibshirani(30, 3.0, s),
        lambda s: gen_correlated(30, s),
        lambda s: gen_large_p(20, 50, s),
    ):
        a, b, c = make(5), make(5), make(6)
        assert np.array_equal(a.dataset.X, b.dataset.X)
        assert np.array_equal(a.dataset.y, b.dataset.y)
        assert not np.array_equal(a.dataset.X, c.dataset.X)


def test_correlated_design():
    sim = gen_correlated(50, 2)
    assert sim.dataset.X.shape == (50, 40)
    assert np.count_nonzero(sim.beta) == 6
    np.testing.assert_array_equal(sim.beta[:6], [3, 3, -2, 3, 3, -2])
    X = gen_correlated(100_000, 2).dataset.X
    assert corr(X, 0, 1) == pytest.approx(0.9, abs=0.01)
    assert corr(X, 4, 5) == pytest.approx(0.9, abs=0.01)
    assert corr(X, 0, 3) == pytest.approx(0.0, abs=0.01)
    assert corr(X, 6, 7) == pytest.approx(0.0, abs=0.01)
    assert corr(X, 2, 20) == pytest.approx(0.0, abs=0.01)


def test_large_p_design():
    sim = gen_large_p(100, 1000, 3)
    assert sim.dataset.X.shape == (100, 1000)
    np.testing.assert_array_equal(np.flatnonzero(sim.beta), [0, 1, 2])
    big = gen_large_p(100_000, 3, 4)
    X, y = big.dataset.X, big.dataset.y
    eps = y - X @ big.beta
    assert eps.var() == pytest.approx(3.0, abs=0.05)
    assert corr(X, 0, 2) == pytest.approx(0.36, abs=0.01)
    assert corr(X, 0, 1) == pytest.approx(0.6, abs=0.01)


def test_large_p_ar_covariance_far_pairs():
    X = gen_large_p(100_000, 12, 9).dataset.X
    for i, j in [(0, 5), (3, 11), (2, 4)]:
        assert corr(X, i, j) == pytest.approx(0.6 ** abs(i - j), abs=0.01)


def test_sim_design_forces_p():
    assert SimDesign("tibshirani", 40).p == 8
    assert SimDesign("correlated", 50).p == 40
    assert SimDesign("large_p", 100).p == 1000
    with pytest.raises(ValueError):
        SimDesign("tibshirani", 40, p=10)
    d = SimDesign("tibshirani", 40, sigma=3.0, seed=4)
    assert np.array_equal(d.generate().dataset.X, gen_tibshirani(40, 3.0, 4).dataset.X)
