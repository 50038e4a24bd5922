import math

import numpy as np
import pytest

from spikeslab_em.bbem import BootstrapConfig
from spikeslab_em.data import Dataset, gen_correlated, gen_large_p, standardize
from spikeslab_em.em import EmConfig, HyperParams
from spikeslab_em.tuning import (
    CV_GRID,
    PathResult,
    TuningError,
    V0Grid,
    _argmin_smallest,
    bic_score,
    cv_bootstrap_config,
    cv_rmse,
    fold_assignment,
    selection_path,
    tune_bic,
    tune_cv,
)

HP = HyperParams()


def test_grid_validation_and_parse():
    assert V0Grid.parse("1e-4, 1e-3,0.01").values == (1e-4, 1e-3, 0.01)
    g = V0Grid.parse("log:-4:0:5")
    np.testing.assert_allclose(g.values, [1e-4, 1e-3, 1e-2, 1e-1, 1.0])
    for bad in [(), (0.1, 0.01), (0.0, 1.0), (0.1, 0.1)]:
        with pytest.raises(ValueError):
            V0Grid(bad)
    with pytest.raises(ValueError):
        V0Grid((0.1, 200.0)).check_against(HP)


@pytest.fixture(scope="module")
def corr_ds():
    return standardize(gen_correlated(50, 0).dataset)


def test_path_shape_and_csv_round_trip(corr_ds, tmp_path):
    grid = V0Grid((0.001, 0.01, 0.1))
    path = selection_path(corr_ds, HP, grid, "bbem", bb_cfg=BootstrapConfig(K=5, L=20, seed=1))
    assert path.phi_matrix.shape == (40, 3)
    f = tmp_path / "path.csv"
    text = path.to_csv(f)
    assert text.splitlines()[0] == "variable,0.001,0.01,0.1"
    back = PathResult.read_csv(f)
    np.testing.assert_array_equal(back.phi_matrix, path.phi_matrix)
    assert back.names == corr_ds.names
    assert back.grid.values == grid.values


def test_path_em_engine_binary(corr_ds):
    path = selection_path(corr_ds, HP, V0Grid((0.001, 0.1)), "em")
    assert set(np.unique(path.phi_matrix)) <= {0.0, 1.0}


def test_grid_point_independence(corr_ds):
    cfg = BootstrapConfig(K=6, L=20, seed=2)
    a = selection_path(corr_ds, HP, V0Grid((0.001, 0.01, 0.1)), "bbem", bb_cfg=cfg)
    b = selection_path(corr_ds, HP, V0Grid((0.01,)), "bbem", bb_cfg=cfg)
    np.testing.assert_array_equal(a.phi_matrix[:, 1], b.phi_matrix[:, 0])


def test_path_collapses_near_top(corr_ds):
    grid = V0Grid.parse("log:-4:1:11")
    path = selection_path(corr_ds, HP, grid, "bbem", bb_cfg=BootstrapConfig(K=20, L=40, seed=3))
    counts = (path.phi_matrix >= 0.5).sum(axis=0)
    assert counts[-1] < counts[: len(grid) // 2 + 2].max()


# ---------------------------------------------------------------------------
# BIC


def test_bic_empty_model():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(30)
    y -= y.mean()
    ds = Dataset(rng.standard_normal((30, 4)), y)
    assert bic_score(ds, np.zeros(4)) == pytest.approx(30 * math.log(y @ y / 30), rel=1e-12)


def test_bic_exact_fit_floor():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    ds = Dataset(X, 2 * X[:, 0])
    s = bic_score(ds, np.array([1]))
    assert math.isfinite(s) and s < -1000


def test_bic_random_vs_independent_ols():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((50, 5))
    y = X[:, 0] - X[:, 2] + rng.standard_normal(50)
    gamma = np.array([1, 0, 1, 1, 0])
    Xc = np.column_stack([np.ones(50), X[:, [0, 2, 3]]])
    coef = np.linalg.solve(Xc.T @ Xc, Xc.T @ y)
    rss = float(np.sum((y - Xc @ coef) ** 2))
    ref = 50 * math.log(rss / 50) + 3 * math.log(50)
    assert bic_score(Dataset(X, y), gamma) == pytest.approx(ref, abs=1e-10)


def test_bic_penalty_is_exact():
    # an exactly orthogonal extra column leaves RSS unchanged: penalty increases by log n
    rng = np.random.default_rng(2)
    n = 40
    Q, _ = np.linalg.qr(rng.standard_normal((n, 3)) - 0)
    Q -= Q.mean(axis=0)
    Q, _ = np.linalg.qr(np.column_stack([np.ones(n), Q]))
    X = Q[:, 1:3]
    y = 2 * X[:, 0] + Q[:, 3]
    ds = Dataset(X, y)
    a = bic_score(ds, np.array([1, 0]))
    b = bic_score(ds, np.array([1, 1]))
    assert b - a == pytest.approx(math.log(n), abs=1e-9)


def test_bic_errors():
    X = np.column_stack([np.arange(5.0), 2 * np.arange(5.0), np.ones(5) * [1, 2, 1, 2, 1]])
    ds = Dataset(X, np.arange(5.0))
    with pytest.raises(ValueError):
        bic_score(ds, np.array([1, 1, 0]))
    with pytest.raises(ValueError):
        bic_score(Dataset(np.random.default_rng(0).standard_normal((3, 4)), np.ones(3)), np.ones(4))


def test_tune_bic_single_point(corr_ds):
    tr = tune_bic(corr_ds, HP, V0Grid((0.005,)), "em")
    assert tr.best_v0 == 0.005 and tr.selections.shape == (40, 1)


def test_tie_rule():
    grid = V0Grid((0.001, 0.01, 0.1))
    assert _argmin_smallest(grid, np.array([2.0, 1.0, 1.0])) == 0.01
    assert _argmin_smallest(grid, np.array([1.0, 1.0, 1.0])) == 0.001
    assert _argmin_smallest(grid, np.array([np.inf, 3.0, np.inf])) == 0.01
    with pytest.raises(TuningError):
        _argmin_smallest(grid, np.full(3, np.inf))


@pytest.fixture(scope="module")
def large_p():
    sim = gen_large_p(100, 1000, 11)
    return sim, standardize(sim.dataset)


def test_tune_bic_large_p_contains_signals(large_p):
    sim, ds = large_p
    em_cfg = EmConfig(theta_init=math.sqrt(100) / 1000)
    bb = BootstrapConfig(K=100, L=50, seed=11, frequency="inclusions")
    tr = tune_bic(ds, HP, V0Grid((0.01, 0.03, 0.1)), "bbem", em_cfg, bb)
    g = tr.grid.values.index(tr.best_v0)
    assert set(np.flatnonzero(tr.selections[:, g])) >= {0, 1, 2}
    # small-model BIC comparison: the true support beats each of its subsets
    true_score = bic_score(ds, sim.gamma)
    for drop in range(3):
        g2 = sim.gamma.copy()
        g2[drop] = 0
        assert bic_score(ds, g2) > true_score


def test_replicate_frequency_capped_by_inclusion_rate(large_p):
    # with votes divided by K, phi_j can never exceed the share of subsets holding j
    _, ds = large_p
    from spikeslab_em.bbem import run_bbem

    ens = run_bbem(ds, HP.with_v0(0.03), EmConfig(theta_init=0.01), BootstrapConfig(K=100, L=50, seed=11))
    assert np.all(ens.phi <= ens.inclusions / 100)
    assert np.all(ens.inclusions[:3] < 50)


# ---------------------------------------------------------------------------
# CV


def test_fold_assignment():
    f = fold_assignment(23, 5, 4)
    assert len(f) == 5
    np.testing.assert_array_equal(np.sort(np.concatenate(f)), np.arange(23))
    assert [len(b) for b in f] == [5, 5, 5, 4, 4]
    for a, b in zip(f, fold_assignment(23, 5, 4)):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        fold_assignment(3, 5, 0)
    with pytest.raises(ValueError):
        fold_assignment(10, 1, 0)


def test_cv_bootstrap_config():
    assert cv_bootstrap_config(BootstrapConfig(K=100)).K == 50
    assert cv_bootstrap_config(BootstrapConfig(K=30)).K == 20
    assert cv_bootstrap_config(BootstrapConfig(K=10)).K == 10


@pytest.fixture(scope="module")
def raw_small():
    return gen_correlated(40, 5).dataset


def test_tune_cv_single_point(raw_small):
    tr = tune_cv(raw_small, HP, V0Grid((0.002,)), folds=4, seed=1)
    assert tr.best_v0 == 0.002
    assert math.isfinite(tr.scores[0]) and tr.scores[0] > 0


def test_tune_cv_noiseless_matches_direct_evaluation():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((40, 8))
    y = X @ np.array([3.0, 1.5, 0, 0, 2, 0, 0, 0])
    ds = Dataset(X, y)
    grid = V0Grid((1e-4, 1e-1))
    # slab start: from the null start at v0=1e-4 the spike shrinkage hides every signal
    cfg = EmConfig(gamma_init="all_ones")
    tr = tune_cv(ds, HP, grid, folds=5, em_cfg=cfg, seed=0)
    folds = fold_assignment(40, 5, 0)
    direct = [cv_rmse(ds, HP.with_v0(v), folds, "em", cfg) for v in grid.values]
    np.testing.assert_array_equal(tr.scores, direct)
    assert tr.best_v0 == grid.values[int(np.argmin(direct))]
    # both points recover the noiseless fit far better than the null model
    assert max(direct) < 0.01 * y.std()


def test_tune_cv_deterministic(raw_small):
    grid = V0Grid(CV_GRID[::3])
    a = tune_cv(raw_small, HP, grid, seed=3)
    b = tune_cv(raw_small, HP, grid, seed=3)
    np.testing.assert_array_equal(a.scores, b.scores)
    assert a.to_dict() == b.to_dict()


def test_cv_fold_order_invariant(raw_small):
    folds = fold_assignment(raw_small.n, 5, 2)
    a = cv_rmse(raw_small, HP, folds, "em")
    b = cv_rmse(raw_small, HP, folds[::-1], "em")
    assert a == pytest.approx(b, rel=1e-12)


def test_tune_cv_bbem_runs(raw_small):
    tr = tune_cv(raw_small, HP, V0Grid((0.001, 0.01)), folds=3, engine="bbem",
                 bb_cfg=BootstrapConfig(K=4, L=20, seed=1), seed=1)
    assert tr.best_v0 in (0.001, 0.01)
    assert np.all(np.isfinite(tr.scores))
