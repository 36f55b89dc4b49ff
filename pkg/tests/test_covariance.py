"""Four covariance estimators: formulas, PSD contract, equivariance."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from oracles import naive_constant_correlation_target, naive_sample_cov
from sparsegmv import (
    CovEstimate,
    EstimatorError,
    get_estimator,
    lw_linear,
    lw_nonlinear,
    poet,
    sample_cov,
    select_poet_k,
    synth_factor_returns,
    write_cov_csv,
)
from sparsegmv.market_data import ReturnPanel


def panel_from(X):
    X = np.asarray(X, dtype=float)
    T, n = X.shape
    # zero-padded positional labels sort lexicographically
    dates = tuple(f"d{t:06d}" for t in range(T))
    return ReturnPanel(dates, X, tuple(f"A{j}" for j in range(n)))


def random_panel(seed, T=60, n=5, vol=0.02):
    rng = np.random.default_rng(seed)
    return panel_from(rng.normal(0.0, vol, (T, n)))


ALL_ESTIMATORS = [
    lambda w: sample_cov(w),
    lambda w: lw_linear(w),
    lambda w: lw_nonlinear(w),
    lambda w: poet(w, K=2, theta=0.5),
]


def test_cov_estimate_contract():
    est = CovEstimate(np.array([[2.0, 0.5], [0.5, 1.0]]), "ml", {})
    assert_array_equal(est.matrix, est.matrix.T)
    with pytest.raises(ValueError):
        est.matrix[0, 0] = 5.0
    # symmetrization of tiny asymmetry is silent
    asym = np.array([[2.0, 0.5 + 1e-14], [0.5, 1.0]])
    CovEstimate(asym, "ml", {})
    # an indefinite matrix is rejected
    with pytest.raises(EstimatorError):
        CovEstimate(np.array([[1.0, 2.0], [2.0, 1.0]]), "ml", {})


def test_sample_cov_constant_window():
    # demeaning identical values leaves at most 1-ulp residue per cell
    est = sample_cov(panel_from(np.full((10, 3), 0.004)))
    assert_allclose(est.matrix, np.zeros((3, 3)), atol=1e-30)


def test_sample_cov_single_asset():
    est = sample_cov(panel_from(np.array([[0.01], [0.02], [0.03]])))
    assert_allclose(est.matrix[0, 0], 1e-4, rtol=1e-12)


def test_sample_cov_mirrored_columns():
    rng = np.random.default_rng(3)
    col = rng.normal(0.0, 0.02, 40)
    est = sample_cov(panel_from(np.stack([col, -col], axis=1)))
    var = np.var(col, ddof=1)
    assert_allclose(est.matrix, [[var, -var], [-var, var]], rtol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_sample_cov_matches_naive(seed):
    window = random_panel(seed)
    est = sample_cov(window)
    assert_allclose(est.matrix, naive_sample_cov(window.returns), rtol=1e-12)
    assert est.meta["q"] == pytest.approx(window.n_assets / window.n_rows)


def test_sample_cov_needs_two_rows():
    with pytest.raises(EstimatorError):
        sample_cov(panel_from(np.array([[0.01, 0.02]])))


@pytest.mark.parametrize("fn_idx", range(len(ALL_ESTIMATORS)))
@pytest.mark.parametrize("seed", [0, 7])
def test_estimators_symmetric_psd(fn_idx, seed):
    window = random_panel(seed, T=50, n=6)
    est = ALL_ESTIMATORS[fn_idx](window)
    assert_array_equal(est.matrix, est.matrix.T)
    eigs = np.linalg.eigvalsh(est.matrix)
    assert eigs.min() >= -1e-12 * max(eigs.max(), 1e-300)
    assert np.isfinite(est.matrix).all()


@pytest.mark.parametrize("fn_idx", range(len(ALL_ESTIMATORS)))
def test_estimators_permutation_equivariant(fn_idx):
    window = random_panel(11, T=40, n=5)
    perm = np.array([3, 0, 4, 1, 2])
    shuffled = panel_from(window.returns[:, perm])
    full = ALL_ESTIMATORS[fn_idx](window).matrix
    part = ALL_ESTIMATORS[fn_idx](shuffled).matrix
    assert_allclose(part, full[np.ix_(perm, perm)], atol=1e-15)


def test_lw_linear_endpoints():
    window = random_panel(5, T=30, n=4)
    sample = sample_cov(window).matrix
    zero = lw_linear(window, shrink=0.0)
    assert_allclose(zero.matrix, sample, rtol=1e-12)
    assert zero.meta["s"] == 0.0
    one = lw_linear(window, shrink=1.0)
    assert_allclose(one.matrix, naive_constant_correlation_target(sample), rtol=1e-12)
    assert one.meta["s"] == 1.0


def test_lw_linear_identical_columns():
    # both columns equal: average correlation 1, target == sample,
    # so every shrinkage intensity returns the sample matrix
    rng = np.random.default_rng(8)
    col = rng.normal(0.0, 0.015, 50)
    window = panel_from(np.stack([col, col], axis=1))
    sample = sample_cov(window).matrix
    for s in (None, 0.3, 1.0):
        est = lw_linear(window, shrink=s)
        assert_allclose(est.matrix, sample, rtol=1e-10, atol=1e-20)


@pytest.mark.parametrize("seed", range(8))
def test_lw_linear_intensity_in_unit_interval(seed):
    est = lw_linear(random_panel(seed, T=25, n=8))
    assert 0.0 <= est.meta["s"] <= 1.0


def test_lw_linear_blend_formula():
    window = random_panel(21, T=35, n=5)
    est = lw_linear(window)
    s = est.meta["s"]
    sample = sample_cov(window).matrix
    target = naive_constant_correlation_target(sample)
    assert_allclose(est.matrix, s * target + (1 - s) * sample, rtol=1e-10)


def test_lw_linear_needs_two_assets():
    with pytest.raises(EstimatorError):
        lw_linear(panel_from(np.random.default_rng(0).normal(0, 0.01, (30, 1))))


def test_lw_nonlinear_keeps_eigenvectors():
    window = random_panel(4, T=80, n=6)
    sample = sample_cov(window).matrix
    vals_s, vecs_s = np.linalg.eigh(sample)
    est = lw_nonlinear(window)
    vals_n, vecs_n = np.linalg.eigh(est.matrix)
    # same eigenbasis up to sign, matched in sorted order
    dots = np.abs(np.sum(vecs_s * vecs_n, axis=0))
    assert_allclose(dots, np.ones(6), atol=1e-8)


def test_lw_nonlinear_identity_limit():
    # iid draws: the estimate should approach sigma^2 I for large T; the
    # construction is scale-equivariant, so a daily-return scale is used
    rng = np.random.default_rng(12)
    sigma = 0.01
    window = panel_from(rng.normal(0.0, sigma, (50_000, 2)))
    est = lw_nonlinear(window)
    assert_allclose(est.matrix, sigma**2 * np.eye(2), atol=0.02 * sigma**2)


def test_lw_nonlinear_shrinks_spread():
    for seed in range(5):
        panel, _ = synth_factor_returns(30, 120, 3, seed=seed)
        sample_eigs = np.linalg.eigvalsh(sample_cov(panel).matrix)
        nl_eigs = np.linalg.eigvalsh(lw_nonlinear(panel).matrix)
        assert nl_eigs.max() - nl_eigs.min() <= sample_eigs.max() - sample_eigs.min()


def test_lw_nonlinear_trace_roughly_kept():
    window = random_panel(30, T=80, n=10)
    est = lw_nonlinear(window)
    sample = sample_cov(window).matrix
    assert np.trace(est.matrix) == pytest.approx(np.trace(sample), rel=0.10)


def test_lw_nonlinear_requires_tall_window():
    with pytest.raises(EstimatorError):
        lw_nonlinear(random_panel(0, T=5, n=5))
    with pytest.raises(EstimatorError):
        lw_nonlinear(random_panel(0, T=4, n=5))


@pytest.mark.parametrize("K", [0, 1, 3])
def test_poet_zero_threshold_is_sample(K):
    window = random_panel(14, T=45, n=6)
    est = poet(window, K=K, theta=0.0)
    assert_allclose(est.matrix, sample_cov(window).matrix, atol=1e-10)


def test_poet_full_threshold_is_diagonal():
    window = random_panel(15, T=45, n=6)
    est = poet(window, K=0, theta=np.inf)
    assert_allclose(est.matrix, np.diag(np.diag(sample_cov(window).matrix)), atol=1e-15)


def test_poet_meta_and_validation():
    window = random_panel(16, T=45, n=6)
    est = poet(window, K=2, theta=0.7)
    assert est.meta["K"] == 2
    assert est.meta["theta"] == 0.7
    with pytest.raises(EstimatorError):
        poet(window, K=-1, theta=0.5)
    with pytest.raises(EstimatorError):
        poet(window, K=7, theta=0.5)
    with pytest.raises(EstimatorError):
        poet(window, K=2, theta=-0.1)


def test_poet_beats_sample_on_factor_data():
    # idiosyncratic vol above factor vol, the regime where residual
    # thresholding has noise to remove
    wins = 0
    for seed in range(20):
        panel, sigma_true = synth_factor_returns(
            30, 250, 1, seed=seed, factor_vol=0.01, idio_vol=0.02
        )
        err_poet = np.linalg.norm(poet(panel, K=1, theta=0.5).matrix - sigma_true)
        err_sample = np.linalg.norm(sample_cov(panel).matrix - sigma_true)
        wins += err_poet < err_sample
    assert wins >= 16


def test_select_poet_k():
    window = random_panel(17, T=60, n=5)
    assert select_poet_k(window, [3], theta=0.5) == 3
    with pytest.raises(EstimatorError):
        select_poet_k(window, [], theta=0.5)
    with pytest.raises(EstimatorError):
        select_poet_k(random_panel(0, T=3, n=4), [1, 2], theta=0.5)


def test_select_poet_k_recovers_one_factor():
    hits = 0
    for seed in range(20):
        panel, _ = synth_factor_returns(30, 250, 1, seed=100 + seed)
        hits += select_poet_k(panel, list(range(1, 9)), theta=0.5) == 1
    assert hits > 10


def test_get_estimator_names():
    window = random_panel(18, T=40, n=4)
    for name in ("ml", "lw-lin", "lw-nl"):
        est = get_estimator(name)(window)
        assert est.estimator == name
    est = get_estimator("poet", poet_k=2)(window)
    assert est.estimator == "poet"
    assert est.meta["K"] == 2
    auto = get_estimator("poet", poet_k_candidates=(1, 2))(window)
    assert auto.meta["K"] in (1, 2)
    with pytest.raises(EstimatorError):
        get_estimator("garch")


def test_write_cov_csv(tmp_path):
    import pandas as pd

    window = random_panel(19, T=30, n=3)
    est = sample_cov(window)
    path = tmp_path / "cov.csv"
    write_cov_csv(est, window.asset_ids, path)
    back = pd.read_csv(path, float_precision="round_trip")
    assert list(back.columns) == list(window.asset_ids)
    assert_array_equal(back.to_numpy(), est.matrix)
