"""Tests for the component-wise boosting engine.

Oracles: closed-form least squares (numpy lstsq), an IRLS fit from
statsmodels for the binomial check, and a derivative-free optimizer on
the truncated-count loss for the distributional constant fit.  The
grouped selection solver is checked learner by learner against the
reference single-learner ridge fit.
"""

import json
import logging

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit

from hurdleboost.basis import (
    build_learners,
    intercept_learner,
    linear_learner,
    ridge_fit,
)
from hurdleboost.boost import (
    BoostFit,
    GamlssFit,
    _replay_snapshots,
    _SolverCache,
    default_gam_grid,
    default_gamlss_grid,
    fit_gam,
    fit_gamlss,
    multidim_mstop,
    subsample_mstop,
)
from hurdleboost.data import ParameterSurface, SimulationConfig, simulate_hurdle_dataset
from hurdleboost.family import (
    BinomialLogit,
    GaussianCheck,
    TruncNBMean,
    TruncNBOverdispersion,
    truncnb_loss,
)


def oracle_ols(X, y):
    return np.linalg.lstsq(X, y, rcond=None)[0]


def oracle_ztnb_constant_mle(y):
    """Constant (eta_mu, eta_sigma) minimizing the truncated-count loss."""

    def objective(theta):
        return float(np.mean(truncnb_loss(y, np.full(len(y), theta[0]), np.full(len(y), theta[1]))))

    start = np.array([np.log(y.mean()), 0.0])
    res = minimize(
        objective, start, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000}
    )
    assert res.success
    return res.x


def toy_frame(n=120, seed=0):
    rng = np.random.default_rng(seed)
    return {
        "a": rng.normal(size=n),
        "b": rng.normal(size=n),
        "c": rng.normal(size=n),
        "g": rng.choice(["u", "v", "w"], size=n),
    }


def toy_learners(frame):
    return build_learners(
        frame, "sm(a) + lin(b) + cat(g)", schema={"g": ("u", "v", "w")}
    )


# ---------------------------------------------------------------------------
# grouped solver vs reference ridge fit
# ---------------------------------------------------------------------------


def test_cache_matches_reference_ridge_fit():
    frame = toy_frame()
    learners = toy_learners(frame)
    rng = np.random.default_rng(1)
    u = rng.normal(size=len(frame["a"]))
    cache = _SolverCache(learners)
    rss, betas = cache.fit_all(u)
    for j, learner in enumerate(learners):
        beta_ref, rss_ref = ridge_fit(learner, u)
        np.testing.assert_allclose(betas[j], beta_ref, rtol=1e-9, atol=1e-12)
        assert rss[j] == pytest.approx(rss_ref, rel=1e-9)


def test_cache_matches_reference_on_row_subset():
    frame = toy_frame()
    learners = toy_learners(frame)
    rng = np.random.default_rng(2)
    rows = np.sort(rng.permutation(len(frame["a"]))[:60])
    u = rng.normal(size=60)
    cache = _SolverCache(learners, rows=rows)
    rss, betas = cache.fit_all(u)
    for j, learner in enumerate(learners):
        beta_ref, rss_ref = ridge_fit(learner, u, rows=rows)
        np.testing.assert_allclose(betas[j], beta_ref, rtol=1e-9, atol=1e-12)
        assert rss[j] == pytest.approx(rss_ref, rel=1e-9)


def test_duplicate_learners_tie_goes_to_lowest_index(caplog):
    frame = {"a": np.array([1.0, -2.0, 0.5, 3.0])}
    learners = [
        linear_learner(frame, ("a",), name="first"),
        linear_learner(frame, ("a",), name="second"),
    ]
    y = np.array([2.0, -4.0, 1.0, 6.0])
    with caplog.at_level(logging.WARNING, logger="hurdleboost.boost"):
        fit = fit_gam(y, learners, GaussianCheck(), m_stop=3)
    assert set(fit.selection_path) == {0}
    assert any("tie" in rec.message for rec in caplog.records)


# ---------------------------------------------------------------------------
# single-parameter fits
# ---------------------------------------------------------------------------


def test_mstop_zero_is_offset_only():
    frame = toy_frame()
    learners = toy_learners(frame)
    y = frame["a"] * 2.0
    fit = fit_gam(y, learners, GaussianCheck(), m_stop=0)
    assert fit.m_stop == 0
    assert len(fit.train_risk) == 1
    np.testing.assert_allclose(fit.predict_eta(learners), np.full(len(y), y.mean()))


def test_gaussian_boosting_converges_to_least_squares():
    rng = np.random.default_rng(3)
    n = 200
    frame = {k: rng.normal(size=n) for k in ("a", "b", "c")}
    y = 1.5 + 2.0 * frame["a"] - 0.7 * frame["b"] + 0.3 * frame["c"] + rng.normal(0, 0.5, n)
    learners = [
        intercept_learner(n),
        linear_learner(frame, ("a",)),
        linear_learner(frame, ("b",)),
        linear_learner(frame, ("c",)),
    ]
    fit = fit_gam(y, learners, GaussianCheck(), m_stop=2000)
    X = np.column_stack([np.ones(n), frame["a"], frame["b"], frame["c"]])
    beta_ols = oracle_ols(X, y)
    np.testing.assert_allclose(fit.predict_eta(learners), X @ beta_ols, atol=1e-6)
    agg = fit.aggregate()
    for j, name in [(1, "a"), (2, "b"), (3, "c")]:
        assert agg[j][0] == pytest.approx(beta_ols[j], abs=1e-6)


def test_binomial_boosting_matches_irls_oracle():
    sm = pytest.importorskip("statsmodels.api")
    rng = np.random.default_rng(4)
    n = 300
    frame = {"a": rng.normal(size=n), "b": rng.normal(size=n)}
    eta_true = -0.4 + 1.2 * frame["a"] - 0.8 * frame["b"]
    y = (rng.uniform(size=n) < expit(eta_true)).astype(float)
    learners = [
        intercept_learner(n),
        linear_learner(frame, ("a",)),
        linear_learner(frame, ("b",)),
    ]
    fit = fit_gam(y, learners, BinomialLogit(), m_stop=6000)
    X = np.column_stack([np.ones(n), frame["a"], frame["b"]])
    glm = sm.GLM(y, X, family=sm.families.Binomial()).fit()
    eta_boost = fit.predict_eta(learners)
    np.testing.assert_allclose(eta_boost, X @ glm.params, atol=1e-4)
    nll_boost = np.mean(BinomialLogit().loss(y, eta_boost))
    nll_glm = np.mean(BinomialLogit().loss(y, X @ glm.params))
    assert abs(nll_boost - nll_glm) < 1e-8


def test_training_risk_never_increases():
    cfg = SimulationConfig(
        n_segments=60,
        winters={"2003": 5},
        covariates={"sst": {"dist": "normal"}},
        occupancy=ParameterSurface(intercept=0.2, linear={"sst": 0.8}),
    )
    ds, _ = simulate_hurdle_dataset(cfg, seed=5)
    frame = ds.covariate_frame()
    learners = build_learners({"sst": frame["sst"]}, "sm(sst)")
    occ = (ds.counts > 0).astype(float)
    fit = fit_gam(occ, learners, BinomialLogit(), m_stop=150)
    assert np.all(np.diff(fit.train_risk) <= 1e-10)


def test_boosting_prefers_the_signal_learner():
    rng = np.random.default_rng(6)
    n = 150
    frame = {"a": rng.normal(size=n), "b": rng.normal(size=n)}
    y = 3.0 * frame["b"] + rng.normal(0, 0.1, n)
    learners = [
        intercept_learner(n),
        linear_learner(frame, ("a",)),
        linear_learner(frame, ("b",)),
    ]
    fit = fit_gam(y, learners, GaussianCheck(), m_stop=200)
    # once the signal is absorbed the path wanders into noise, so judge the start
    path = np.asarray(fit.selection_path[:50])
    assert (path == 2).mean() > 0.9
    assert fit.aggregate()[2][0] == pytest.approx(3.0, abs=0.05)


def test_train_risk_matches_path_replay():
    frame = toy_frame(seed=7)
    learners = toy_learners(frame)
    y = np.sin(2.0 * frame["a"]) + 0.5 * frame["b"]
    fit = fit_gam(y, learners, GaussianCheck(), m_stop=40)
    fam = GaussianCheck()
    for m in (0, 1, 7, 23, 40):
        eta_m = fit.predict_eta(learners, m=m)
        assert np.mean(fam.loss(y, eta_m)) == pytest.approx(fit.train_risk[m], rel=1e-12)


def test_predict_accepts_plain_design_matrices():
    frame = toy_frame(seed=8)
    learners = toy_learners(frame)
    y = frame["a"] + frame["b"]
    fit = fit_gam(y, learners, GaussianCheck(), m_stop=25)
    mats = [l.X for l in learners]
    np.testing.assert_array_equal(fit.predict_eta(mats), fit.predict_eta(learners))
    with pytest.raises(ValueError, match="designs"):
        fit.predict_eta(mats[:-1])


def test_boost_fit_serialization_round_trip():
    frame = toy_frame(seed=9)
    learners = toy_learners(frame)
    y = frame["a"] ** 2
    fit = fit_gam(y, learners, GaussianCheck(), m_stop=30)
    payload = json.dumps(fit.to_dict(), sort_keys=True)
    back = BoostFit.from_dict(json.loads(payload))
    np.testing.assert_array_equal(back.predict_eta(learners), fit.predict_eta(learners))
    assert back.selection_path == fit.selection_path
    np.testing.assert_array_equal(back.train_risk, fit.train_risk)


def test_scaling_a_covariate_leaves_the_fit_unchanged():
    rng = np.random.default_rng(10)
    n = 100
    a = rng.normal(size=n)
    y = np.sin(a) + rng.normal(0, 0.2, n)
    fits = []
    for scale in (1.0, 10.0):
        learners = build_learners({"a": a * scale}, "sm(a)")
        fits.append((fit_gam(y, learners, GaussianCheck(), m_stop=60), learners))
    (f1, l1), (f2, l2) = fits
    assert f1.selection_path == f2.selection_path
    np.testing.assert_allclose(f1.predict_eta(l1), f2.predict_eta(l2), atol=1e-8)


# ---------------------------------------------------------------------------
# distributional fits
# ---------------------------------------------------------------------------


def simulate_constant_ztnb(n, mu, sigma, seed):
    cfg = SimulationConfig(
        n_segments=n,
        winters={"2003": 1},
        occupancy=ParameterSurface(100.0),
        count_mean=ParameterSurface(np.log(mu)),
        count_overdispersion=ParameterSurface(np.log(sigma)),
    )
    ds, _ = simulate_hurdle_dataset(cfg, seed=seed)
    return ds.counts


def test_gamlss_constant_fit_reaches_the_mle():
    y = simulate_constant_ztnb(500, mu=4.0, sigma=0.7, seed=11)
    learners_mu = [intercept_learner(len(y))]
    learners_sigma = [intercept_learner(len(y))]
    fit = fit_gamlss(y, learners_mu, learners_sigma, m_mu=4000, m_sigma=4000)
    eta_mu, eta_sigma = fit.predict_eta(learners_mu, learners_sigma)
    theta = oracle_ztnb_constant_mle(y)
    assert eta_mu[0] == pytest.approx(theta[0], abs=1e-4)
    assert eta_sigma[0] == pytest.approx(theta[1], abs=1e-4)
    assert fit.train_risk[-1] <= fit.train_risk[0]


def test_gamlss_respects_per_parameter_caps():
    y = simulate_constant_ztnb(80, mu=3.0, sigma=0.5, seed=12)
    lm = [intercept_learner(len(y))]
    ls = [intercept_learner(len(y))]
    fit = fit_gamlss(y, lm, ls, m_mu=5, m_sigma=3)
    assert fit.mu.m_stop == 5
    assert fit.sigma.m_stop == 3
    assert len(fit.train_risk) == 6


def test_gamlss_risk_never_increases():
    y = simulate_constant_ztnb(200, mu=5.0, sigma=1.0, seed=13)
    rng = np.random.default_rng(13)
    x = rng.normal(size=len(y))
    lm = build_learners({"x": x}, "lin(x)")
    ls = build_learners({"x": x}, "lin(x)")
    fit = fit_gamlss(y, lm, ls, m_mu=120, m_sigma=120)
    assert np.all(np.diff(fit.train_risk) <= 1e-9)


def test_gamlss_serialization_round_trip():
    y = simulate_constant_ztnb(60, mu=2.0, sigma=0.4, seed=14)
    lm = [intercept_learner(len(y))]
    ls = [intercept_learner(len(y))]
    fit = fit_gamlss(y, lm, ls, m_mu=20, m_sigma=10)
    back = GamlssFit.from_dict(json.loads(json.dumps(fit.to_dict(), sort_keys=True)))
    e1 = fit.predict_eta(lm, ls)
    e2 = back.predict_eta(lm, ls)
    np.testing.assert_array_equal(e1[0], e2[0])
    np.testing.assert_array_equal(e1[1], e2[1])


# ---------------------------------------------------------------------------
# early stopping by subsampling
# ---------------------------------------------------------------------------


def test_default_grids():
    g = default_gam_grid()
    assert g[0] == 0 and g[-1] == 3000 and len(g) == 301
    assert np.all(np.diff(g) == 10)
    h = default_gamlss_grid()
    assert h[0] == 0 and h[-1] == 3000 and len(h) == 31
    assert np.all(np.diff(h) > 0)


def test_replay_snapshots_match_partial_predictions():
    frame = toy_frame(seed=15)
    learners = toy_learners(frame)
    y = np.cos(frame["a"]) + frame["b"]
    fit = fit_gam(y, learners, GaussianCheck(), m_stop=20)
    grid = np.arange(0, 21)
    rows = np.arange(len(y))
    snaps = _replay_snapshots(fit, learners, rows, grid)
    for m, eta in zip(grid, snaps):
        np.testing.assert_allclose(eta, fit.predict_eta(learners, m=int(m)), atol=1e-12)


def test_subsample_mstop_gaussian():
    rng = np.random.default_rng(16)
    n = 240
    frame = {"a": rng.normal(size=n)}
    y = 1.0 * frame["a"] + rng.normal(0, 1.0, n)
    learners = build_learners(frame, "lin(a)")
    grid = np.arange(0, 101, 5)
    res = subsample_mstop(y, learners, GaussianCheck(), grid=grid, n_folds=8, seed=0)
    assert res.m_stop in grid
    assert res.fold_risk.shape == (8, len(grid))
    assert np.all(np.isfinite(res.oob_risk))
    again = subsample_mstop(y, learners, GaussianCheck(), grid=grid, n_folds=8, seed=0)
    np.testing.assert_array_equal(res.oob_risk, again.oob_risk)
    assert res.m_stop == again.m_stop


def test_subsample_mstop_stops_before_overfitting():
    rng = np.random.default_rng(17)
    n = 160
    frame = {"a": rng.normal(size=n)}
    y = 0.3 * np.sin(2 * frame["a"]) + rng.normal(0, 1.0, n)
    learners = build_learners(frame, "sm(a)")
    grid = np.arange(0, 501, 20)
    res = subsample_mstop(y, learners, GaussianCheck(), grid=grid, n_folds=10, seed=1)
    assert res.m_stop < 500


def test_subsample_mstop_redraws_degenerate_folds():
    rng = np.random.default_rng(18)
    n = 40
    y = np.zeros(n)
    y[:2] = 1.0
    frame = {"a": rng.normal(size=n)}
    learners = build_learners(frame, "lin(a)")
    res = subsample_mstop(
        y, learners, BinomialLogit(), grid=[0, 5, 10], n_folds=12, seed=2
    )
    assert res.n_resampled > 0
    assert np.all(np.isfinite(res.oob_risk))


def test_subsample_mstop_gives_up_on_constant_response():
    n = 30
    y = np.ones(n)
    frame = {"a": np.linspace(-1, 1, n)}
    learners = build_learners(frame, "lin(a)")
    with pytest.raises(RuntimeError, match="half-sample"):
        subsample_mstop(y, learners, BinomialLogit(), grid=[0, 5], n_folds=3, seed=3)


def test_multidim_mstop_surface():
    rng = np.random.default_rng(19)
    n = 300
    x = rng.normal(size=n)
    cfg = SimulationConfig(
        n_segments=n,
        winters={"2003": 1},
        occupancy=ParameterSurface(100.0),
        count_mean=ParameterSurface(intercept=1.0),
        count_overdispersion=ParameterSurface(intercept=-0.7),
    )
    ds, _ = simulate_hurdle_dataset(cfg, seed=19)
    y = ds.counts
    lm = build_learners({"x": x}, "lin(x)")
    ls = build_learners({"x": x}, "lin(x)")
    grid = np.array([0, 2, 5, 10, 20])
    res = multidim_mstop(y, lm, ls, grid_mu=grid, grid_sigma=grid, n_folds=4, seed=4)
    assert res.risk.shape == (5, 5)
    assert res.m_mu in grid and res.m_sigma in grid
    a = int(np.where(grid == res.m_mu)[0][0])
    b = int(np.where(grid == res.m_sigma)[0][0])
    assert res.risk[a, b] == res.risk.min()


def test_multidim_truncation_pairs_partial_paths():
    """The (a, b) cell must pair the first a mu steps with the first b sigma steps."""
    y = simulate_constant_ztnb(120, mu=3.0, sigma=0.6, seed=20)
    n = len(y)
    lm = [intercept_learner(n)]
    ls = [intercept_learner(n)]
    grid = np.array([0, 3, 8])
    seed = 21
    res = multidim_mstop(y, lm, ls, grid_mu=grid, grid_sigma=grid, n_folds=1, seed=seed)

    # rebuild the single fold exactly as the tuner drew it
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    rows, oob = np.sort(perm[: n // 2]), np.sort(perm[n // 2 :])
    fit = fit_gamlss(y, lm, ls, m_mu=8, m_sigma=8, rows=rows)
    for a, ma in enumerate(grid):
        for b, mb in enumerate(grid):
            eta_mu = fit.mu.predict_eta(lm, rows=oob, m=int(ma))
            eta_sigma = fit.sigma.predict_eta(ls, rows=oob, m=int(mb))
            direct = float(np.mean(truncnb_loss(y[oob], eta_mu, eta_sigma)))
            assert res.risk[a, b] == pytest.approx(direct, rel=1e-12)
