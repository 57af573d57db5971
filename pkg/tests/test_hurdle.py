"""Tests for the consolidated hurdle model: fitting, prediction, summaries.

Oracles: hand-computed medians, MADs, quantile classes, and calendar
values for the summary layer; the consolidation identity is checked
against the family module's truncated mean.
"""

import json
from datetime import date

import numpy as np
import pandas as pd
import pytest
from scipy.special import expit

from hurdleboost.basis import build_learners
from hurdleboost.data import (
    ParameterSurface,
    SimulationConfig,
    simulate_hurdle_dataset,
    standardize,
)
from hurdleboost.family import truncnb_mean
from hurdleboost.hurdle import (
    FULL_SURVEY_FORMULA,
    HurdleModel,
    export_geojson,
    fit_hurdle,
    hurdle_log_likelihood,
    prediction_grid,
    pseudo_r2,
    select_stable_learners,
    summarize_segments,
    survey_totals,
    tune_count_mstop,
    tune_occupancy_mstop,
    unconditional_mean,
)
from hurdleboost.stabsel import StabSelConfig

SMALL_FORMULA = "lin(sst) + sm(sst) + lin(time) + cat(winter)"


@pytest.fixture(scope="module")
def small_fit():
    cfg = SimulationConfig(
        n_segments=25,
        winters={"2003": 4, "2004": 4},
        covariates={"sst": {"dist": "normal", "varies": "row"}},
        occupancy=ParameterSurface(0.6, linear={"sst": 1.0}),
        count_mean=ParameterSurface(1.0, linear={"sst": 0.5}),
        count_overdispersion=ParameterSurface(-0.7),
    )
    ds, _ = simulate_hurdle_dataset(cfg, seed=100)
    ds = standardize(ds)
    model = fit_hurdle(ds, formula=SMALL_FORMULA, m_occ=60, m_mu=40, m_sigma=15)
    return ds, model


# ---------------------------------------------------------------------------
# the full survey formula
# ---------------------------------------------------------------------------


def full_survey_frame(n=200, seed=0):
    rng = np.random.default_rng(seed)
    continuous = [
        "time", "SSTw", "SSTm", "SSTrel", "SBT", "depth", "d2land", "chla",
        "cdom", "meanphi", "SAR", "tidebmean", "tidesd", "strat", "obs_window",
        "NAOw", "xkm", "ykm",
    ]
    frame = {c: rng.normal(size=n) for c in continuous}
    frame["ferry"] = rng.choice(["no", "yes"], size=n)
    frame["winter"] = rng.choice(["2003", "2004", "2005"], size=n)
    schema = {"ferry": ("no", "yes"), "winter": ("2003", "2004", "2005")}
    return frame, schema


def test_full_survey_formula_emits_48_learners():
    frame, schema = full_survey_frame()
    learners = build_learners(frame, FULL_SURVEY_FORMULA, schema=schema)
    assert len(learners) == 48
    names = [l.name for l in learners]
    assert names[0] == "int"
    for expected in (
        "lin(time)", "sm(time)", "lin(obs_window)", "sm(obs_window)", "lin(NAOw)",
        "by(lin(SSTrel), time)", "te(SSTrel, time)", "te(cdom, chla)",
        "cat(ferry)[yes]", "cat(winter)[2004]", "cat(winter)[2005]",
        "lin(xkm)", "lin(ykm)", "lin(xkm*ykm)", "te(xkm, ykm)",
        "by(te(xkm, ykm), time)",
    ):
        assert expected in names
    assert len(set(names)) == 48
    # smooth terms appear once per continuous covariate in the lin/sm block
    assert sum(n.startswith("sm(") for n in names) == 15


def test_full_survey_formula_learners_have_unit_df():
    frame, schema = full_survey_frame(n=220, seed=1)
    learners = build_learners(frame, FULL_SURVEY_FORMULA, schema=schema)
    for l in learners:
        assert abs(l.df() - 1.0) <= 1e-6, l.name


# ---------------------------------------------------------------------------
# consolidation
# ---------------------------------------------------------------------------


def test_unconditional_mean_anchors():
    assert unconditional_mean(0.0, 3.0, 0.5) == 0.0
    # p0(1, 1) = 1/2, so the truncated mean is 2 and halving it lands on 1
    assert unconditional_mean(0.5, 1.0, 1.0) == pytest.approx(1.0, rel=1e-12)
    # huge mean makes the zero mass vanish: pi = 1 returns mu itself
    assert unconditional_mean(1.0, 50.0, 1e-8) == pytest.approx(50.0, rel=1e-12)


def test_unconditional_mean_bounded_by_truncated_mean():
    rng = np.random.default_rng(4)
    pi = rng.uniform(0.0, 1.0, 300)
    mu = rng.uniform(0.05, 40.0, 300)
    sigma = rng.uniform(0.01, 3.0, 300)
    u = unconditional_mean(pi, mu, sigma)
    t = truncnb_mean(mu, sigma)
    assert np.all(u >= 0.0)
    assert np.all(u <= t + 1e-12)
    np.testing.assert_allclose(unconditional_mean(np.ones(300), mu, sigma), t, rtol=1e-14)


# ---------------------------------------------------------------------------
# fitting and prediction
# ---------------------------------------------------------------------------


def test_fit_predict_validity(small_fit):
    ds, model = small_fit
    pred = model.predict(ds.frame)
    assert list(pred.columns) == ["pi", "mu", "sigma", "cond_abundance", "abundance"]
    assert np.all((pred["pi"] > 0) & (pred["pi"] < 1))
    assert np.all(pred["mu"] > 0)
    assert np.all(pred["sigma"] > 0)
    # truncation lifts the conditional mean above the untruncated one
    assert np.all(pred["cond_abundance"] > pred["mu"])
    np.testing.assert_allclose(
        pred["cond_abundance"], truncnb_mean(pred["mu"], pred["sigma"]), rtol=1e-12
    )
    np.testing.assert_allclose(
        pred["abundance"], pred["pi"] * pred["cond_abundance"], rtol=1e-15
    )


def test_predict_matches_training_pathway(small_fit):
    ds, model = small_fit
    cat_levels = {
        n: s.levels for n, s in ds.schema.items() if s.kind == "categorical"
    }
    learners = build_learners(
        ds.covariate_frame(),
        model.formula_occupancy,
        model.spline_cfg,
        model.tensor_cfg,
        schema=cat_levels,
    )
    eta = model.occupancy.predict_eta(learners)
    np.testing.assert_array_equal(model.predict(ds.frame)["pi"], expit(eta))


def test_fit_calibration_sanity(small_fit):
    ds, model = small_fit
    pred = model.predict(ds.frame)
    occupancy_rate = (ds.counts > 0).mean()
    assert abs(pred["pi"].mean() - occupancy_rate) < 0.05
    pos = ds.counts > 0
    assert abs(pred["mu"][pos].mean() - ds.counts[pos].mean()) < 1.0


def test_predict_rejects_unseen_level(small_fit):
    ds, model = small_fit
    table = ds.frame.copy()
    table.loc[table.index[0], "winter"] = "1999"
    with pytest.raises(ValueError, match="1999"):
        model.predict(table)


def test_fit_requires_positive_counts():
    cfg = SimulationConfig(
        n_segments=20, winters={"2003": 2}, occupancy=ParameterSurface(-100.0)
    )
    ds, _ = simulate_hurdle_dataset(cfg, seed=5)
    with pytest.raises(ValueError, match="positive"):
        fit_hurdle(ds, formula="lin(time)", m_occ=5, m_mu=5, m_sigma=5)


# ---------------------------------------------------------------------------
# prediction grid
# ---------------------------------------------------------------------------


def test_prediction_grid_dates_and_shape(small_fit):
    ds, model = small_fit
    grid = prediction_grid(ds, "2003")
    assert len(grid) == 25 * 10
    assert set(grid["winter"]) == {"2003"}
    per_seg = grid.groupby("segment_id")["date"].nunique()
    assert (per_seg == 10).all()
    dates = sorted(grid["date"].unique())
    assert dates[0] == date(2003, 11, 15)
    assert dates[-1] == date(2004, 4, 1)
    # time runs from 31 days after the 15 October season start to 169
    assert grid["time"].min() == 31.0
    assert grid["time"].max() == 169.0
    offsets = np.unique(grid["time"]) - 31.0
    np.testing.assert_array_equal(offsets, np.round(np.linspace(0, 138, 10)))


def test_prediction_grid_uses_segment_medians(small_fit):
    ds, model = small_fit
    grid = prediction_grid(ds, "2004")
    sub = ds.frame[ds.frame["winter"] == "2004"]
    seg = sub["segment_id"].iloc[0]
    expected = sub.loc[sub["segment_id"] == seg, "sst"].median()
    got = grid.loc[grid["segment_id"] == seg, "sst"].unique()
    assert len(got) == 1 and got[0] == expected


def test_prediction_grid_unknown_winter(small_fit):
    ds, _ = small_fit
    with pytest.raises(ValueError, match="1990"):
        prediction_grid(ds, "1990")


def test_grid_predictions_are_finite(small_fit):
    ds, model = small_fit
    grid = prediction_grid(ds, "2003")
    pred = model.predict(grid)
    assert np.all(np.isfinite(pred.to_numpy()))


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def hand_grid(values_by_segment):
    rows = []
    for i, (seg, values) in enumerate(values_by_segment.items()):
        for v in values:
            rows.append({"segment_id": seg, "xkm": float(i), "ykm": 0.0, "v": v})
    grid = pd.DataFrame(rows)
    return grid, pd.DataFrame({"abundance": grid["v"]})


def test_summarize_hand_values():
    grid, pred = hand_grid(
        {"A": [1.0, 2.0, 3.0], "B": [0.0, 0.0, 0.0], "C": [10.0, 10.0, 40.0], "D": [5.0, 6.0, 7.0]}
    )
    out = summarize_segments(grid, pred).set_index("segment_id")
    assert out.loc["A", "median"] == 2.0
    assert out.loc["A", "mad"] == 1.0
    assert out.loc["A", "rel_mad_pct"] == 50.0
    assert out.loc["B", "median"] == 0.0
    assert np.isnan(out.loc["B", "rel_mad_pct"])
    # deviations {0, 0, 30} have median 0, so the spike leaves the MAD at zero
    assert out.loc["C", "mad"] == 0.0
    assert out.loc["D", "rel_mad_pct"] == pytest.approx(100.0 / 6.0)
    # medians (2, 0, 10, 6) quarter into one class each
    assert out.loc["B", "quartile"] == 1
    assert out.loc["A", "quartile"] == 2
    assert out.loc["D", "quartile"] == 3
    assert out.loc["C", "quartile"] == 4
    assert list(out["top2pct"]) == [False, False, True, False]


def test_top_flag_uses_interpolated_98th_percentile():
    grid, pred = hand_grid({f"s{i:03d}": [float(i)] * 2 for i in range(1, 101)})
    out = summarize_segments(grid, pred)
    # percentile 98 of 1..100 interpolates to 98.02, so exactly two qualify
    flagged = sorted(out.loc[out["top2pct"], "segment_id"])
    assert flagged == ["s099", "s100"]


def test_summarize_selects_the_requested_quantity():
    grid, _ = hand_grid({"A": [1.0, 3.0], "B": [2.0, 2.0]})
    pred = pd.DataFrame({"abundance": grid["v"], "pi": [0.5, 0.5, 0.25, 0.75]})
    out = summarize_segments(grid, pred, quantity="pi").set_index("segment_id")
    assert out.loc["A", "median"] == 0.5
    assert out.loc["B", "median"] == 0.5
    assert out.loc["B", "mad"] == 0.25
    with pytest.raises(ValueError, match="no column"):
        summarize_segments(grid, pred, quantity="typo")


def test_summarize_needs_two_predictions_per_segment():
    grid, pred = hand_grid({"A": [1.0, 2.0], "B": [5.0]})
    with pytest.raises(ValueError, match="fewer than 2"):
        summarize_segments(grid, pred)


def test_survey_totals(small_fit):
    ds, model = small_fit
    totals = survey_totals(model, ds)
    assert list(totals.columns) == ["survey_id", "n_segments", "observed", "predicted"]
    assert (totals["n_segments"] == 25).all()
    obs = ds.frame.groupby("survey_id")["count"].sum().sort_index()
    np.testing.assert_array_equal(totals["observed"].to_numpy(), obs.to_numpy())
    pred_total = model.predict(ds.frame)["abundance"].sum()
    assert totals["predicted"].sum() == pytest.approx(pred_total, rel=1e-12)


# ---------------------------------------------------------------------------
# fit quality
# ---------------------------------------------------------------------------


def test_pseudo_r2_is_zero_for_offset_only_model(small_fit):
    ds, _ = small_fit
    null_model = fit_hurdle(ds, formula=SMALL_FORMULA, m_occ=0, m_mu=0, m_sigma=0)
    assert pseudo_r2(null_model, ds) == pytest.approx(0.0, abs=1e-12)


def test_pseudo_r2_rewards_signal(small_fit):
    ds, model = small_fit
    r2 = pseudo_r2(model, ds)
    assert 0.05 < r2 < 1.0


def test_hurdle_log_likelihood_hand_case():
    y = np.array([0.0, 2.0])
    pi = np.array([0.25, 0.5])
    mu = np.array([3.0, 1.0])
    sigma = np.array([0.5, 1.0])
    # y=0 contributes log(0.75); y=2 contributes log(0.5) + log ptrunc(2)
    # at mu=sigma=1: p0 = 1/2 so ptrunc(y) = 2 * (1/2)^(y+1) = (1/2)^y
    expected = np.log(0.75) + np.log(0.5) + 2.0 * np.log(0.5)
    assert hurdle_log_likelihood(y, pi, mu, sigma) == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def test_model_round_trip_is_exact(small_fit, tmp_path):
    ds, model = small_fit
    p1 = tmp_path / "model.json"
    model.save(p1)
    back = HurdleModel.load(p1)
    pred1 = model.predict(ds.frame)
    pred2 = back.predict(ds.frame)
    for col in pred1.columns:
        np.testing.assert_array_equal(pred1[col].to_numpy(), pred2[col].to_numpy())
    p2 = tmp_path / "model2.json"
    back.save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_model_artifact_version_guard(small_fit, tmp_path):
    _, model = small_fit
    d = model.to_dict()
    d["version"] = 99
    with pytest.raises(ValueError, match="version"):
        HurdleModel.from_dict(d)
    d["format"] = "something-else"
    with pytest.raises(ValueError, match="artifact"):
        HurdleModel.from_dict(d)


def test_export_geojson(small_fit, tmp_path):
    ds, model = small_fit
    grid = prediction_grid(ds, "2003")
    summary = summarize_segments(grid, model.predict(grid))
    path = tmp_path / "map.geojson"
    export_geojson(summary, path)
    doc = json.loads(path.read_text())
    assert doc["type"] == "FeatureCollection"
    assert len(doc["features"]) == 25
    feat = doc["features"][0]
    ring = feat["geometry"]["coordinates"][0]
    assert len(ring) == 5 and ring[0] == ring[-1]
    xs = sorted({round(p[0], 9) for p in ring})
    assert xs[1] - xs[0] == pytest.approx(1.5)
    assert set(feat["properties"]) == {
        "segment_id", "median", "mad", "rel_mad_pct", "quartile", "top2pct",
    }
    export_geojson(summary, tmp_path / "map2.geojson")
    assert path.read_bytes() == (tmp_path / "map2.geojson").read_bytes()


# ---------------------------------------------------------------------------
# tuning wrappers
# ---------------------------------------------------------------------------


def test_tune_wrappers_run_small(small_fit):
    ds, _ = small_fit
    res = tune_occupancy_mstop(
        ds, formula="lin(sst)", grid=[0, 5, 10], n_folds=3, seed=0
    )
    assert res.m_stop in (0, 5, 10)
    surf = tune_count_mstop(
        ds,
        formula_mu="lin(sst)",
        formula_sigma="lin(sst)",
        grid_mu=[0, 5],
        grid_sigma=[0, 5],
        n_folds=2,
        seed=0,
    )
    assert surf.risk.shape == (2, 2)


def test_stability_wrapper_runs_small(small_fit):
    ds, _ = small_fit
    cfg = StabSelConfig(q=2, pi_thr=0.9, n_pairs=4)
    res = select_stable_learners(ds, cfg, formula="lin(sst) + lin(time)", seed=0)
    assert set(res) == {"occupancy", "mu", "sigma"}
    for r in res.values():
        assert r.q == 2
        assert len(r.frequencies) == 3
