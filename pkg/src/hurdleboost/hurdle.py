"""Hurdle abundance model: occupancy times positive-count size, consolidated.

The model has three boosted additive predictors sharing one base-learner
vocabulary: a logit-link occupancy probability fit on all rows, and a
log-link mean and overdispersion of the zero-truncated count fit on the
positive rows only.  Predictions consolidate the parts into the
unconditional expected count per observation window,

    abundance = pi * mu / (1 - p0(mu, sigma)),

where the second factor is the mean of the truncated count.  Summaries
aggregate a within-winter prediction grid per spatial segment; the model
artifact is a versioned JSON document whose reload reproduces
predictions bit for bit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np
import pandas as pd

from hurdleboost.basis import (
    DEFAULT_SPLINE,
    DEFAULT_TENSOR,
    SplineConfig,
    build_learners,
    builder_from_dict,
)
from hurdleboost.boost import (
    BoostFit,
    GamlssFit,
    fit_gam,
    fit_gamlss,
    multidim_mstop,
    subsample_mstop,
)
from hurdleboost.data import SurveyDataset, apply_standardization, standardize, winter_time
from hurdleboost.family import (
    BinomialLogit,
    TruncNBMean,
    TruncNBOverdispersion,
    truncnb_logpmf,
    truncnb_mean,
)
from hurdleboost.stabsel import StabSelConfig, stability_select, stability_select_gamlss

logger = logging.getLogger(__name__)

__all__ = [
    "FORMAT_VERSION",
    "FULL_SURVEY_FORMULA",
    "HurdleModel",
    "unconditional_mean",
    "fit_hurdle",
    "tune_occupancy_mstop",
    "tune_count_mstop",
    "select_stable_learners",
    "prediction_grid",
    "summarize_segments",
    "survey_totals",
    "pseudo_r2",
    "export_geojson",
    "GRID_START",
    "GRID_END",
]

FORMAT_VERSION = 1

# Full survey model: a linear and a smooth deviation learner for each
# continuous covariate, time interactions for relative temperature and
# depth, a colour/chlorophyll interaction, categorical contrasts, and a
# spatial surface with a temporal modulation.  48 learners including the
# intercept when winter has three levels and ferry two.
FULL_SURVEY_FORMULA = (
    "lin(time) + sm(time)"
    " + lin(SSTw) + sm(SSTw) + lin(SSTm) + sm(SSTm) + lin(SSTrel) + sm(SSTrel)"
    " + lin(SBT) + sm(SBT) + lin(depth) + sm(depth) + lin(d2land) + sm(d2land)"
    " + lin(chla) + sm(chla) + lin(cdom) + sm(cdom) + lin(meanphi) + sm(meanphi)"
    " + lin(SAR) + sm(SAR) + lin(tidebmean) + sm(tidebmean) + lin(tidesd) + sm(tidesd)"
    " + lin(strat) + sm(strat) + lin(obs_window) + sm(obs_window)"
    " + lin(NAOw)"
    " + by(lin(SSTrel), time) + te(SSTrel, time)"
    " + by(lin(depth), time) + te(depth, time)"
    " + te(cdom, chla)"
    " + cat(ferry) + cat(winter)"
    " + spatial(xkm, ykm) + by(spatial(xkm, ykm), time)"
)

# within-winter prediction window: mid-November to the first of April
GRID_START = (11, 15)
GRID_END = (4, 1)


def unconditional_mean(pi, mu, sigma):
    """Expected count folding occupancy into the truncated size: pi * mu / (1 - p0).

    At pi = 1 this is the truncated mean itself; at pi = 0 it is zero.
    Vectorized over any mix of scalars and arrays.
    """
    return np.asarray(pi, dtype=float) * truncnb_mean(mu, sigma)


def _categorical_levels(schema):
    return {
        name: spec.levels
        for name, spec in schema.items()
        if spec.kind == "categorical" and spec.levels is not None
    }


def _build(ds: SurveyDataset, formula, spline_cfg, tensor_cfg, rows=None):
    frame = ds.covariate_frame(rows)
    return build_learners(
        frame, formula, spline_cfg, tensor_cfg, schema=_categorical_levels(ds.schema)
    )


@dataclass
class HurdleModel:
    """Fitted hurdle model plus everything needed to predict on new tables."""

    schema: dict
    standardization: dict
    winter_start: tuple
    formula_occupancy: str
    formula_mu: str
    formula_sigma: str
    spline_cfg: SplineConfig
    tensor_cfg: SplineConfig
    occ_builders: list
    mu_builders: list
    sigma_builders: list
    occupancy: BoostFit
    counts: GamlssFit
    n_rows: int
    n_positive: int

    def _standardized(self, table):
        cols = apply_standardization(table, self.schema, self.standardization)
        for name, spec in self.schema.items():
            if spec.kind != "categorical" or spec.levels is None:
                continue
            unseen = sorted(set(cols[name]) - set(spec.levels))
            if unseen:
                raise ValueError(
                    f"covariate {name!r} has level(s) {unseen} the model never saw"
                )
        return cols

    def predict(self, table) -> pd.DataFrame:
        """Distribution parameters and consolidated abundance for raw covariates.

        ``table`` is a pandas frame or a name -> array mapping holding every
        schema covariate on the original (unstandardized) scale.
        """
        cols = self._standardized(table)
        eta_occ = self.occupancy.predict_eta([b.build(cols) for b in self.occ_builders])
        eta_mu, eta_sigma = self.counts.predict_eta(
            [b.build(cols) for b in self.mu_builders],
            [b.build(cols) for b in self.sigma_builders],
        )
        pi = BinomialLogit().response(eta_occ)
        mu = TruncNBMean().response(eta_mu)
        sigma = TruncNBOverdispersion().response(eta_sigma)
        return pd.DataFrame(
            {
                "pi": pi,
                "mu": mu,
                "sigma": sigma,
                "cond_abundance": truncnb_mean(mu, sigma),
                "abundance": unconditional_mean(pi, mu, sigma),
            }
        )

    def log_likelihood(self, ds: SurveyDataset) -> float:
        """Full-model hurdle log-likelihood of a dataset."""
        pred = self.predict(ds.frame)
        return hurdle_log_likelihood(
            ds.counts,
            pred["pi"].to_numpy(),
            pred["mu"].to_numpy(),
            pred["sigma"].to_numpy(),
        )

    def to_dict(self) -> dict:
        return {
            "format": "hurdleboost-model",
            "version": FORMAT_VERSION,
            "schema": {
                name: {"kind": spec.kind, "levels": list(spec.levels) if spec.levels else None}
                for name, spec in self.schema.items()
            },
            "standardization": {
                name: [mean, sd] for name, (mean, sd) in self.standardization.items()
            },
            "winter_start": list(self.winter_start),
            "formulas": {
                "occupancy": self.formula_occupancy,
                "mu": self.formula_mu,
                "sigma": self.formula_sigma,
            },
            "spline_cfg": self.spline_cfg.to_dict(),
            "tensor_cfg": self.tensor_cfg.to_dict(),
            "builders": {
                "occupancy": [b.to_dict() for b in self.occ_builders],
                "mu": [b.to_dict() for b in self.mu_builders],
                "sigma": [b.to_dict() for b in self.sigma_builders],
            },
            "fits": {
                "occupancy": self.occupancy.to_dict(),
                "counts": self.counts.to_dict(),
            },
            "n_rows": self.n_rows,
            "n_positive": self.n_positive,
        }

    @classmethod
    def from_dict(cls, d) -> "HurdleModel":
        from hurdleboost.data import CovariateSpec

        if d.get("format") != "hurdleboost-model":
            raise ValueError("not a model artifact")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(
                f"model artifact version {d.get('version')} is not supported "
                f"(expected {FORMAT_VERSION})"
            )
        schema = {
            name: CovariateSpec(
                kind=s["kind"], levels=tuple(s["levels"]) if s["levels"] else None
            )
            for name, s in d["schema"].items()
        }
        return cls(
            schema=schema,
            standardization={
                name: (float(m), float(s)) for name, (m, s) in d["standardization"].items()
            },
            winter_start=tuple(d["winter_start"]),
            formula_occupancy=d["formulas"]["occupancy"],
            formula_mu=d["formulas"]["mu"],
            formula_sigma=d["formulas"]["sigma"],
            spline_cfg=SplineConfig.from_dict(d["spline_cfg"]),
            tensor_cfg=SplineConfig.from_dict(d["tensor_cfg"]),
            occ_builders=[builder_from_dict(b) for b in d["builders"]["occupancy"]],
            mu_builders=[builder_from_dict(b) for b in d["builders"]["mu"]],
            sigma_builders=[builder_from_dict(b) for b in d["builders"]["sigma"]],
            occupancy=BoostFit.from_dict(d["fits"]["occupancy"]),
            counts=GamlssFit.from_dict(d["fits"]["counts"]),
            n_rows=int(d["n_rows"]),
            n_positive=int(d["n_positive"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "HurdleModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_hurdle(
    ds: SurveyDataset,
    formula: str = FULL_SURVEY_FORMULA,
    formula_mu: str | None = None,
    formula_sigma: str | None = None,
    m_occ: int = 100,
    m_mu: int = 100,
    m_sigma: int = 100,
    nu: float = 0.1,
    spline_cfg: SplineConfig = DEFAULT_SPLINE,
    tensor_cfg: SplineConfig = DEFAULT_TENSOR,
) -> HurdleModel:
    """Fit the three predictors at fixed stopping iterations.

    The occupancy part sees every row; the count parts see positive rows
    only, with their smoothness penalties calibrated on that subset.
    The dataset is standardized here if it is not already.
    """
    if not ds.is_standardized:
        ds = standardize(ds)
    formula_mu = formula_mu or formula
    formula_sigma = formula_sigma or formula
    pos = ds.positive_rows()
    if len(pos) < 2:
        raise ValueError(f"only {len(pos)} positive counts; cannot fit the count model")

    occ_learners = _build(ds, formula, spline_cfg, tensor_cfg)
    y_occ = (ds.counts > 0).astype(float)
    logger.info("occupancy: %d learners, %d rows, m_stop=%d", len(occ_learners), ds.n_rows, m_occ)
    occ_fit = fit_gam(y_occ, occ_learners, BinomialLogit(), nu=nu, m_stop=m_occ)

    mu_learners = _build(ds, formula_mu, spline_cfg, tensor_cfg, rows=pos)
    sigma_learners = _build(ds, formula_sigma, spline_cfg, tensor_cfg, rows=pos)
    logger.info(
        "counts: %d + %d learners, %d positive rows, m=(%d, %d)",
        len(mu_learners),
        len(sigma_learners),
        len(pos),
        m_mu,
        m_sigma,
    )
    count_fit = fit_gamlss(
        ds.counts[pos], mu_learners, sigma_learners, m_mu=m_mu, m_sigma=m_sigma, nu=nu
    )

    return HurdleModel(
        schema=ds.schema,
        standardization=ds.standardization,
        winter_start=ds.winter_start,
        formula_occupancy=formula,
        formula_mu=formula_mu,
        formula_sigma=formula_sigma,
        spline_cfg=spline_cfg,
        tensor_cfg=tensor_cfg,
        occ_builders=[l.builder for l in occ_learners],
        mu_builders=[l.builder for l in mu_learners],
        sigma_builders=[l.builder for l in sigma_learners],
        occupancy=occ_fit,
        counts=count_fit,
        n_rows=ds.n_rows,
        n_positive=int(len(pos)),
    )


def tune_occupancy_mstop(
    ds: SurveyDataset,
    formula: str = FULL_SURVEY_FORMULA,
    grid=None,
    n_folds: int = 25,
    nu: float = 0.1,
    seed: int = 0,
    spline_cfg: SplineConfig = DEFAULT_SPLINE,
    tensor_cfg: SplineConfig = DEFAULT_TENSOR,
):
    """Subsampled stopping-iteration search for the occupancy predictor."""
    if not ds.is_standardized:
        ds = standardize(ds)
    learners = _build(ds, formula, spline_cfg, tensor_cfg)
    y_occ = (ds.counts > 0).astype(float)
    return subsample_mstop(
        y_occ, learners, BinomialLogit(), grid=grid, n_folds=n_folds, nu=nu, seed=seed
    )


def tune_count_mstop(
    ds: SurveyDataset,
    formula_mu: str = FULL_SURVEY_FORMULA,
    formula_sigma: str = FULL_SURVEY_FORMULA,
    grid_mu=None,
    grid_sigma=None,
    n_folds: int = 25,
    nu: float = 0.1,
    seed: int = 0,
    spline_cfg: SplineConfig = DEFAULT_SPLINE,
    tensor_cfg: SplineConfig = DEFAULT_TENSOR,
):
    """Subsampled (m_mu, m_sigma) grid search for the count predictors."""
    if not ds.is_standardized:
        ds = standardize(ds)
    pos = ds.positive_rows()
    mu_learners = _build(ds, formula_mu, spline_cfg, tensor_cfg, rows=pos)
    sigma_learners = _build(ds, formula_sigma, spline_cfg, tensor_cfg, rows=pos)
    return multidim_mstop(
        ds.counts[pos],
        mu_learners,
        sigma_learners,
        grid_mu=grid_mu,
        grid_sigma=grid_sigma,
        n_folds=n_folds,
        nu=nu,
        seed=seed,
    )


def select_stable_learners(
    ds: SurveyDataset,
    config: StabSelConfig,
    formula: str = FULL_SURVEY_FORMULA,
    formula_mu: str | None = None,
    formula_sigma: str | None = None,
    seed: int = 0,
    spline_cfg: SplineConfig = DEFAULT_SPLINE,
    tensor_cfg: SplineConfig = DEFAULT_TENSOR,
):
    """Stability selection for all three predictors.

    Returns {"occupancy": result, "mu": result, "sigma": result}.
    """
    if not ds.is_standardized:
        ds = standardize(ds)
    formula_mu = formula_mu or formula
    formula_sigma = formula_sigma or formula
    pos = ds.positive_rows()
    occ_learners = _build(ds, formula, spline_cfg, tensor_cfg)
    y_occ = (ds.counts > 0).astype(float)
    res_occ = stability_select(y_occ, occ_learners, BinomialLogit(), config, seed=seed)
    mu_learners = _build(ds, formula_mu, spline_cfg, tensor_cfg, rows=pos)
    sigma_learners = _build(ds, formula_sigma, spline_cfg, tensor_cfg, rows=pos)
    res_mu, res_sigma = stability_select_gamlss(
        ds.counts[pos], mu_learners, sigma_learners, config, seed=seed + 1
    )
    return {"occupancy": res_occ, "mu": res_mu, "sigma": res_sigma}


# ---------------------------------------------------------------------------
# Prediction grids and seasonal summaries
# ---------------------------------------------------------------------------


def _grid_dates(winter: str, n_dates: int):
    year = int(winter)
    start = date(year, *GRID_START)
    end = date(year + 1, *GRID_END)
    offsets = np.round(np.linspace(0, (end - start).days, n_dates)).astype(int)
    return [start + timedelta(days=int(o)) for o in offsets]


def prediction_grid(ds: SurveyDataset, winter: str, n_dates: int = 10) -> pd.DataFrame:
    """Segment-by-date covariate table for one winter.

    Dates are ``n_dates`` evenly spaced days from 15 November to 1 April.
    Covariates other than time come from the dataset's rows for that
    winter: the per-segment median for continuous covariates and the
    per-segment most frequent level for categorical ones.  Callers with
    externally known covariate values for the grid dates can skip this
    and hand their own table to :meth:`HurdleModel.predict`.
    """
    sub = ds.frame[ds.frame["winter"] == str(winter)]
    if sub.empty:
        raise ValueError(f"dataset has no rows for winter {winter!r}")
    dates = _grid_dates(winter, n_dates)
    per_segment = {}
    for name, spec in ds.schema.items():
        if name in ("time", "winter"):
            continue
        g = sub.groupby("segment_id")[name]
        per_segment[name] = g.median() if spec.kind == "continuous" else g.agg(
            lambda s: s.mode().iloc[0]
        )
    coords = sub.groupby("segment_id")[["xkm", "ykm"]].first()
    segments = coords.index.to_numpy()
    n_seg, n_d = len(segments), len(dates)

    grid = pd.DataFrame(
        {
            "segment_id": np.repeat(segments, n_d),
            "date": np.tile(dates, n_seg),
            "winter": str(winter),
        }
    )
    grid["time"] = [winter_time(d, ds.winter_start) for d in grid["date"]]
    for col in ("xkm", "ykm"):
        if col not in per_segment:
            per_segment[col] = coords[col]
    for name, values in per_segment.items():
        grid[name] = values.reindex(grid["segment_id"]).to_numpy()
    return grid


def summarize_segments(
    grid: pd.DataFrame, predictions: pd.DataFrame, quantity: str = "abundance"
) -> pd.DataFrame:
    """Per-segment seasonal summary of one predicted quantity.

    ``quantity`` names a column of ``predictions`` (pi, mu, sigma,
    cond_abundance or abundance).  For each segment: the median over
    grid dates, the (unscaled) median absolute deviation, the relative
    MAD in percent (NaN when the median is zero), the quartile class
    1-4 of the median among segments, and a flag for medians at or
    above the 98th percentile.  Needs at least two predictions per
    segment, else spread statistics would be silently degenerate.
    """
    if quantity not in predictions.columns:
        raise ValueError(f"predictions have no column {quantity!r}")
    df = grid[["segment_id", "xkm", "ykm"]].copy()
    df["value"] = predictions[quantity].to_numpy()
    counts = df.groupby("segment_id").size()
    if (counts < 2).any():
        short = list(counts.index[counts < 2])
        raise ValueError(f"fewer than 2 predictions for segment(s) {short}")
    rows = []
    for seg, part in df.groupby("segment_id"):
        v = part["value"].to_numpy()
        med = float(np.median(v))
        mad = float(np.median(np.abs(v - med)))
        rows.append(
            {
                "segment_id": seg,
                "xkm": float(part["xkm"].iloc[0]),
                "ykm": float(part["ykm"].iloc[0]),
                "median": med,
                "mad": mad,
                "rel_mad_pct": 100.0 * mad / med if med > 0 else float("nan"),
            }
        )
    out = pd.DataFrame(rows)
    medians = out["median"].to_numpy()
    quartiles = np.percentile(medians, [25, 50, 75])
    out["quartile"] = np.searchsorted(quartiles, medians, side="left") + 1
    out["top2pct"] = medians >= np.percentile(medians, 98)
    return out


def survey_totals(model: HurdleModel, ds: SurveyDataset) -> pd.DataFrame:
    """Observed versus predicted total count per survey."""
    pred = model.predict(ds.frame)
    df = pd.DataFrame(
        {
            "survey_id": ds.frame["survey_id"].to_numpy(),
            "observed": ds.counts,
            "predicted": pred["abundance"].to_numpy(),
        }
    )
    out = df.groupby("survey_id", sort=True).agg(
        n_segments=("observed", "size"),
        observed=("observed", "sum"),
        predicted=("predicted", "sum"),
    )
    return out.reset_index()


# ---------------------------------------------------------------------------
# Fit quality
# ---------------------------------------------------------------------------


def hurdle_log_likelihood(y, pi, mu, sigma) -> float:
    """Log-likelihood of counts under occupancy pi and truncated size (mu, sigma)."""
    y = np.asarray(y, dtype=float)
    pi = np.clip(np.asarray(pi, dtype=float), 1e-12, 1.0 - 1e-12)
    ll = np.where(y > 0, np.log(pi), np.log1p(-pi))
    posmask = y > 0
    if posmask.any():
        ll[posmask] += truncnb_logpmf(
            y[posmask], np.asarray(mu)[posmask], np.asarray(sigma)[posmask]
        )
    return float(ll.sum())


def pseudo_r2(model: HurdleModel, ds: SurveyDataset) -> float:
    """Variance-explained style score on the full hurdle likelihood.

    Compares the fitted model against the offset-only null on the same
    rows and rescales the likelihood-ratio measure to a 0-1 range:
    [1 - exp(2(l0 - l1)/n)] / [1 - exp(2 l0/n)].
    """
    y = ds.counts
    n = len(y)
    l1 = model.log_likelihood(ds)

    pos = y > 0
    pi0 = float(pos.mean())
    mu0 = float(np.exp(TruncNBMean().offset_init(y[pos])))
    sigma0 = float(np.exp(TruncNBOverdispersion().offset_init(y[pos])))
    l0 = hurdle_log_likelihood(y, np.full(n, pi0), np.full(n, mu0), np.full(n, sigma0))

    if l1 < l0:
        logger.warning("model fits worse than the null (l1=%.3f < l0=%.3f)", l1, l0)
    cox_snell = 1.0 - np.exp(2.0 * (l0 - l1) / n)
    ceiling = 1.0 - np.exp(2.0 * l0 / n)
    return float(cox_snell / ceiling)


# ---------------------------------------------------------------------------
# GeoJSON export
# ---------------------------------------------------------------------------


def export_geojson(summary: pd.DataFrame, path, edge_km: float = 1.5) -> None:
    """Write segment summaries as square polygons in the survey's km plane.

    Coordinates are planar kilometres (the xkm/ykm system the model was
    fit in), not longitude/latitude; squares of ``edge_km`` are centered
    on each segment.  Output is deterministic: features sorted by
    segment, keys sorted, floats in shortest round-trip form.
    """
    h = edge_km / 2.0
    features = []
    for _, row in summary.sort_values("segment_id").iterrows():
        x, y = float(row["xkm"]), float(row["ykm"])
        ring = [
            [x - h, y - h],
            [x + h, y - h],
            [x + h, y + h],
            [x - h, y + h],
            [x - h, y - h],
        ]
        rel = float(row["rel_mad_pct"])
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {
                    "segment_id": str(row["segment_id"]),
                    "median": float(row["median"]),
                    "mad": float(row["mad"]),
                    "rel_mad_pct": None if np.isnan(rel) else rel,
                    "quartile": int(row["quartile"]),
                    "top2pct": bool(row["top2pct"]),
                },
            }
        )
    doc = {
        "type": "FeatureCollection",
        "crs_note": "planar kilometres in the survey grid, not lon/lat",
        "features": features,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
