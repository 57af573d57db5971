"""Survey dataset handling: loading, validation, standardization, simulation.

A dataset is a long-format table of segment-by-survey observations with a
bird count, an observation-window area, coordinates in km, and declared
environmental covariates.  Dates are ISO-8601; a ``winter`` season label
and a within-winter ``time`` covariate (days since the season start,
default 15 October) are derived from the date when not already present.

Standardization (sample mean 0, sd 1) applies to continuous covariates
only and is carried as stored (mean, sd) constants; raw columns, the
count, and the obs_window effort field are never overwritten.  Model
code reads covariates through :meth:`SurveyDataset.covariate_frame`,
which applies the constants, so the same pathway serves training and
prediction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from datetime import date, timedelta

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import nbinom

from hurdleboost.family import log_p_zero

logger = logging.getLogger(__name__)

__all__ = [
    "SchemaError",
    "ValidationError",
    "CovariateSpec",
    "SurveyDataset",
    "parse_schema",
    "winter_label",
    "winter_time",
    "load_dataset",
    "save_dataset",
    "write_table",
    "standardize",
    "apply_standardization",
    "ParameterSurface",
    "SimulationConfig",
    "simulate_hurdle_dataset",
]

BASE_COLUMNS = ("segment_id", "survey_id", "date", "xkm", "ykm", "count", "obs_window")

STANDARDIZE_EPS = 1e-12


class SchemaError(ValueError):
    """Missing or malformed columns and covariate declarations."""


class ValidationError(ValueError):
    """Row-level contract violations, reported with row indices."""


@dataclass(frozen=True)
class CovariateSpec:
    """Declared covariate: continuous, or categorical with ordered levels."""

    kind: str
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical"):
            raise SchemaError(f"covariate kind must be continuous/categorical, got {self.kind!r}")
        if self.kind == "categorical" and self.levels is not None and len(self.levels) < 2:
            raise SchemaError("categorical covariates need at least two levels")


def parse_schema(spec) -> dict[str, CovariateSpec]:
    """Schema from config form: name -> 'continuous' | {'kind': 'categorical', 'levels': [...]}.

    The first declared level of a categorical covariate is its reference.
    """
    out = {}
    for name, v in spec.items():
        if isinstance(v, str):
            out[name] = CovariateSpec(kind=v)
        elif isinstance(v, dict):
            levels = v.get("levels")
            out[name] = CovariateSpec(
                kind=v.get("kind", "categorical"),
                levels=tuple(str(l) for l in levels) if levels else None,
            )
        else:
            raise SchemaError(f"bad covariate declaration for {name!r}: {v!r}")
    return out


def winter_label(d: date, winter_start=(10, 15)) -> str:
    """Season label: the calendar year in which the winter starts."""
    year = d.year if (d.month, d.day) >= winter_start else d.year - 1
    return str(year)


def winter_time(d: date, winter_start=(10, 15)) -> float:
    """Days since the 15 October (by default) that opens the winter of ``d``."""
    start = date(int(winter_label(d, winter_start)), *winter_start)
    return float((d - start).days)


@dataclass
class SurveyDataset:
    """Validated survey table plus covariate schema and scaling constants.

    ``frame`` keeps raw values; ``standardization`` maps continuous
    covariate names to (mean, sd) once :func:`standardize` has run.
    """

    frame: pd.DataFrame
    schema: dict[str, CovariateSpec]
    standardization: dict[str, tuple[float, float]] = field(default_factory=dict)
    winter_start: tuple[int, int] = (10, 15)

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    @property
    def counts(self) -> np.ndarray:
        return self.frame["count"].to_numpy(dtype=float)

    @property
    def is_standardized(self) -> bool:
        return bool(self.standardization)

    def covariate_frame(self, rows=None) -> dict[str, np.ndarray]:
        """Covariate name -> array mapping with standardization applied."""
        sub = self.frame if rows is None else self.frame.iloc[rows]
        return apply_standardization(sub, self.schema, self.standardization)

    def positive_rows(self) -> np.ndarray:
        return np.flatnonzero(self.counts > 0)


def _required_missing(frame, schema):
    needed = list(BASE_COLUMNS) + [c for c in schema if c not in ("time", "winter")]
    return [c for c in needed if c not in frame.columns]


def _derive_columns(frame, schema, winter_start):
    dates = frame["date"]
    if "winter" not in frame.columns:
        frame["winter"] = [winter_label(d, winter_start) for d in dates]
    else:
        frame["winter"] = frame["winter"].astype(str)
    if "time" not in frame.columns:
        frame["time"] = [winter_time(d, winter_start) for d in dates]
    if "time" not in schema:
        schema["time"] = CovariateSpec(kind="continuous")
    if "winter" not in schema and frame["winter"].nunique() >= 2:
        schema["winter"] = CovariateSpec(
            kind="categorical", levels=tuple(sorted(frame["winter"].unique()))
        )
    return frame, schema


def _validate(frame, schema):
    problems = []
    counts = frame["count"]
    bad = frame.index[(counts < 0) | (counts != np.floor(counts)) | counts.isna()]
    if len(bad):
        problems.append(f"count must be a non-negative integer; rows {list(bad[:5])}")
    ow = frame["obs_window"]
    bad = frame.index[(ow <= 0) | ow.isna()]
    if len(bad):
        problems.append(f"obs_window must be positive; rows {list(bad[:5])}")
    dup = frame.duplicated(subset=["segment_id", "survey_id"])
    if dup.any():
        problems.append(
            f"duplicate (segment_id, survey_id) pairs; rows {list(frame.index[dup][:5])}"
        )
    for name, spec in schema.items():
        col = frame[name]
        if spec.kind == "continuous":
            vals = pd.to_numeric(col, errors="coerce")
            bad = frame.index[vals.isna()]
            if len(bad):
                problems.append(
                    f"covariate {name!r} has missing or non-numeric values; rows {list(bad[:5])}"
                )
        else:
            if col.isna().any():
                bad = frame.index[col.isna()]
                problems.append(f"covariate {name!r} has missing values; rows {list(bad[:5])}")
            elif spec.levels is not None:
                known = set(spec.levels)
                mask = ~col.astype(str).isin(known)
                if mask.any():
                    bad = frame.index[mask]
                    problems.append(
                        f"covariate {name!r} has unknown level(s) "
                        f"{sorted(set(col[mask].astype(str)))[:3]}; rows {list(bad[:5])}"
                    )
    if problems:
        raise ValidationError("; ".join(problems))


def load_dataset(path, schema, winter_start=(10, 15)) -> SurveyDataset:
    """Read and validate a survey CSV.

    ``schema`` maps covariate names to :class:`CovariateSpec` (or the
    config form accepted by :func:`parse_schema`).  Missing cells are
    rejected, never imputed.  Returns an unstandardized dataset.
    """
    if not isinstance(next(iter(schema.values()), None), (CovariateSpec, type(None))):
        schema = parse_schema(schema)
    schema = dict(schema)
    # round_trip parsing inverts repr-formatted floats bit for bit
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    missing = _required_missing(frame, schema)
    if missing:
        raise SchemaError(f"missing required column(s): {missing}")
    try:
        frame["date"] = pd.to_datetime(frame["date"], format="ISO8601").dt.date
    except (ValueError, TypeError) as e:
        raise ValidationError(f"unparseable ISO-8601 date: {e}") from e
    frame["segment_id"] = frame["segment_id"].astype(str)
    frame["survey_id"] = frame["survey_id"].astype(str)
    frame, schema = _derive_columns(frame, schema, winter_start)
    for name, spec in schema.items():
        if spec.kind == "categorical":
            frame[name] = frame[name].astype(str)
            if spec.levels is None:
                schema[name] = replace(spec, levels=tuple(sorted(frame[name].unique())))
    _validate(frame, schema)
    logger.info(
        "loaded %d rows, %d segments, %d surveys; covariates: %s",
        len(frame),
        frame["segment_id"].nunique(),
        frame["survey_id"].nunique(),
        ", ".join(sorted(schema)),
    )
    return SurveyDataset(frame=frame, schema=schema, winter_start=winter_start)


def write_table(frame: pd.DataFrame, path, header_comment: str | None = None) -> None:
    """Deterministic CSV: floats in shortest round-trip form, optional # header."""
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(",".join(frame.columns) + "\n")
        for row in frame.itertuples(index=False):
            fh.write(",".join(_cell(v) for v in row) + "\n")


def save_dataset(ds: SurveyDataset, path, header_comment: str | None = None) -> None:
    """Write the raw table back to CSV; floats use shortest round-trip repr."""
    write_table(ds.frame, path, header_comment)


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def standardize(ds: SurveyDataset) -> SurveyDataset:
    """Attach (mean, sd) scaling constants for every continuous covariate.

    Uses the sample sd (ddof=1).  A covariate with sd below 1e-12 is
    degenerate and rejected.  Raw columns are left untouched; the
    covariate accessor applies the transform.
    """
    consts = {}
    for name, spec in ds.schema.items():
        if spec.kind != "continuous":
            continue
        vals = ds.frame[name].to_numpy(dtype=float)
        mean = float(vals.mean())
        sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        if sd < STANDARDIZE_EPS:
            raise ValidationError(f"covariate {name!r} has zero variance; cannot standardize")
        consts[name] = (mean, sd)
    return replace(ds, standardization=consts)


def apply_standardization(frame_like, schema, constants) -> dict[str, np.ndarray]:
    """Covariate name -> array with stored (mean, sd) applied to continuous ones.

    Accepts a pandas frame or a plain mapping of arrays; used both for
    training frames and for new prediction tables.
    """
    out = {}
    for name, spec in schema.items():
        col = frame_like[name]
        vals = col.to_numpy() if hasattr(col, "to_numpy") else np.asarray(col)
        if spec.kind == "continuous":
            vals = vals.astype(float)
            if name in constants:
                mean, sd = constants[name]
                vals = (vals - mean) / sd
            out[name] = vals
        else:
            out[name] = vals.astype(str)
    return out


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------
#
# True parameter surfaces are linear predictors on the raw covariates plus
# optional named smooth bumps; links (logit for occupancy, log for mu and
# sigma) keep the parameters valid by construction.  Python callables are
# also accepted for the three surfaces.


def _eval_smooth(term, cols):
    kind = term.get("kind")
    if kind == "sin":
        x = cols[term["covariate"]]
        period = term.get("period", 1.0)
        phase = term.get("phase", 0.0)
        return term.get("amplitude", 1.0) * np.sin(2.0 * np.pi * (x - phase) / period)
    if kind == "quad":
        x = cols[term["covariate"]]
        return term.get("coef", 1.0) * x**2
    if kind == "gauss2d":
        dx = cols["xkm"] - term["x0"]
        dy = cols["ykm"] - term["y0"]
        ln = term.get("length", 1.0)
        return term.get("amplitude", 1.0) * np.exp(-(dx**2 + dy**2) / (2.0 * ln**2))
    raise SchemaError(f"unknown smooth term kind {kind!r}")


@dataclass(frozen=True)
class ParameterSurface:
    """True linear predictor: intercept + sum(coef * covariate) + smooth terms."""

    intercept: float = 0.0
    linear: dict = field(default_factory=dict)
    smooth: tuple = ()

    def evaluate(self, cols) -> np.ndarray:
        n = len(next(iter(cols.values())))
        eta = np.full(n, self.intercept, dtype=float)
        for name, coef in self.linear.items():
            eta += coef * np.asarray(cols[name], dtype=float)
        for term in self.smooth:
            eta += _eval_smooth(term, cols)
        return eta

    @classmethod
    def from_dict(cls, d):
        return cls(
            intercept=float(d.get("intercept", 0.0)),
            linear=dict(d.get("linear", {})),
            smooth=tuple(d.get("smooth", ())),
        )


@dataclass(frozen=True)
class SimulationConfig:
    """Synthetic hurdle survey: grid geometry, covariate generators, true surfaces.

    ``covariates`` maps a name to {"dist": "normal"|"uniform", "varies":
    "segment"|"row", ...params}.  Surfaces may be ParameterSurface specs
    or Python callables taking the raw covariate column mapping.
    """

    n_segments: int = 100
    winters: dict = field(default_factory=lambda: {"2003": 5})
    covariates: dict = field(default_factory=dict)
    occupancy: object = ParameterSurface(intercept=0.0)
    count_mean: object = ParameterSurface(intercept=1.0)
    count_overdispersion: object = ParameterSurface(intercept=-0.5)
    segment_edge_km: float = 1.5
    obs_window_km2: float = 0.27
    winter_start: tuple[int, int] = (10, 15)

    @classmethod
    def from_dict(cls, d):
        def surface(v):
            return ParameterSurface.from_dict(v) if isinstance(v, dict) else v

        kw = dict(d)
        for key in ("occupancy", "count_mean", "count_overdispersion"):
            if key in kw:
                kw[key] = surface(kw[key])
        if "winter_start" in kw:
            kw["winter_start"] = tuple(kw["winter_start"])
        return cls(**kw)


def _segment_grid(n, edge):
    nx = int(np.ceil(np.sqrt(n)))
    idx = np.arange(n)
    x = (idx % nx + 0.5) * edge
    y = (idx // nx + 0.5) * edge
    return x, y


def _gen_covariate(spec, rng, n_segments, n_rows, seg_index):
    dist = spec.get("dist", "normal")
    varies = spec.get("varies", "segment")
    size = n_segments if varies == "segment" else n_rows
    if dist == "normal":
        vals = rng.normal(spec.get("mean", 0.0), spec.get("sd", 1.0), size)
    elif dist == "uniform":
        vals = rng.uniform(spec.get("low", 0.0), spec.get("high", 1.0), size)
    else:
        raise SchemaError(f"unknown covariate generator {dist!r}")
    return vals[seg_index] if varies == "segment" else vals


def _sample_truncated_nb(rng, mu, sigma):
    """Zero-truncated NB draws via inverse cdf on uniforms restricted to (p0, 1)."""
    p0 = np.exp(log_p_zero(mu, sigma))
    u = p0 + (1.0 - p0) * rng.uniform(size=mu.shape)
    r = 1.0 / sigma
    p = 1.0 / (1.0 + sigma * mu)
    draws = nbinom.ppf(u, r, p)
    return np.maximum(draws, 1.0)


def simulate_hurdle_dataset(config: SimulationConfig, seed: int):
    """Simulate a survey dataset from a known hurdle model.

    Returns ``(dataset, truth)`` where truth is a frame of the row-level
    true occupancy probability, NB mean, and overdispersion used to draw
    the counts (handy as an oracle for recovery checks).
    """
    rng = np.random.default_rng(seed)
    n_seg = config.n_segments
    xkm, ykm = _segment_grid(n_seg, config.segment_edge_km)
    seg_ids = np.array([f"s{i:04d}" for i in range(n_seg)])

    rows = []
    for winter in sorted(config.winters):
        n_surveys = config.winters[winter]
        start = date(int(winter), *config.winter_start)
        # surveys evenly spaced across mid-November to the end of March
        offsets = np.linspace(30, 165, n_surveys).round().astype(int)
        for k, off in enumerate(offsets):
            rows.append((winter, f"{winter}w{k:02d}", start + timedelta(days=int(off))))

    n_obs = n_seg * len(rows)
    seg_index = np.tile(np.arange(n_seg), len(rows))
    frame = pd.DataFrame(
        {
            "segment_id": seg_ids[seg_index],
            "survey_id": np.repeat([r[1] for r in rows], n_seg),
            "date": np.repeat([r[2] for r in rows], n_seg),
            "winter": np.repeat([r[0] for r in rows], n_seg),
            "xkm": xkm[seg_index],
            "ykm": ykm[seg_index],
            "obs_window": np.full(n_obs, config.obs_window_km2),
        }
    )
    frame["time"] = [winter_time(d, config.winter_start) for d in frame["date"]]

    # obs_window is constant here, so it stays effort-only rather than a covariate
    schema = {
        "xkm": CovariateSpec("continuous"),
        "ykm": CovariateSpec("continuous"),
    }
    cols = {c: frame[c].to_numpy(dtype=float) for c in ("xkm", "ykm", "time", "obs_window")}
    for name, spec in config.covariates.items():
        vals = _gen_covariate(spec, rng, n_seg, n_obs, seg_index)
        frame[name] = vals
        cols[name] = vals
        schema[name] = CovariateSpec("continuous")

    def surface_eval(surface):
        return surface(cols) if callable(surface) else surface.evaluate(cols)

    pi = expit(surface_eval(config.occupancy))
    mu = np.exp(surface_eval(config.count_mean))
    sigma = np.exp(surface_eval(config.count_overdispersion))
    if np.any(mu <= 0) or np.any(sigma <= 0) or np.any((pi < 0) | (pi > 1)):
        raise ValidationError("simulation surfaces produced invalid parameters")

    present = rng.uniform(size=n_obs) < pi
    counts = np.zeros(n_obs)
    if present.any():
        counts[present] = _sample_truncated_nb(rng, mu[present], sigma[present])
    frame["count"] = counts.astype(int)

    frame, schema = _derive_columns(frame, schema, config.winter_start)
    _validate(frame, schema)
    truth = pd.DataFrame({"pi": pi, "mu": mu, "sigma": sigma})
    ds = SurveyDataset(frame=frame, schema=schema, winter_start=config.winter_start)
    return ds, truth
