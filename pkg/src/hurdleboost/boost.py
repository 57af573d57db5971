"""Component-wise gradient boosting for additive predictors.

Each iteration evaluates the negative gradient of the loss at the current
predictor, ridge-fits it on every candidate base-learner, selects the
learner with the smallest squared error, and adds ``nu`` times that fit.
The distributional variant alternates a mean step and an overdispersion
step per outer iteration, each against the other's current predictor.

Stopping iterations are tuned by subsampling: half-samples are fit once
at the largest candidate, then out-of-bag risk at every grid point is
reconstructed from the stored update path, so a whole grid (or a whole
two-dimensional grid) costs one fit per fold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from hurdleboost.family import FamilyError, TruncNBMean, TruncNBOverdispersion

logger = logging.getLogger(__name__)

__all__ = [
    "BoostFit",
    "GamlssFit",
    "MstopResult",
    "RiskSurface",
    "fit_gam",
    "fit_gamlss",
    "subsample_mstop",
    "multidim_mstop",
    "default_gam_grid",
    "default_gamlss_grid",
]

DEFAULT_NU = 0.1
RESAMPLE_CAP = 100


def _designs_of(items, rows=None):
    out = []
    for item in items:
        X = item.X if hasattr(item, "X") else np.asarray(item, dtype=float)
        out.append(X if rows is None else X[rows])
    return out


class _SolverCache:
    """Per-fit precomputation over one row subset.

    Single-column learners are fit in a single vectorized pass; each
    multi-column learner gets a cached factorization of X'X + lam*P,
    valid for every iteration because lambda is frozen at construction.
    """

    def __init__(self, learners, rows=None):
        self.learners = list(learners)
        if not self.learners:
            raise ValueError("need at least one base-learner")
        self.designs = _designs_of(self.learners, rows)
        self.n_rows = self.designs[0].shape[0]
        single = [j for j, X in enumerate(self.designs) if X.shape[1] == 1]
        self.single_idx = single
        if single:
            cols = np.column_stack([self.designs[j][:, 0] for j in single])
            g = np.einsum("ij,ij->j", cols, cols)
            lam_pen = np.array(
                [self.learners[j].lam * self.learners[j].penalty[0, 0] for j in single]
            )
            d = g + lam_pen
            self.single_cols = cols
            self.single_g = g
            # a zero denominator means an all-zero column; it fits nothing
            self.single_d = np.where(d > 0, d, 1.0)
        self.multi = {}
        for j, X in enumerate(self.designs):
            if X.shape[1] == 1:
                continue
            if not X.any():
                self.multi[j] = None
                continue
            G = X.T @ X
            A = G + self.learners[j].lam * self.learners[j].penalty
            try:
                fac = ("cho", cho_factor(A, lower=True))
            except np.linalg.LinAlgError:
                fac = ("pinv", np.linalg.pinv(A, hermitian=True))
            self.multi[j] = (G, fac)

    def fit_all(self, u):
        """Ridge-fit ``u`` on every learner: (rss array, index -> beta)."""
        u = np.asarray(u, dtype=float)
        uu = float(u @ u)
        rss = np.full(len(self.learners), uu)
        betas = {}
        if self.single_idx:
            s = self.single_cols.T @ u
            b = s / self.single_d
            rss[self.single_idx] = uu - 2.0 * b * s + b * b * self.single_g
            for k, j in enumerate(self.single_idx):
                betas[j] = np.array([b[k]])
        for j, entry in self.multi.items():
            if entry is None:
                betas[j] = np.zeros(self.designs[j].shape[1])
                continue
            G, fac = entry
            s = self.designs[j].T @ u
            beta = cho_solve(fac[1], s) if fac[0] == "cho" else fac[1] @ s
            rss[j] = uu - 2.0 * float(beta @ s) + float(beta @ (G @ beta))
            betas[j] = beta
        return rss, betas


def _select(rss, names, iteration):
    j = int(np.argmin(rss))
    ties = np.flatnonzero(rss == rss[j])
    if len(ties) > 1:
        logger.warning(
            "iteration %d: RSS tie between %s; keeping the lowest index",
            iteration,
            [names[t] for t in ties],
        )
    return j


@dataclass
class BoostFit:
    """Fitted boosted predictor: an offset plus a replayable update path.

    ``increments`` holds (learner index, coefficient step) pairs with the
    step length already folded in, so partial sums reproduce the fit at
    any earlier stopping iteration exactly.
    """

    learner_names: tuple
    family_name: str
    offset: float
    nu: float
    increments: list
    train_risk: np.ndarray | None = None

    @property
    def m_stop(self) -> int:
        return len(self.increments)

    @property
    def selection_path(self) -> list:
        return [j for j, _ in self.increments]

    def selected(self, m=None) -> list:
        path = self.selection_path
        return sorted(set(path if m is None else path[:m]))

    def selected_names(self, m=None) -> list:
        return [self.learner_names[j] for j in self.selected(m)]

    def aggregate(self, m=None) -> dict:
        """Learner index -> summed coefficient vector over the first m steps."""
        incs = self.increments if m is None else self.increments[:m]
        out = {}
        for j, beta in incs:
            out[j] = beta.copy() if j not in out else out[j] + beta
        return out

    def predict_eta(self, learners, rows=None, m=None) -> np.ndarray:
        """Additive predictor on new designs (BaseLearners or plain matrices)."""
        if len(learners) != len(self.learner_names):
            raise ValueError(
                f"expected {len(self.learner_names)} designs, got {len(learners)}"
            )
        designs = _designs_of(learners, rows)
        eta = np.full(designs[0].shape[0], self.offset)
        for j, beta in self.aggregate(m).items():
            eta = eta + designs[j] @ beta
        return eta

    def to_dict(self) -> dict:
        return {
            "family": self.family_name,
            "offset": self.offset,
            "nu": self.nu,
            "learner_names": list(self.learner_names),
            "increments": [[int(j), [float(b) for b in beta]] for j, beta in self.increments],
            "train_risk": None
            if self.train_risk is None
            else [float(r) for r in self.train_risk],
        }

    @classmethod
    def from_dict(cls, d) -> "BoostFit":
        return cls(
            learner_names=tuple(d["learner_names"]),
            family_name=d["family"],
            offset=float(d["offset"]),
            nu=float(d["nu"]),
            increments=[(int(j), np.asarray(b, dtype=float)) for j, b in d["increments"]],
            train_risk=None
            if d.get("train_risk") is None
            else np.asarray(d["train_risk"], dtype=float),
        )


def fit_gam(y, learners, family, nu=DEFAULT_NU, m_stop=100, rows=None, offset=None, other=None):
    """Boost one additive predictor for ``family``.

    ``rows`` restricts fitting to a subset of the learner design rows;
    ``y`` and ``other`` (a fixed companion predictor some losses need)
    must already be on those rows when given.  The training risk path has
    one entry per iteration plus the offset-only starting point.
    """
    if m_stop < 0:
        raise ValueError("m_stop must be non-negative")
    cache = _SolverCache(learners, rows)
    y = np.asarray(y, dtype=float)
    yr = y if len(y) == cache.n_rows else y[rows]
    if len(yr) != cache.n_rows:
        raise ValueError("response length does not match learner designs")
    if offset is None:
        offset = family.offset_init(yr)
    names = [l.name for l in learners]
    eta = np.full(cache.n_rows, float(offset))
    risk = [float(np.mean(family.loss(yr, eta, other)))]
    increments = []
    for m in range(m_stop):
        u = family.neg_gradient(yr, eta, other)
        rss, betas = cache.fit_all(u)
        j = _select(rss, names, m)
        step = nu * betas[j]
        eta = eta + cache.designs[j] @ step
        increments.append((j, step))
        risk.append(float(np.mean(family.loss(yr, eta, other))))
    return BoostFit(
        learner_names=tuple(names),
        family_name=family.name,
        offset=float(offset),
        nu=float(nu),
        increments=increments,
        train_risk=np.asarray(risk),
    )


@dataclass
class GamlssFit:
    """Joint fit of the mean and overdispersion predictors."""

    mu: BoostFit
    sigma: BoostFit
    train_risk: np.ndarray | None = None

    def predict_eta(self, mu_learners, sigma_learners, rows=None, m_mu=None, m_sigma=None):
        return (
            self.mu.predict_eta(mu_learners, rows, m_mu),
            self.sigma.predict_eta(sigma_learners, rows, m_sigma),
        )

    def to_dict(self) -> dict:
        return {
            "mu": self.mu.to_dict(),
            "sigma": self.sigma.to_dict(),
            "train_risk": None
            if self.train_risk is None
            else [float(r) for r in self.train_risk],
        }

    @classmethod
    def from_dict(cls, d) -> "GamlssFit":
        return cls(
            mu=BoostFit.from_dict(d["mu"]),
            sigma=BoostFit.from_dict(d["sigma"]),
            train_risk=None
            if d.get("train_risk") is None
            else np.asarray(d["train_risk"], dtype=float),
        )


def fit_gamlss(
    y,
    mu_learners,
    sigma_learners,
    m_mu=100,
    m_sigma=100,
    nu=DEFAULT_NU,
    rows=None,
    offsets=None,
    families=(TruncNBMean(), TruncNBOverdispersion()),
):
    """Cyclic distributional boosting: a mu step then a sigma step per iteration.

    Each parameter stops at its own cap and idles while the other finishes.
    The joint risk path is recorded once per outer iteration.
    """
    fam_mu, fam_sigma = families
    cache_mu = _SolverCache(mu_learners, rows)
    cache_sigma = _SolverCache(sigma_learners, rows)
    if cache_mu.n_rows != cache_sigma.n_rows:
        raise ValueError("mu and sigma learner designs cover different rows")
    y = np.asarray(y, dtype=float)
    yr = y if len(y) == cache_mu.n_rows else y[rows]
    if len(yr) != cache_mu.n_rows:
        raise ValueError("response length does not match learner designs")
    if offsets is None:
        offsets = (fam_mu.offset_init(yr), fam_sigma.offset_init(yr))
    names_mu = [l.name for l in mu_learners]
    names_sigma = [l.name for l in sigma_learners]
    eta_mu = np.full(cache_mu.n_rows, float(offsets[0]))
    eta_sigma = np.full(cache_mu.n_rows, float(offsets[1]))
    inc_mu, inc_sigma = [], []
    risk = [float(np.mean(fam_mu.loss(yr, eta_mu, eta_sigma)))]
    for m in range(max(m_mu, m_sigma)):
        if m < m_mu:
            u = fam_mu.neg_gradient(yr, eta_mu, eta_sigma)
            rss, betas = cache_mu.fit_all(u)
            j = _select(rss, names_mu, m)
            step = nu * betas[j]
            eta_mu = eta_mu + cache_mu.designs[j] @ step
            inc_mu.append((j, step))
        if m < m_sigma:
            u = fam_sigma.neg_gradient(yr, eta_sigma, eta_mu)
            rss, betas = cache_sigma.fit_all(u)
            j = _select(rss, names_sigma, m)
            step = nu * betas[j]
            eta_sigma = eta_sigma + cache_sigma.designs[j] @ step
            inc_sigma.append((j, step))
        risk.append(float(np.mean(fam_mu.loss(yr, eta_mu, eta_sigma))))
    return GamlssFit(
        mu=BoostFit(tuple(names_mu), fam_mu.name, float(offsets[0]), float(nu), inc_mu),
        sigma=BoostFit(
            tuple(names_sigma), fam_sigma.name, float(offsets[1]), float(nu), inc_sigma
        ),
        train_risk=np.asarray(risk),
    )


# ---------------------------------------------------------------------------
# Early stopping by subsampled out-of-bag risk
# ---------------------------------------------------------------------------


def default_gam_grid() -> np.ndarray:
    """Candidate stopping iterations 0, 10, ..., 3000."""
    return np.arange(0, 3001, 10)


def default_gamlss_grid() -> np.ndarray:
    """31 candidates per parameter: 0 plus a rounded geometric ladder to 3000."""
    pts = [0]
    for v in np.geomspace(1.0, 3000.0, 30):
        iv = int(round(v))
        pts.append(iv if iv > pts[-1] else pts[-1] + 1)
    return np.asarray(pts)


def _check_grid(grid, default):
    if grid is None:
        return default()
    grid = np.asarray(sorted({int(g) for g in grid}))
    if len(grid) == 0 or grid[0] < 0:
        raise ValueError("stopping grid must be non-empty and non-negative")
    return grid


def _sample_fold(rng, n, degenerate):
    """Disjoint half-sample split, redrawn while ``degenerate`` rejects it."""
    resampled = 0
    while True:
        perm = rng.permutation(n)
        rows, oob = np.sort(perm[: n // 2]), np.sort(perm[n // 2 :])
        if not degenerate(rows, oob):
            return rows, oob, resampled
        resampled += 1
        if resampled >= RESAMPLE_CAP:
            raise RuntimeError(
                f"no usable half-sample after {RESAMPLE_CAP} redraws; "
                "the response is too unbalanced to subsample"
            )
        logger.warning("degenerate half-sample, redrawing (%d so far)", resampled)


def _replay_snapshots(fit, learners, oob, grid):
    """Out-of-bag predictor after each grid iteration, replayed from the path."""
    designs = _designs_of(learners, oob)
    eta = np.full(len(oob), fit.offset)
    pending = {}

    def flush():
        nonlocal eta
        for j, beta in pending.items():
            eta = eta + designs[j] @ beta
        pending.clear()

    snaps = []
    gi = 0
    if grid[gi] == 0:
        snaps.append(eta.copy())
        gi += 1
    for i, (j, beta) in enumerate(fit.increments, start=1):
        pending[j] = beta if j not in pending else pending[j] + beta
        if gi < len(grid) and i == grid[gi]:
            flush()
            snaps.append(eta.copy())
            gi += 1
    while gi < len(grid):
        flush()
        snaps.append(eta.copy())
        gi += 1
    return snaps


@dataclass
class MstopResult:
    """Subsampled stopping-iteration search for one predictor."""

    m_stop: int
    grid: np.ndarray
    oob_risk: np.ndarray
    fold_risk: np.ndarray
    n_resampled: int = 0


def subsample_mstop(
    y, learners, family, grid=None, n_folds=25, nu=DEFAULT_NU, seed=0, other=None
):
    """Pick a stopping iteration by mean out-of-bag risk over half-sample folds.

    Each fold fits once to the largest grid value; risk at every grid
    point comes from replaying that fold's update path on its held-out
    half.  Folds on which the family cannot even initialize (a one-class
    binary half-sample, say) are redrawn and counted.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    grid = _check_grid(grid, default_gam_grid)
    rng = np.random.default_rng(seed)

    def degenerate(rows, oob):
        try:
            family.offset_init(y[rows])
        except FamilyError:
            return True
        return False

    fold_risk = np.empty((n_folds, len(grid)))
    total_resampled = 0
    for f in range(n_folds):
        rows, oob, res = _sample_fold(rng, n, degenerate)
        total_resampled += res
        other_r = None if other is None else other[rows]
        other_o = None if other is None else other[oob]
        fit = fit_gam(
            y, learners, family, nu=nu, m_stop=int(grid[-1]), rows=rows, other=other_r
        )
        snaps = _replay_snapshots(fit, learners, oob, grid)
        fold_risk[f] = [float(np.mean(family.loss(y[oob], eta, other_o))) for eta in snaps]
    curve = fold_risk.mean(axis=0)
    m_hat = int(grid[int(np.argmin(curve))])
    logger.info("subsampled m_stop: %d (grid %d..%d, %d folds)", m_hat, grid[0], grid[-1], n_folds)
    return MstopResult(m_hat, grid, curve, fold_risk, total_resampled)


@dataclass
class RiskSurface:
    """Subsampled stopping-iteration search over a (mu, sigma) grid."""

    m_mu: int
    m_sigma: int
    grid_mu: np.ndarray
    grid_sigma: np.ndarray
    risk: np.ndarray
    n_resampled: int = 0


def multidim_mstop(
    y,
    mu_learners,
    sigma_learners,
    grid_mu=None,
    grid_sigma=None,
    n_folds=25,
    nu=DEFAULT_NU,
    seed=0,
    families=(TruncNBMean(), TruncNBOverdispersion()),
):
    """Joint stopping grid for the distributional fit.

    One cyclic fit per fold at the grid caps; out-of-bag risk at
    (a, b) pairs the predictor after the first ``a`` mean steps with the
    one after the first ``b`` overdispersion steps.  Row-major argmin
    breaks ties toward fewer mean steps, then fewer overdispersion steps.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    grid_mu = _check_grid(grid_mu, default_gamlss_grid)
    grid_sigma = _check_grid(grid_sigma, default_gamlss_grid)
    fam_mu, fam_sigma = families
    rng = np.random.default_rng(seed)

    def degenerate(rows, oob):
        try:
            fam_mu.offset_init(y[rows])
            fam_sigma.offset_init(y[rows])
        except FamilyError:
            return True
        return False

    surf = np.empty((n_folds, len(grid_mu), len(grid_sigma)))
    total_resampled = 0
    for f in range(n_folds):
        rows, oob, res = _sample_fold(rng, n, degenerate)
        total_resampled += res
        fit = fit_gamlss(
            y,
            mu_learners,
            sigma_learners,
            m_mu=int(grid_mu[-1]),
            m_sigma=int(grid_sigma[-1]),
            nu=nu,
            rows=rows,
            families=families,
        )
        snaps_mu = _replay_snapshots(fit.mu, mu_learners, oob, grid_mu)
        snaps_sigma = np.stack(_replay_snapshots(fit.sigma, sigma_learners, oob, grid_sigma))
        y_oob = y[oob]
        for a, eta_mu in enumerate(snaps_mu):
            surf[f, a] = np.mean(fam_mu.loss(y_oob, eta_mu, snaps_sigma), axis=1)
    risk = surf.mean(axis=0)
    a, b = np.unravel_index(int(np.argmin(risk)), risk.shape)
    logger.info(
        "subsampled (m_mu, m_sigma): (%d, %d) over %dx%d grid",
        grid_mu[a],
        grid_sigma[b],
        len(grid_mu),
        len(grid_sigma),
    )
    return RiskSurface(
        int(grid_mu[a]), int(grid_sigma[b]), grid_mu, grid_sigma, risk, total_resampled
    )
