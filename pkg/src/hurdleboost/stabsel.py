"""Stability selection for boosted predictors with complementary-pair halves.

Each of ``n_pairs`` draws splits the rows into two disjoint halves, runs
the boosting selection on each half until ``q`` distinct base-learners
have been picked, and records which learners made that first-q set.
Selection frequencies over the 2*n_pairs runs are therefore multiples of
1/(2*n_pairs); learners at or above the threshold frequency form the
stable set.

The error calibration ties together the per-run selection budget ``q``,
the threshold ``pi_thr``, and a bound on expected false discoveries:

    E[V] <= C(pi_thr) * q^2 / p,   PCER = E[V] / p

with C(t) = 1/(2t-1) under exchangeability alone ("exchangeable"), or
the sharper two-branch constant valid for unimodal selection-count
distributions ("unimodal").  Any two of {q, pi_thr, pcer_target} fix the
third through this relation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from hurdleboost.boost import _SolverCache
from hurdleboost.family import FamilyError, TruncNBMean, TruncNBOverdispersion

logger = logging.getLogger(__name__)

__all__ = [
    "StabSelConfig",
    "StabSelResult",
    "error_constant",
    "expected_false_bound",
    "stability_select",
    "stability_select_gamlss",
]

MAX_SELECTION_STEPS = 5000
SPLIT_REDRAW_CAP = 100


def error_constant(pi_thr, n_pairs=50, bound="exchangeable") -> float:
    """C(pi_thr) in the false-discovery bound E[V] <= C * q^2 / p."""
    if not 0.5 < pi_thr <= 1.0:
        raise ValueError("pi_thr must lie in (0.5, 1]")
    if bound == "exchangeable":
        return 1.0 / (2.0 * pi_thr - 1.0)
    if bound == "unimodal":
        step = 1.0 / (2.0 * n_pairs)
        if pi_thr <= 0.75:
            denom = 2.0 * (2.0 * pi_thr - 1.0 - step)
            if denom <= 0:
                raise ValueError(
                    f"pi_thr={pi_thr} is too close to 1/2 for the unimodal bound "
                    f"with {n_pairs} pairs"
                )
            return 1.0 / denom
        return 4.0 * (1.0 - pi_thr + step) / (1.0 + 1.0 / n_pairs)
    raise ValueError(f"unknown bound {bound!r}; use 'exchangeable' or 'unimodal'")


def expected_false_bound(q, pi_thr, p, n_pairs=50, bound="exchangeable") -> float:
    """Bound on the expected number of false discoveries in the stable set."""
    return error_constant(pi_thr, n_pairs, bound) * q * q / p


@dataclass(frozen=True)
class StabSelConfig:
    """Calibration inputs: exactly two of {q, pi_thr, pcer_target}.

    The third quantity follows from the error bound once the number of
    candidate learners ``p`` is known, so it is resolved per selection
    run rather than here.
    """

    q: int | None = None
    pi_thr: float | None = None
    pcer_target: float | None = None
    n_pairs: int = 50
    bound: str = "exchangeable"
    nu: float = 0.1
    max_steps: int = MAX_SELECTION_STEPS

    def __post_init__(self):
        given = sum(v is not None for v in (self.q, self.pi_thr, self.pcer_target))
        if given != 2:
            raise ValueError(
                "specify exactly two of q, pi_thr, pcer_target; "
                f"got {given} of them"
            )
        if self.q is not None and self.q < 1:
            raise ValueError("q must be a positive integer")
        if self.pi_thr is not None and not 0.5 < self.pi_thr <= 1.0:
            raise ValueError("pi_thr must lie in (0.5, 1]")
        if self.pcer_target is not None and not 0.0 < self.pcer_target < 1.0:
            raise ValueError("pcer_target must lie in (0, 1)")
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be positive")
        error_constant(self.pi_thr or 0.9, self.n_pairs, self.bound)

    def resolve(self, p):
        """(q, pi_thr, e_v, pcer) for ``p`` candidate learners.

        When q is derived it is rounded down, so the achieved bound is at
        most the requested target; the returned e_v and pcer are the
        achieved values for the integer q.
        """
        if p < 1:
            raise ValueError("need at least one candidate learner")
        q, pi_thr = self.q, self.pi_thr
        if q is None:
            c = error_constant(pi_thr, self.n_pairs, self.bound)
            q = int(np.floor(p * np.sqrt(self.pcer_target / c)))
            if q < 1:
                raise ValueError(
                    f"pcer_target={self.pcer_target} with pi_thr={pi_thr} admits "
                    f"no selections at p={p}; relax one of them"
                )
        elif pi_thr is None:
            k = self.pcer_target * p * p / (q * q)
            pi_thr = self._invert_constant(k)
        if q > p:
            raise ValueError(f"q={q} exceeds the {p} candidate learners")
        e_v = expected_false_bound(q, pi_thr, p, self.n_pairs, self.bound)
        return int(q), float(pi_thr), float(e_v), float(e_v / p)

    def _invert_constant(self, k):
        """pi_thr with error_constant(pi_thr) == k, if one exists."""
        if self.bound == "exchangeable":
            pi_thr = 0.5 * (1.0 / k + 1.0)
        else:
            step = 1.0 / (2.0 * self.n_pairs)
            pi_thr = 0.5 * (1.0 + step + 0.5 / k)
            if pi_thr > 0.75:
                pi_thr = 1.0 + step - k * (1.0 + 1.0 / self.n_pairs) / 4.0
                if pi_thr <= 0.75:
                    raise ValueError(
                        f"no unimodal threshold achieves the requested error level {k}"
                    )
        if not 0.5 < pi_thr <= 1.0:
            raise ValueError(
                f"requested error level needs pi_thr={pi_thr:.3f} outside (0.5, 1]; "
                "tighten q or relax pcer_target"
            )
        return pi_thr


@dataclass
class StabSelResult:
    """Selection frequencies and the calibrated stable set for one predictor."""

    learner_names: tuple
    frequencies: np.ndarray
    q: int
    pi_thr: float
    n_pairs: int
    bound: str
    expected_false: float
    pcer: float
    n_capped_runs: int = 0

    @property
    def stable_indices(self) -> list:
        return [int(j) for j in np.flatnonzero(self.frequencies >= self.pi_thr)]

    @property
    def stable_names(self) -> list:
        return [self.learner_names[j] for j in self.stable_indices]

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "pi_thr": self.pi_thr,
            "n_pairs": self.n_pairs,
            "bound": self.bound,
            "expected_false": self.expected_false,
            "pcer": self.pcer,
            "n_capped_runs": self.n_capped_runs,
            "frequencies": {
                name: float(f) for name, f in zip(self.learner_names, self.frequencies)
            },
            "stable": list(self.stable_names),
        }


def _complementary_halves(rng, n, usable):
    """Disjoint half split (odd row dropped), redrawn until both halves work."""
    for _ in range(SPLIT_REDRAW_CAP):
        perm = rng.permutation(n)
        half = n // 2
        rows_a, rows_b = np.sort(perm[:half]), np.sort(perm[half : 2 * half])
        if usable(rows_a) and usable(rows_b):
            return rows_a, rows_b
        logger.warning("degenerate complementary split, redrawing")
    raise RuntimeError(
        f"no usable complementary split after {SPLIT_REDRAW_CAP} redraws"
    )


def _run_until_q(y, cache, family, q, nu, max_steps, other=None):
    """First q distinct learners picked by boosting on one half-sample."""
    offset = family.offset_init(y)
    eta = np.full(len(y), float(offset))
    chosen = set()
    for m in range(max_steps):
        u = family.neg_gradient(y, eta, other)
        rss, betas = cache.fit_all(u)
        j = int(np.argmin(rss))
        chosen.add(j)
        if len(chosen) >= q:
            return chosen, False
        eta = eta + cache.designs[j] @ (nu * betas[j])
    logger.warning(
        "selection run hit the %d-step cap with %d of %d distinct learners",
        max_steps,
        len(chosen),
        q,
    )
    return chosen, True


def stability_select(y, learners, family, config: StabSelConfig, seed=0, other=None):
    """Stability selection for a single boosted predictor.

    ``other`` is an optional fixed companion predictor (full length),
    passed through to the loss on each half.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    p = len(learners)
    q, pi_thr, e_v, pcer = config.resolve(p)
    rng = np.random.default_rng(seed)

    def usable(rows):
        try:
            family.offset_init(y[rows])
        except FamilyError:
            return False
        return True

    counts = np.zeros(p)
    capped = 0
    for _ in range(config.n_pairs):
        for rows in _complementary_halves(rng, n, usable):
            cache = _SolverCache(learners, rows)
            other_r = None if other is None else other[rows]
            chosen, hit_cap = _run_until_q(
                y[rows], cache, family, q, config.nu, config.max_steps, other_r
            )
            capped += hit_cap
            counts[list(chosen)] += 1.0
    freqs = counts / (2.0 * config.n_pairs)
    logger.info(
        "stability selection: q=%d pi_thr=%.3f -> %d stable of %d learners",
        q,
        pi_thr,
        int((freqs >= pi_thr).sum()),
        p,
    )
    return StabSelResult(
        learner_names=tuple(l.name for l in learners),
        frequencies=freqs,
        q=q,
        pi_thr=pi_thr,
        n_pairs=config.n_pairs,
        bound=config.bound,
        expected_false=e_v,
        pcer=pcer,
        n_capped_runs=capped,
    )


def _run_gamlss_until_q(y, cache_mu, cache_sigma, families, q_mu, q_sigma, nu, max_steps):
    """Cyclic selection; each parameter freezes once its q distinct are picked."""
    fam_mu, fam_sigma = families
    eta_mu = np.full(len(y), float(fam_mu.offset_init(y)))
    eta_sigma = np.full(len(y), float(fam_sigma.offset_init(y)))
    chosen_mu, chosen_sigma = set(), set()
    for m in range(max_steps):
        if len(chosen_mu) < q_mu:
            u = fam_mu.neg_gradient(y, eta_mu, eta_sigma)
            rss, betas = cache_mu.fit_all(u)
            j = int(np.argmin(rss))
            chosen_mu.add(j)
            eta_mu = eta_mu + cache_mu.designs[j] @ (nu * betas[j])
        if len(chosen_sigma) < q_sigma:
            u = fam_sigma.neg_gradient(y, eta_sigma, eta_mu)
            rss, betas = cache_sigma.fit_all(u)
            j = int(np.argmin(rss))
            chosen_sigma.add(j)
            eta_sigma = eta_sigma + cache_sigma.designs[j] @ (nu * betas[j])
        if len(chosen_mu) >= q_mu and len(chosen_sigma) >= q_sigma:
            return chosen_mu, chosen_sigma, False
    logger.warning(
        "distributional selection hit the %d-step cap (%d/%d mu, %d/%d sigma)",
        max_steps,
        len(chosen_mu),
        q_mu,
        len(chosen_sigma),
        q_sigma,
    )
    return chosen_mu, chosen_sigma, True


def stability_select_gamlss(
    y,
    mu_learners,
    sigma_learners,
    config: StabSelConfig,
    seed=0,
    families=(TruncNBMean(), TruncNBOverdispersion()),
):
    """Per-parameter stability selection for the distributional fit.

    Both parameters are selected in the same cyclic runs so each sees the
    other's current predictor, but their budgets, frequencies, and error
    bounds are kept separate.  Returns (mu result, sigma result).
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    fam_mu, fam_sigma = families
    p_mu, p_sigma = len(mu_learners), len(sigma_learners)
    q_mu, pi_mu, ev_mu, pcer_mu = config.resolve(p_mu)
    q_sigma, pi_sigma, ev_sigma, pcer_sigma = config.resolve(p_sigma)
    rng = np.random.default_rng(seed)

    def usable(rows):
        try:
            fam_mu.offset_init(y[rows])
            fam_sigma.offset_init(y[rows])
        except FamilyError:
            return False
        return True

    counts_mu = np.zeros(p_mu)
    counts_sigma = np.zeros(p_sigma)
    capped = 0
    for _ in range(config.n_pairs):
        for rows in _complementary_halves(rng, n, usable):
            cache_mu = _SolverCache(mu_learners, rows)
            cache_sigma = _SolverCache(sigma_learners, rows)
            chosen_mu, chosen_sigma, hit_cap = _run_gamlss_until_q(
                y[rows], cache_mu, cache_sigma, families, q_mu, q_sigma,
                config.nu, config.max_steps,
            )
            capped += hit_cap
            counts_mu[list(chosen_mu)] += 1.0
            counts_sigma[list(chosen_sigma)] += 1.0
    runs = 2.0 * config.n_pairs
    res_mu = StabSelResult(
        learner_names=tuple(l.name for l in mu_learners),
        frequencies=counts_mu / runs,
        q=q_mu,
        pi_thr=pi_mu,
        n_pairs=config.n_pairs,
        bound=config.bound,
        expected_false=ev_mu,
        pcer=pcer_mu,
        n_capped_runs=capped,
    )
    res_sigma = StabSelResult(
        learner_names=tuple(l.name for l in sigma_learners),
        frequencies=counts_sigma / runs,
        q=q_sigma,
        pi_thr=pi_sigma,
        n_pairs=config.n_pairs,
        bound=config.bound,
        expected_false=ev_sigma,
        pcer=pcer_sigma,
        n_capped_runs=capped,
    )
    return res_mu, res_sigma
