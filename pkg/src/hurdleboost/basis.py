"""Base-learner construction: P-splines, penalties, and df pinning.

Every candidate effect enters the boosting loop as a BaseLearner, a ridge
problem (X, P, lambda) whose smoothing parameter is solved once on the
full training design so that the effective degrees of freedom

    df(lambda) = trace[(X'X + lambda*P)^(-1) X'X]

equal a common target (1 by default).  Equalized df is what makes the
per-iteration min-RSS selection comparable across learners of different
dimension.

Continuous covariates are decomposed into a centered linear learner plus
a P-spline "deviation from linear" learner whose fitted values are made
orthogonal to span{1, x} by a null-space reparameterization of the design;
bivariate tensor-product learners are treated the same way against
span{1, u, v, u*v}.  The orthogonalization absorbs the difference-penalty
null space, so the transformed penalty is positive definite and df can be
pushed all the way down to the target.

Builders are small serializable records (knots, centers, transforms) that
re-create design columns on new data; fitted models carry them for
prediction.  Out-of-range covariate values are handled by linear
extrapolation of the basis and logged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy.interpolate import BSpline

logger = logging.getLogger(__name__)

__all__ = [
    "BasisError",
    "SplineConfig",
    "DEFAULT_SPLINE",
    "DEFAULT_TENSOR",
    "bspline_knots",
    "bspline_design",
    "difference_penalty",
    "penalized_df",
    "solve_lambda_for_df",
    "BaseLearner",
    "ridge_fit",
    "intercept_learner",
    "linear_learner",
    "categorical_learners",
    "decompose_continuous",
    "tensor_learner",
    "spatial_surface",
    "varying_coefficient",
    "parse_formula",
    "build_learners",
    "builder_from_dict",
]

DF_TOL = 1e-6
_ORTHO_SV_TOL = 1e-9


class BasisError(ValueError):
    """Degenerate inputs or unattainable df targets."""


@dataclass(frozen=True)
class SplineConfig:
    """P-spline settings: basis degree, interior knot count, penalty order."""

    degree: int = 3
    n_interior_knots: int = 20
    diff_order: int = 2

    def __post_init__(self):
        if self.degree < 1:
            raise BasisError("spline degree must be >= 1")
        if self.n_interior_knots < 1:
            raise BasisError("need at least one interior knot")
        if self.diff_order < 1:
            raise BasisError("difference order must be >= 1")
        if self.diff_order > self.n_interior_knots + self.degree:
            raise BasisError("difference order too large for basis size")

    @property
    def n_basis(self) -> int:
        return self.n_interior_knots + self.degree + 1

    def to_dict(self):
        return {
            "degree": self.degree,
            "n_interior_knots": self.n_interior_knots,
            "diff_order": self.diff_order,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


DEFAULT_SPLINE = SplineConfig(degree=3, n_interior_knots=20, diff_order=2)
# Tensor-product marginals use a coarser basis to keep the surface tractable.
DEFAULT_TENSOR = SplineConfig(degree=3, n_interior_knots=10, diff_order=2)


# ---------------------------------------------------------------------------
# B-spline designs
# ---------------------------------------------------------------------------

def bspline_knots(x, cfg: SplineConfig) -> np.ndarray:
    """Equidistant knot vector over the observed range of ``x``.

    Interior knots split [min, max] into ``n_interior_knots + 1`` equal
    cells; the vector is extended ``degree`` steps beyond each boundary at
    the same spacing, which keeps the basis a partition of unity on the
    closed range.
    """
    x = np.asarray(x, dtype=float)
    lo, hi = float(np.min(x)), float(np.max(x))
    if not np.isfinite(lo) or not np.isfinite(hi):
        raise BasisError("non-finite covariate values")
    if hi - lo <= 0.0:
        raise BasisError("degenerate covariate range: max equals min")
    h = (hi - lo) / (cfg.n_interior_knots + 1)
    n_knots = cfg.n_interior_knots + 2 + 2 * cfg.degree
    return lo + h * (np.arange(n_knots) - cfg.degree)


def _design_from_knots(x, knots, degree, warn_label=None) -> np.ndarray:
    """Dense B-spline design on a fixed knot vector.

    Points outside [knots[degree], knots[-degree-1]] get the linear
    extrapolation B(edge) + (x - edge) * B'(edge) of each basis function,
    and the event is logged once per call.
    """
    x = np.asarray(x, dtype=float)
    lo = knots[degree]
    hi = knots[-degree - 1]
    spl = BSpline(knots, np.eye(len(knots) - degree - 1), degree, extrapolate=False)
    inner = np.clip(x, lo, hi)
    design = spl(inner)
    below = x < lo
    above = x > hi
    if below.any() or above.any():
        if warn_label:
            logger.warning(
                "%s: %d value(s) outside knot range [%g, %g]; "
                "using linear basis extrapolation",
                warn_label,
                int(below.sum() + above.sum()),
                lo,
                hi,
            )
        dspl = spl.derivative()
        if below.any():
            design[below] = spl(np.full(below.sum(), lo)) + (x[below] - lo)[
                :, None
            ] * dspl(np.full(below.sum(), lo))
        if above.any():
            design[above] = spl(np.full(above.sum(), hi)) + (x[above] - hi)[
                :, None
            ] * dspl(np.full(above.sum(), hi))
    return design


def bspline_design(x, cfg: SplineConfig = DEFAULT_SPLINE) -> np.ndarray:
    """B-spline design matrix of ``x`` with knots placed from its range.

    Shape is (n, n_interior_knots + degree + 1); rows sum to 1.
    """
    return _design_from_knots(x, bspline_knots(x, cfg), cfg.degree)


def difference_penalty(p: int, order: int = 2) -> np.ndarray:
    """Penalty matrix D'D for the order-th difference operator on p coefficients."""
    if order >= p:
        raise BasisError("difference order must be smaller than coefficient count")
    d = np.diff(np.eye(p), n=order, axis=0)
    return d.T @ d


# ---------------------------------------------------------------------------
# Effective degrees of freedom
# ---------------------------------------------------------------------------

def _penalized_spectrum(xtx, penalty):
    """Generalized eigenvalues d_i of (X'X, P) so df(lambda) = sum d/(d+lambda).

    P must be positive definite: a singular penalty means its null space
    was not removed by the decomposition and no lambda can reach a df
    target below the null-space dimension.
    """
    pe = np.linalg.eigvalsh(penalty)
    if pe[0] <= 1e-10 * max(pe[-1], 1e-300):
        raise BasisError(
            "penalty is singular on the design space; absorb its null space "
            "into unpenalized learners before solving for lambda"
        )
    try:
        d = scipy.linalg.eigh(xtx, penalty, eigvals_only=True)
    except scipy.linalg.LinAlgError:  # pragma: no cover - roundoff fallback
        bump = 1e-12 * float(np.trace(penalty)) / penalty.shape[0]
        d = scipy.linalg.eigh(
            xtx, penalty + bump * np.eye(penalty.shape[0]), eigvals_only=True
        )
    return np.clip(d, 0.0, None)


def penalized_df(X, penalty, lam: float) -> float:
    """trace[(X'X + lambda*P)^(-1) X'X] evaluated by direct solve."""
    X = np.asarray(X, dtype=float)
    xtx = X.T @ X
    if lam == 0.0:
        return float(np.trace(np.linalg.solve(xtx, xtx)))
    return float(np.trace(np.linalg.solve(xtx + lam * np.asarray(penalty), xtx)))


def solve_lambda_for_df(X, penalty, target_df: float = 1.0, tol: float = DF_TOL) -> float:
    """Smoothing parameter lambda with df(lambda) = target_df, by bisection on log lambda.

    The penalty must be positive definite on the design space (null space
    already removed by the decomposition), otherwise df cannot fall below
    the null-space dimension and the target is unattainable.
    """
    X = np.asarray(X, dtype=float)
    penalty = np.asarray(penalty, dtype=float)
    xtx = X.T @ X
    d = _penalized_spectrum(xtx, penalty)

    def df_at(lam):
        return float(np.sum(d / (d + lam)))

    rank = float(np.sum(d > 0.0))
    if target_df <= 0.0:
        raise BasisError("target df must be positive")
    if target_df >= rank:
        raise BasisError(
            f"target df {target_df} unattainable: design rank through the "
            f"penalty is {rank:g}"
        )
    lo, hi = 1e-12, 1e12
    while df_at(lo) < target_df:  # pragma: no cover - guard for extreme scales
        lo /= 1e4
        if lo < 1e-300:
            raise BasisError("df target unattainable at any lambda")
    while df_at(hi) > target_df:
        hi *= 1e4
        if hi > 1e300:
            raise BasisError("df target unattainable at any lambda")
    # bisection on log lambda; df is monotone decreasing in lambda
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if df_at(mid) > target_df:
            lo = mid
        else:
            hi = mid
        if abs(df_at(mid) - target_df) <= tol:
            return float(mid)
    raise BasisError("bisection for df target did not converge")  # pragma: no cover


# ---------------------------------------------------------------------------
# Design builders: serializable recipes for design columns on new data
# ---------------------------------------------------------------------------
#
# A builder's build(frame) takes a mapping of covariate name -> standardized
# value array and returns the learner's design matrix.  to_dict/from_dict
# round-trip through JSON for the model artifact.


@dataclass(frozen=True)
class InterceptBuilder:
    kind: str = "intercept"

    def build(self, frame):
        n = len(next(iter(frame.values())))
        return np.ones((n, 1))

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class LinearBuilder:
    """Centered product of one or more covariate columns."""

    factors: tuple[str, ...]
    center: float
    kind: str = "linear"

    def build(self, frame):
        col = np.ones(len(frame[self.factors[0]]))
        for name in self.factors:
            col = col * np.asarray(frame[name], dtype=float)
        return (col - self.center)[:, None]

    def to_dict(self):
        return {"kind": self.kind, "factors": list(self.factors), "center": self.center}


@dataclass(frozen=True)
class DummyBuilder:
    """Centered 0/1 indicator for one categorical level."""

    covariate: str
    level: str
    center: float
    kind: str = "dummy"

    def build(self, frame):
        vals = np.asarray(frame[self.covariate])
        return (np.asarray(vals == self.level, dtype=float) - self.center)[:, None]

    def to_dict(self):
        return {
            "kind": self.kind,
            "covariate": self.covariate,
            "level": self.level,
            "center": self.center,
        }


@dataclass(frozen=True)
class SplineDeviationBuilder:
    """B-spline design times the null-space transform from the decomposition."""

    covariate: str
    knots: tuple[float, ...]
    degree: int
    transform: tuple[tuple[float, ...], ...]
    kind: str = "spline_deviation"

    def build(self, frame):
        B = _design_from_knots(
            np.asarray(frame[self.covariate], dtype=float),
            np.asarray(self.knots),
            self.degree,
            warn_label=f"sm({self.covariate})",
        )
        return B @ np.asarray(self.transform)

    def to_dict(self):
        return {
            "kind": self.kind,
            "covariate": self.covariate,
            "knots": list(self.knots),
            "degree": self.degree,
            "transform": [list(r) for r in self.transform],
        }


@dataclass(frozen=True)
class TensorDeviationBuilder:
    """Row-wise Kronecker product of two marginal bases, then the transform."""

    covariates: tuple[str, str]
    knots_u: tuple[float, ...]
    knots_v: tuple[float, ...]
    degree: int
    transform: tuple[tuple[float, ...], ...]
    kind: str = "tensor_deviation"

    def build(self, frame):
        u = np.asarray(frame[self.covariates[0]], dtype=float)
        v = np.asarray(frame[self.covariates[1]], dtype=float)
        label = f"te({self.covariates[0]}, {self.covariates[1]})"
        Bu = _design_from_knots(u, np.asarray(self.knots_u), self.degree, label)
        Bv = _design_from_knots(v, np.asarray(self.knots_v), self.degree, label)
        raw = (Bu[:, :, None] * Bv[:, None, :]).reshape(len(u), -1)
        return raw @ np.asarray(self.transform)

    def to_dict(self):
        return {
            "kind": self.kind,
            "covariates": list(self.covariates),
            "knots_u": list(self.knots_u),
            "knots_v": list(self.knots_v),
            "degree": self.degree,
            "transform": [list(r) for r in self.transform],
        }


@dataclass(frozen=True)
class VaryingBuilder:
    """Inner builder's design multiplied rowwise by a covariate."""

    inner: object
    by: str
    kind: str = "varying"

    def build(self, frame):
        return self.inner.build(frame) * np.asarray(frame[self.by], dtype=float)[:, None]

    def to_dict(self):
        return {"kind": self.kind, "inner": self.inner.to_dict(), "by": self.by}


_BUILDER_KINDS = {
    "intercept": InterceptBuilder,
    "linear": LinearBuilder,
    "dummy": DummyBuilder,
    "spline_deviation": SplineDeviationBuilder,
    "tensor_deviation": TensorDeviationBuilder,
    "varying": VaryingBuilder,
}


def builder_from_dict(d) -> object:
    """Rebuild a design builder from its serialized form."""
    kind = d["kind"]
    if kind == "intercept":
        return InterceptBuilder()
    if kind == "linear":
        return LinearBuilder(factors=tuple(d["factors"]), center=d["center"])
    if kind == "dummy":
        return DummyBuilder(covariate=d["covariate"], level=d["level"], center=d["center"])
    if kind == "spline_deviation":
        return SplineDeviationBuilder(
            covariate=d["covariate"],
            knots=tuple(d["knots"]),
            degree=d["degree"],
            transform=tuple(tuple(r) for r in d["transform"]),
        )
    if kind == "tensor_deviation":
        return TensorDeviationBuilder(
            covariates=tuple(d["covariates"]),
            knots_u=tuple(d["knots_u"]),
            knots_v=tuple(d["knots_v"]),
            degree=d["degree"],
            transform=tuple(tuple(r) for r in d["transform"]),
        )
    if kind == "varying":
        return VaryingBuilder(inner=builder_from_dict(d["inner"]), by=d["by"])
    raise BasisError(f"unknown builder kind {kind!r}")


# ---------------------------------------------------------------------------
# BaseLearner
# ---------------------------------------------------------------------------


@dataclass
class BaseLearner:
    """One candidate effect: training design, penalty, pinned lambda.

    ``X`` is the design on the training rows; builders regenerate it for
    new data.  ``penalty`` is symmetric PSD in the (possibly transformed)
    coefficient space; ``lam`` is frozen after construction so resampling
    folds reuse it on their own row subsets.
    """

    name: str
    builder: object
    X: np.ndarray
    penalty: np.ndarray
    lam: float
    target_df: float = 1.0

    @property
    def n_columns(self) -> int:
        return self.X.shape[1]

    def df(self) -> float:
        """Effective df of this learner on its training design."""
        if not self.X.any():
            return 0.0
        return penalized_df(self.X, self.penalty, self.lam)


def ridge_fit(learner: BaseLearner, u, rows=None):
    """Penalized least squares of working residuals ``u`` on one learner.

    Returns (beta, rss) where rss = ||u - X beta||^2 on the given rows.
    An all-zero design (degenerate varying coefficient) fits nothing.
    """
    u = np.asarray(u, dtype=float)
    X = learner.X if rows is None else learner.X[rows]
    if not X.any():
        return np.zeros(X.shape[1]), float(u @ u)
    A = X.T @ X + learner.lam * learner.penalty
    beta = scipy.linalg.solve(A, X.T @ u, assume_a="pos")
    resid = u - X @ beta
    return beta, float(resid @ resid)


# ---------------------------------------------------------------------------
# Learner constructors
# ---------------------------------------------------------------------------

def intercept_learner(n: int) -> BaseLearner:
    """Explicit intercept: a ones column, unpenalized, df exactly 1."""
    return BaseLearner(
        name="int",
        builder=InterceptBuilder(),
        X=np.ones((n, 1)),
        penalty=np.zeros((1, 1)),
        lam=0.0,
    )


def linear_learner(frame, factors, name=None) -> BaseLearner:
    """Centered (product of) covariate column(s); single column, df 1 at lambda 0."""
    factors = tuple(factors)
    col = np.ones(len(frame[factors[0]]))
    for f in factors:
        col = col * np.asarray(frame[f], dtype=float)
    center = float(col.mean())
    builder = LinearBuilder(factors=factors, center=center)
    if name is None:
        name = f"lin({'*'.join(factors)})"
    return BaseLearner(
        name=name,
        builder=builder,
        X=(col - center)[:, None],
        penalty=np.zeros((1, 1)),
        lam=0.0,
    )


def categorical_learners(frame, covariate, levels) -> list[BaseLearner]:
    """One centered dummy learner per non-reference level (reference = levels[0])."""
    levels = [str(l) for l in levels]
    if len(levels) < 2:
        raise BasisError(f"categorical {covariate!r} needs at least two levels")
    vals = np.asarray(frame[covariate])
    out = []
    for level in levels[1:]:
        col = np.asarray(vals == level, dtype=float)
        center = float(col.mean())
        out.append(
            BaseLearner(
                name=f"cat({covariate})[{level}]",
                builder=DummyBuilder(covariate=covariate, level=level, center=center),
                X=(col - center)[:, None],
                penalty=np.zeros((1, 1)),
                lam=0.0,
            )
        )
    return out


def _nullspace_transform(design, lower_order):
    """Orthonormal basis T of coefficient directions whose fitted values are
    orthogonal to the lower-order columns: (lower_order' design) T = 0."""
    A = design.T @ lower_order  # (p, k)
    U, s, _ = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > _ORTHO_SV_TOL * (s[0] if s.size else 1.0)))
    if design.shape[1] - rank < 1:
        raise BasisError("orthogonalization removed every basis direction")
    return U[:, rank:]


def decompose_continuous(x, cfg: SplineConfig = DEFAULT_SPLINE, name: str = "x"):
    """Split a continuous covariate into linear and smooth-deviation learners.

    Returns ``(linear, deviation)``.  The deviation learner is the B-spline
    basis reparameterized so its fitted values are orthogonal to {1, x} on
    the training rows; that also makes its difference penalty positive
    definite, and lambda is then solved for df = 1.
    """
    x = np.asarray(x, dtype=float)
    frame = {name: x}
    lin = linear_learner(frame, (name,))

    knots = bspline_knots(x, cfg)
    B = _design_from_knots(x, knots, cfg.degree)
    P = difference_penalty(B.shape[1], cfg.diff_order)
    lower = np.column_stack([np.ones_like(x), x])
    T = _nullspace_transform(B, lower)
    Z = B @ T
    Pt = T.T @ P @ T
    lam = solve_lambda_for_df(Z, Pt, target_df=1.0)
    dev = BaseLearner(
        name=f"sm({name})",
        builder=SplineDeviationBuilder(
            covariate=name,
            knots=tuple(knots),
            degree=cfg.degree,
            transform=tuple(tuple(r) for r in T),
        ),
        X=Z,
        penalty=Pt,
        lam=lam,
    )
    return lin, dev


def tensor_learner(u, v, cfg: SplineConfig = DEFAULT_TENSOR, names=("u", "v")) -> BaseLearner:
    """Tensor-product P-spline deviation learner for a covariate pair.

    The design is the row-wise Kronecker product of the marginal bases,
    penalized by the Kronecker sum P_u (x) I + I (x) P_v, reparameterized
    to be orthogonal to {1, u, v, u*v}, with lambda solved for df = 1.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    knots_u = bspline_knots(u, cfg)
    knots_v = bspline_knots(v, cfg)
    Bu = _design_from_knots(u, knots_u, cfg.degree)
    Bv = _design_from_knots(v, knots_v, cfg.degree)
    raw = (Bu[:, :, None] * Bv[:, None, :]).reshape(len(u), -1)
    ku, kv = Bu.shape[1], Bv.shape[1]
    Pu = difference_penalty(ku, cfg.diff_order)
    Pv = difference_penalty(kv, cfg.diff_order)
    P = np.kron(Pu, np.eye(kv)) + np.kron(np.eye(ku), Pv)
    lower = np.column_stack([np.ones_like(u), u, v, u * v])
    T = _nullspace_transform(raw, lower)
    Z = raw @ T
    Pt = T.T @ P @ T
    lam = solve_lambda_for_df(Z, Pt, target_df=1.0)
    return BaseLearner(
        name=f"te({names[0]}, {names[1]})",
        builder=TensorDeviationBuilder(
            covariates=(names[0], names[1]),
            knots_u=tuple(knots_u),
            knots_v=tuple(knots_v),
            degree=cfg.degree,
            transform=tuple(tuple(r) for r in T),
        ),
        X=Z,
        penalty=Pt,
        lam=lam,
    )


def spatial_surface(x, y, cfg: SplineConfig = DEFAULT_TENSOR, names=("xkm", "ykm")):
    """Spatial block: linear x, linear y, linear x*y, and the tensor deviation."""
    frame = {names[0]: np.asarray(x, dtype=float), names[1]: np.asarray(y, dtype=float)}
    return [
        linear_learner(frame, (names[0],)),
        linear_learner(frame, (names[1],)),
        linear_learner(frame, (names[0], names[1])),
        tensor_learner(x, y, cfg, names=names),
    ]


def varying_coefficient(base: BaseLearner, t, by_name: str = "time") -> BaseLearner:
    """Multiply a learner's design rowwise by a covariate; re-solve lambda for df 1.

    The penalty is inherited.  A degenerate multiplier (t identically 0)
    yields an all-zero design that fits nothing and keeps lambda at 0.
    """
    t = np.asarray(t, dtype=float)
    X = base.X * t[:, None]
    name = f"by({base.name}, {by_name})"
    builder = VaryingBuilder(inner=base.builder, by=by_name)
    if not X.any():
        logger.warning("%s: multiplier is identically zero; learner is inert", name)
        return BaseLearner(
            name=name, builder=builder, X=X, penalty=base.penalty.copy(), lam=0.0
        )
    if base.penalty.any():
        lam = solve_lambda_for_df(X, base.penalty, target_df=base.target_df)
    else:
        lam = 0.0
    return BaseLearner(name=name, builder=builder, X=X, penalty=base.penalty.copy(), lam=lam)


# ---------------------------------------------------------------------------
# Formula grammar
# ---------------------------------------------------------------------------
#
# formula  := term ("+" term)*
# term     := lin(a) | lin(a*b*...) | sm(a) | cat(a) | te(a, b)
#           | spatial(a, b) | by(term, cov)
# An intercept learner is always prepended.  spatial(a, b) expands to
# lin(a) + lin(b) + lin(a*b) + te(a, b); by(term, cov) multiplies every
# learner the inner term expands to.


@dataclass(frozen=True)
class Term:
    kind: str
    args: tuple = ()
    inner: "Term | None" = None
    by: str | None = None


def _split_top_level(s: str, sep: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in s:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise BasisError(f"unbalanced parentheses in formula near {s!r}")
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth != 0:
        raise BasisError(f"unbalanced parentheses in formula near {s!r}")
    parts.append("".join(cur))
    return parts


def _parse_term(s: str) -> Term:
    s = s.strip()
    if not s:
        raise BasisError("empty term in formula")
    if "(" not in s:
        raise BasisError(f"unrecognized formula term {s!r}")
    head, rest = s.split("(", 1)
    head = head.strip()
    if not rest.endswith(")"):
        raise BasisError(f"malformed term {s!r}")
    body = rest[:-1]
    if head == "lin":
        factors = tuple(f.strip() for f in body.split("*"))
        if not all(factors):
            raise BasisError(f"bad lin() factors in {s!r}")
        return Term("lin", args=factors)
    if head in ("sm", "cat"):
        arg = body.strip()
        if not arg or "," in arg:
            raise BasisError(f"{head}() takes a single covariate, got {s!r}")
        return Term(head, args=(arg,))
    if head in ("te", "spatial"):
        args = [a.strip() for a in _split_top_level(body, ",")]
        if len(args) != 2 or not all(args):
            raise BasisError(f"{head}() takes two covariates, got {s!r}")
        return Term(head, args=tuple(args))
    if head == "by":
        args = _split_top_level(body, ",")
        if len(args) != 2:
            raise BasisError(f"by() takes (term, covariate), got {s!r}")
        return Term("by", inner=_parse_term(args[0]), by=args[1].strip())
    raise BasisError(f"unrecognized formula term {head!r}")


def parse_formula(formula: str) -> tuple[Term, ...]:
    """Parse a formula string into terms (intercept not included; it is implicit)."""
    formula = " ".join(formula.split())
    if not formula:
        raise BasisError("empty formula")
    return tuple(_parse_term(t) for t in _split_top_level(formula, "+"))


def _term_learners(term: Term, frame, schema, spline_cfg, tensor_cfg):
    def cont(name):
        if name not in frame:
            raise BasisError(f"formula references unknown covariate {name!r}")
        if schema is not None and schema.get(name) == "categorical":
            raise BasisError(f"covariate {name!r} is categorical, not continuous")
        return np.asarray(frame[name], dtype=float)

    if term.kind == "lin":
        for f in term.args:
            cont(f)
        return [linear_learner(frame, term.args)]
    if term.kind == "sm":
        _, dev = decompose_continuous(cont(term.args[0]), spline_cfg, name=term.args[0])
        return [dev]
    if term.kind == "cat":
        name = term.args[0]
        if name not in frame:
            raise BasisError(f"formula references unknown covariate {name!r}")
        levels = None
        if schema is not None and isinstance(schema.get(name), (list, tuple)):
            levels = list(schema[name])
        if levels is None:
            levels = sorted({str(v) for v in np.asarray(frame[name])})
        return categorical_learners(frame, name, levels)
    if term.kind == "te":
        a, b = term.args
        return [tensor_learner(cont(a), cont(b), tensor_cfg, names=(a, b))]
    if term.kind == "spatial":
        a, b = term.args
        return spatial_surface(cont(a), cont(b), tensor_cfg, names=(a, b))
    if term.kind == "by":
        t = cont(term.by)
        inner = _term_learners(term.inner, frame, schema, spline_cfg, tensor_cfg)
        return [varying_coefficient(bl, t, by_name=term.by) for bl in inner]
    raise BasisError(f"unhandled term kind {term.kind!r}")  # pragma: no cover


def build_learners(
    frame,
    formula: str,
    spline_cfg: SplineConfig = DEFAULT_SPLINE,
    tensor_cfg: SplineConfig = DEFAULT_TENSOR,
    schema=None,
) -> list[BaseLearner]:
    """Materialize the base-learner list for a formula on a training frame.

    ``frame`` maps covariate names to aligned arrays (standardized values
    for continuous covariates, labels for categorical ones).  ``schema``
    optionally maps categorical names to their level lists (reference
    level first) and is also used to reject categorical covariates inside
    continuous-only terms.  An intercept learner is always first.
    """
    terms = parse_formula(formula)
    n = len(next(iter(frame.values())))
    learners = [intercept_learner(n)]
    for term in terms:
        learners.extend(_term_learners(term, frame, schema, spline_cfg, tensor_cfg))
    names = [bl.name for bl in learners]
    if len(names) != len(set(names)):
        dupes = sorted({x for x in names if names.count(x) > 1})
        raise BasisError(f"duplicate base-learners in formula: {dupes}")
    return learners
