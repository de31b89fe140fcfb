"""Design construction and GLM fitting (identity and logit links).

Designs are described by :class:`TermSpec`, an ordered list of term strings:

- ``"1"`` for the intercept
- a variable name (``"x"``, ``"a"``, ``"z2"``, ...)
- powers ``"x^2"`` and ``"x^3"``
- absolute values ``"|x|"``
- products of any of the above joined by ``*``, e.g. ``"x*z"``, ``"x^2*a"``

Counterfactual prediction works by rebuilding the design with selected
variables overridden (a scalar or a per-unit vector) and reusing the
fitted coefficients; nothing is refit.

Least squares is solved through the singular value decomposition, never
the normal equations.  Logistic fits use iteratively reweighted least
squares (Newton steps with step-halving on the log-likelihood).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import (
    DimensionMismatch,
    NotConverged,
    RankDeficient,
    SchemaError,
    Separation,
    UnknownVariable,
)

# Relative singular-value cutoff below which a design counts as rank deficient.
RANK_TOL = 1e-10
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
COEF_CAP = 30.0
MAX_HALVINGS = 30

_FACTOR_RE = re.compile(r"^(?:\|(?P<abs>[a-z_][a-z0-9_]*)\||(?P<name>[a-z_][a-z0-9_]*)(?:\^(?P<pow>[23]))?)$")


def _parse_factor(text: str) -> tuple[str, int, bool]:
    """Return (variable, power, absolute) for one ``*``-separated factor."""
    match = _FACTOR_RE.match(text)
    if match is None:
        raise SchemaError(f"cannot parse design factor {text!r}")
    if match.group("abs") is not None:
        return match.group("abs"), 1, True
    return match.group("name"), int(match.group("pow") or 1), False


@dataclass(frozen=True)
class TermSpec:
    """Ordered, duplicate-free list of design terms."""

    terms: tuple[str, ...]

    def __post_init__(self):
        if isinstance(self.terms, str):
            raise SchemaError("terms must be a sequence of strings, not a single string")
        cleaned = tuple(str(t).strip() for t in self.terms)
        if not cleaned:
            raise SchemaError("a design needs at least one term")
        parsed = []
        for term in cleaned:
            if term == "1":
                parsed.append(())
                continue
            factors = tuple(sorted(_parse_factor(f) for f in term.split("*")))
            parsed.append(factors)
        if len(set(parsed)) != len(parsed):
            raise SchemaError(f"duplicate terms in design: {cleaned}")
        object.__setattr__(self, "terms", cleaned)
        object.__setattr__(self, "_parsed", tuple(parsed))

    def __len__(self) -> int:
        return len(self.terms)

    def variables(self) -> set[str]:
        """Names of every variable the design touches."""
        return {name for factors in self._parsed for name, _, _ in factors}

    def to_json(self) -> list[str]:
        return list(self.terms)

    @classmethod
    def from_json(cls, obj) -> "TermSpec":
        if not isinstance(obj, (list, tuple)):
            raise SchemaError("term spec JSON must be a list of strings")
        return cls(tuple(obj))


def build_design(
    spec: TermSpec,
    dataset,
    overrides: dict[str, float | np.ndarray] | None = None,
) -> np.ndarray:
    """Evaluate a TermSpec into an (n, k) design matrix.

    ``overrides`` substitutes variable columns before any term is formed:
    scalars broadcast (the usual counterfactual A=a or M=m), vectors
    replace per unit (used by the g-computation z draws).  Override labels
    for ``a``/``m`` must belong to the dataset's declared support.
    """
    overrides = overrides or {}
    n = dataset.n
    for name, value in overrides.items():
        if np.isscalar(value):
            support = {"a": dataset.a_support, "m": dataset.m_support}.get(name)
            if support is not None and value not in support:
                raise SchemaError(f"override {name}={value} is not in support {list(support)}")

    def resolve(name: str) -> np.ndarray:
        if name in overrides:
            value = overrides[name]
            if np.isscalar(value):
                return np.full(n, float(value))
            arr = np.asarray(value, dtype=float)
            if arr.shape != (n,):
                raise SchemaError(f"override for {name!r} must be scalar or shape ({n},)")
            return arr
        return dataset.column(name)

    columns = []
    for factors in spec._parsed:
        if not factors:
            columns.append(np.ones(n))
            continue
        col = np.ones(n)
        for name, power, absolute in factors:
            base = resolve(name)
            if absolute:
                base = np.abs(base)
            elif power > 1:
                base = base**power
            col = col * base
        columns.append(col)
    return np.column_stack(columns)


@dataclass(frozen=True)
class GlmFit:
    """Fitted coefficients plus convergence bookkeeping."""

    link: str
    coef: np.ndarray
    converged: bool
    iterations: int

    def __post_init__(self):
        object.__setattr__(self, "coef", np.asarray(self.coef, dtype=float))


def _check_xy(design, response, what: str):
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim != 2:
        raise SchemaError(f"{what}: design must be 2-dimensional")
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise SchemaError(f"{what}: response length must match design rows")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise SchemaError(f"{what}: non-finite values in design or response")
    return x, y


def fit_ols(design, response, weights=None, ridge: float = 0.0) -> GlmFit:
    """Weighted least squares via SVD.

    Raises :class:`RankDeficient` when the smallest singular value falls
    below ``RANK_TOL`` times the largest.  Passing ``ridge > 0`` appends
    ``sqrt(ridge) * I`` rows instead of failing, for callers that accept a
    shrunk solution on collinear designs.
    """
    x, y = _check_xy(design, response, "fit_ols")
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != y.shape:
            raise SchemaError("fit_ols: weights length must match response")
        if (w < 0).any():
            raise SchemaError("fit_ols: weights must be non-negative")
        keep = w > 0
        x, y, w = x[keep], y[keep], w[keep]
        root = np.sqrt(w)
        x = x * root[:, None]
        y = y * root
    k = x.shape[1]
    if x.shape[0] < k:
        raise RankDeficient(f"fewer rows ({x.shape[0]}) than columns ({k}) after weighting")
    if ridge > 0.0:
        x = np.vstack([x, np.sqrt(ridge) * np.eye(k)])
        y = np.concatenate([y, np.zeros(k)])
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    if s[0] == 0.0 or s[-1] < RANK_TOL * s[0]:
        if ridge <= 0.0:
            raise RankDeficient(
                f"design is numerically rank deficient (singular values {s.min():.3e} "
                f"vs {s.max():.3e}); drop terms or retry with ridge > 0"
            )
    coef = vt.T @ ((u.T @ y) / s)
    return GlmFit(link="identity", coef=coef, converged=True, iterations=1)


def _log_likelihood(eta: np.ndarray, y: np.ndarray) -> float:
    # sum y*eta - log(1 + exp(eta)), computed stably
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(
    design,
    response,
    tol: float = IRLS_TOL,
    max_iter: int = IRLS_MAX_ITER,
    coef_cap: float = COEF_CAP,
) -> GlmFit:
    """Binary logistic regression by IRLS with step-halving.

    Convergence means the max-abs score (gradient of the log-likelihood)
    dropped below ``tol``.  Coefficients exceeding ``coef_cap`` in absolute
    value raise :class:`Separation`; running out of iterations, or halving
    down to a step that no longer improves the likelihood while the score
    is still large, raises :class:`NotConverged`.
    """
    x, y = _check_xy(design, response, "fit_logistic")
    if ((y != 0.0) & (y != 1.0)).any():
        raise SchemaError("fit_logistic: response must be 0/1")
    n, k = x.shape
    if n < k:
        raise RankDeficient(f"fewer rows ({n}) than columns ({k})")
    coef = np.zeros(k)
    eta = x @ coef
    ll = _log_likelihood(eta, y)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        p = expit(eta)
        score = x.T @ (y - p)
        if np.max(np.abs(score)) < tol:
            return GlmFit(link="logit", coef=coef, converged=True, iterations=iterations)
        w = np.maximum(p * (1.0 - p), 1e-12)
        root = np.sqrt(w)
        # Newton direction solves (X'WX) d = score as a least-squares problem.
        d, *_ = np.linalg.lstsq(x * root[:, None], (y - p) / root, rcond=None)
        step = 1.0
        # Near the optimum the likelihood gain falls below rounding noise while
        # the score still contracts, so accept steps that tie up to rounding.
        slack = 1e-10 * (1.0 + abs(ll))
        for _ in range(MAX_HALVINGS):
            trial = coef + step * d
            trial_eta = x @ trial
            trial_ll = _log_likelihood(trial_eta, y)
            if trial_ll > ll - slack:
                break
            step *= 0.5
        else:
            raise NotConverged(
                f"step-halving stalled at iteration {iterations} with max-abs score "
                f"{np.max(np.abs(score)):.3e}"
            )
        coef, eta, ll = trial, trial_eta, trial_ll
        if np.max(np.abs(coef)) > coef_cap:
            raise Separation(
                f"coefficients exceeded {coef_cap} at iteration {iterations}; "
                "likely quasi-separation"
            )
    p = expit(eta)
    score = x.T @ (y - p)
    if np.max(np.abs(score)) < tol:
        return GlmFit(link="logit", coef=coef, converged=True, iterations=iterations)
    raise NotConverged(f"no convergence after {max_iter} iterations")


def predict(fit: GlmFit, design) -> np.ndarray:
    """Mean-scale predictions for a fitted GLM on a new design."""
    x = np.asarray(design, dtype=float)
    if x.ndim != 2:
        raise SchemaError("predict: design must be 2-dimensional")
    if x.shape[1] != fit.coef.shape[0]:
        raise DimensionMismatch(
            f"design has {x.shape[1]} columns, fit expects {fit.coef.shape[0]}"
        )
    eta = x @ fit.coef
    if fit.link == "identity":
        return eta
    if fit.link == "logit":
        return expit(eta)
    raise SchemaError(f"unknown link {fit.link!r}")
