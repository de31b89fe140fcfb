"""Nuisance estimation for a fixed target cell (a, m).

Four nuisances feed the estimators:

- ``mu``: outcome regression E[Y | X, A, Z, M] evaluated at (A=a, M=m)
- ``pi_a``: treatment propensity Pr[A=a | X]
- ``pi_m``: mediator probability Pr[M=m | X, A, Z], stored at A=a
- ``nu``: second-stage regression of a pseudo-outcome on baseline terms,
  evaluated at A=a; three pseudo-outcome variants are supported
  (``imputation``, ``weighting``, ``dr``)

Pseudo-outcomes that involve ``pi_m`` evaluate it at the unit's observed
treatment; the stored ``pi_m`` vector uses the A=a override, and every
downstream use multiplies it by the A=a indicator, where the two agree.

Fitted probabilities are truncated into [delta, 1 - delta]; when more
than :data:`TRUNCATION_WARN_FRACTION` of them get clipped a
:class:`~mrcde.errors.TruncationDominates` warning is emitted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Protocol

import numpy as np

from . import glm
from .data import (
    NU_DR,
    NU_IMPUTATION,
    NU_VARIANTS,
    NU_WEIGHTING,
    Dataset,
    NuisanceValues,
    Target,
    require_valid,
)
from .errors import FoldTooSmall, SchemaError, TruncationDominates, VariantMismatch
from .glm import TermSpec, build_design

TRUNCATION_WARN_FRACTION = 0.05
DEFAULT_TRUNCATION = 1e-3

Predictor = Callable[[np.ndarray], np.ndarray]


class Learner(Protocol):
    """Pluggable regression engine operating on built design matrices.

    Implementations must be deterministic given identical inputs.
    """

    def fit(self, features: np.ndarray, response: np.ndarray, weights=None) -> Predictor:
        ...


class _GlmRegression:
    def fit(self, features, response, weights=None) -> Predictor:
        fitted = glm.fit_ols(features, response, weights=weights)
        return lambda f: glm.predict(fitted, f)


class _GlmBinary:
    def fit(self, features, response, weights=None) -> Predictor:
        if weights is not None:
            raise SchemaError("glm binary learner does not take weights")
        fitted = glm.fit_logistic(features, response)
        return lambda f: glm.predict(fitted, f)


_LEARNERS: dict[str, tuple[Callable[[], Learner], Callable[[], Learner]]] = {
    "glm": (_GlmRegression, _GlmBinary),
}


def register_learner(key: str, regression: Callable[[], Learner], binary: Callable[[], Learner]):
    """Register factories for a named learner (regression and binary links)."""
    _LEARNERS[key] = (regression, binary)


def get_learners(key: str) -> tuple[Learner, Learner]:
    if key not in _LEARNERS:
        raise SchemaError(f"unknown learner {key!r}; registered: {sorted(_LEARNERS)}")
    regression, binary = _LEARNERS[key]
    return regression(), binary()


@dataclass(frozen=True)
class NuisanceSpec:
    """Model terms, pseudo-outcome variant, and fitting options."""

    mu_spec: TermSpec
    nu_spec: TermSpec
    pi_a_spec: TermSpec
    pi_m_spec: TermSpec
    nu_variant: str = NU_IMPUTATION
    truncation: float = DEFAULT_TRUNCATION
    br_augment: bool = False

    def __post_init__(self):
        if self.nu_variant not in NU_VARIANTS:
            raise SchemaError(f"nu_variant must be one of {NU_VARIANTS}")
        if not 0.0 < self.truncation < 0.5:
            raise SchemaError("truncation must lie in (0, 0.5)")

    def with_variant(self, variant: str) -> "NuisanceSpec":
        return self if variant == self.nu_variant else replace(self, nu_variant=variant)

    def to_json(self) -> dict:
        return {
            "mu": self.mu_spec.to_json(),
            "nu": self.nu_spec.to_json(),
            "pi_a": self.pi_a_spec.to_json(),
            "pi_m": self.pi_m_spec.to_json(),
            "nu_variant": self.nu_variant,
            "truncation": self.truncation,
            "br_augment": self.br_augment,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NuisanceSpec":
        try:
            return cls(
                mu_spec=TermSpec.from_json(obj["mu"]),
                nu_spec=TermSpec.from_json(obj["nu"]),
                pi_a_spec=TermSpec.from_json(obj["pi_a"]),
                pi_m_spec=TermSpec.from_json(obj["pi_m"]),
                nu_variant=obj.get("nu_variant", NU_IMPUTATION),
                truncation=obj.get("truncation", DEFAULT_TRUNCATION),
                br_augment=obj.get("br_augment", False),
            )
        except KeyError as exc:
            raise SchemaError(f"nuisance spec JSON missing key {exc}") from exc


def _pseudo_outcome(variant, y, ind_m, mu, pi_m_obs):
    """Second-stage response built from first-stage fits (observed-A pi_m)."""
    if variant == NU_IMPUTATION:
        return mu
    if variant == NU_WEIGHTING:
        return ind_m * y / pi_m_obs
    return mu + ind_m * (y - mu) / pi_m_obs


class _ClipCounter:
    """Truncate probabilities and remember how often the bounds bind."""

    def __init__(self, delta: float):
        self.delta = delta
        self.clipped = 0
        self.total = 0

    def __call__(self, p: np.ndarray) -> np.ndarray:
        self.clipped += int(np.sum((p < self.delta) | (p > 1.0 - self.delta)))
        self.total += p.size
        return np.clip(p, self.delta, 1.0 - self.delta)

    def warn_if_dominant(self):
        if self.total and self.clipped / self.total > TRUNCATION_WARN_FRACTION:
            warnings.warn(
                f"truncation bound {self.delta} binds for {self.clipped}/{self.total} "
                "fitted probabilities; weighting-based estimates are dominated by the bound",
                TruncationDominates,
                stacklevel=3,
            )


class _FittedNuisances:
    """All first-stage fits plus the nested second stage, for one training set."""

    def __init__(self, train: Dataset, target: Target, spec: NuisanceSpec, learner: str, clip: _ClipCounter):
        regression, binary = get_learners(learner)
        self.target = target
        self.spec = spec
        self.mu_predict = regression.fit(build_design(spec.mu_spec, train), train.y)
        self.pi_a_predict = binary.fit(
            build_design(spec.pi_a_spec, train),
            (train.a == target.a).astype(float),
        )
        self.pi_m_predict = binary.fit(
            build_design(spec.pi_m_spec, train),
            (train.m == target.m).astype(float),
        )
        # Nested second stage: pseudo-outcomes from this training set's own
        # first-stage fits, regressed on nu_spec over all training rows.
        mu_tr = self.mu_predict(
            build_design(spec.mu_spec, train, {"a": target.a, "m": target.m})
        )
        pi_m_obs = clip(self.pi_m_predict(build_design(spec.pi_m_spec, train)))
        pseudo = _pseudo_outcome(
            spec.nu_variant,
            train.y,
            (train.m == target.m).astype(float),
            mu_tr,
            pi_m_obs,
        )
        self.nu_predict = regression.fit(build_design(spec.nu_spec, train), pseudo)

    def evaluate(self, ds: Dataset, clip: _ClipCounter):
        """Counterfactual nuisance evaluations on arbitrary rows."""
        target, spec = self.target, self.spec
        mu = self.mu_predict(build_design(spec.mu_spec, ds, {"a": target.a, "m": target.m}))
        nu = self.nu_predict(build_design(spec.nu_spec, ds, {"a": target.a}))
        pi_a = clip(self.pi_a_predict(build_design(spec.pi_a_spec, ds)))
        pi_m = clip(self.pi_m_predict(build_design(spec.pi_m_spec, ds, {"a": target.a})))
        return mu, nu, pi_a, pi_m


def fit_nuisances(
    dataset: Dataset,
    target: Target,
    spec: NuisanceSpec,
    learner: str = "glm",
) -> NuisanceValues:
    """Fit all four nuisances on the full sample and evaluate them per unit."""
    require_valid(dataset, target)
    clip = _ClipCounter(spec.truncation)
    fitted = _FittedNuisances(dataset, target, spec, learner, clip)
    mu, nu, pi_a, pi_m = fitted.evaluate(dataset, clip)
    clip.warn_if_dominant()
    values = NuisanceValues(mu=mu, nu=nu, pi_a=pi_a, pi_m=pi_m, nu_variant=spec.nu_variant)
    if spec.br_augment:
        values = br_augment(dataset, target, spec, values)
    return values


def cross_fit(
    dataset: Dataset,
    target: Target,
    spec: NuisanceSpec,
    folds: int,
    seed: int,
    learner: str = "glm",
) -> NuisanceValues:
    """Out-of-fold nuisance evaluations with a seeded fold assignment.

    Rows are partitioned into ``folds`` near-equal folds by a seeded
    permutation.  Every nuisance, including the nested second stage, is fit
    on the complement of a fold and evaluated on the fold.  The result is
    deterministic in (dataset, target, spec, folds, seed).
    """
    require_valid(dataset, target)
    if spec.br_augment:
        raise SchemaError("br_augment requires full-sample fits; disable it for cross_fit")
    if folds < 2:
        raise SchemaError("cross-fitting needs folds >= 2")
    if folds > dataset.n:
        raise FoldTooSmall(f"cannot split {dataset.n} rows into {folds} folds")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    assignments = np.array_split(perm, folds)
    clip = _ClipCounter(spec.truncation)
    mu = np.empty(dataset.n)
    nu = np.empty(dataset.n)
    pi_a = np.empty(dataset.n)
    pi_m = np.empty(dataset.n)
    for k, held_out in enumerate(assignments):
        train_idx = np.concatenate([assignments[j] for j in range(folds) if j != k])
        train = dataset.take(train_idx)
        if not np.any(train.a == target.a) or not np.any(
            (train.a == target.a) & (train.m == target.m)
        ):
            raise FoldTooSmall(
                f"training fold {k} lacks the target stratum (A={target.a}, M={target.m})"
            )
        fitted = _FittedNuisances(train, target, spec, learner, clip)
        mu_k, nu_k, pi_a_k, pi_m_k = fitted.evaluate(dataset.take(held_out), clip)
        mu[held_out] = mu_k
        nu[held_out] = nu_k
        pi_a[held_out] = pi_a_k
        pi_m[held_out] = pi_m_k
    clip.warn_if_dominant()
    return NuisanceValues(mu=mu, nu=nu, pi_a=pi_a, pi_m=pi_m, nu_variant=spec.nu_variant)


def br_augment(
    dataset: Dataset,
    target: Target,
    spec: NuisanceSpec,
    base: NuisanceValues,
) -> NuisanceValues:
    """Refit mu and nu with inverse-weight covariates (Bang and Robins style).

    The outcome model gains the covariate 1(A=a)1(M=m) / (pi_a * pi_m) and
    the second stage gains 1(A=a) / pi_a, both built from the already
    truncated ``base`` probabilities.  With identity links, the score
    equations of the refits force the two augmentation terms of the
    triply robust summand to average to exactly zero, so that estimator
    collapses to the sample mean of the refit nu.

    Full-sample GLM fits only; the propensities are reused from ``base``.
    """
    if base.nu_variant != spec.nu_variant:
        raise VariantMismatch("base nuisances were built under a different nu_variant")
    ind_a = (dataset.a == target.a).astype(float)
    ind_m = (dataset.m == target.m).astype(float)
    w_am = 1.0 / (base.pi_a * base.pi_m)
    w_a = 1.0 / base.pi_a

    mu_obs = build_design(spec.mu_spec, dataset)
    mu_over = build_design(spec.mu_spec, dataset, {"a": target.a, "m": target.m})
    fit_mu = glm.fit_ols(np.column_stack([mu_obs, ind_a * ind_m * w_am]), dataset.y)
    mu_aug = glm.predict(fit_mu, np.column_stack([mu_over, w_am]))

    if spec.nu_variant == NU_IMPUTATION:
        pi_m_obs = base.pi_m  # unused by this variant's pseudo-outcome
    else:
        # Observed-treatment mediator probabilities; refit reproduces the
        # same full-sample logistic that produced base.pi_m.
        clip = _ClipCounter(spec.truncation)
        _, binary = get_learners("glm")
        pi_m_predict = binary.fit(
            build_design(spec.pi_m_spec, dataset), (dataset.m == target.m).astype(float)
        )
        pi_m_obs = clip(pi_m_predict(build_design(spec.pi_m_spec, dataset)))
    pseudo = _pseudo_outcome(spec.nu_variant, dataset.y, ind_m, mu_aug, pi_m_obs)
    nu_obs = build_design(spec.nu_spec, dataset)
    nu_over = build_design(spec.nu_spec, dataset, {"a": target.a})
    fit_nu = glm.fit_ols(np.column_stack([nu_obs, ind_a * w_a]), pseudo)
    nu_aug = glm.predict(fit_nu, np.column_stack([nu_over, w_a]))

    return NuisanceValues(
        mu=mu_aug, nu=nu_aug, pi_a=base.pi_a, pi_m=base.pi_m, nu_variant=base.nu_variant
    )
