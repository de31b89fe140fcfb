"""Point estimators for the controlled response function E[Y(a, m)].

Five plug-in routes, four doubly robust combinations, two triply robust
combinations, and one quadruply robust combination, all sharing the
nuisance values fitted at the target cell:

- plug-ins: ``g_comp``, ``pure_imputation``, ``imp_then_weight``,
  ``pure_weighting``, ``weight_then_imp``
- doubly robust: ``dr1`` .. ``dr4``
- multiply robust: ``tr1``, ``tr2``, ``qr``

Several forms require a specific second-stage pseudo-outcome variant;
:func:`required_variant` exposes the mapping, and the low-level entry
points raise :class:`~mrcde.errors.VariantMismatch` when fed the wrong
one.  The multiply robust forms also return per-unit estimated influence
function values, which downstream inference consumes.
"""

from __future__ import annotations

import numpy as np

from . import glm
from .data import (
    NU_DR,
    NU_IMPUTATION,
    NU_WEIGHTING,
    Dataset,
    EstimateResult,
    NuisanceValues,
    Target,
    require_valid,
)
from .errors import SchemaError, VariantMismatch
from .glm import TermSpec, build_design
from .nuisance import NuisanceSpec, cross_fit, fit_nuisances

PLUGIN_ESTIMATORS = ("g_comp", "pure_imputation", "imp_then_weight", "pure_weighting", "weight_then_imp")
DR_ESTIMATORS = ("dr1", "dr2", "dr3", "dr4")
MR_ESTIMATORS = ("tr1", "tr2", "qr")
ALL_ESTIMATORS = PLUGIN_ESTIMATORS + DR_ESTIMATORS + MR_ESTIMATORS

# Estimators that pin the pseudo-outcome variant of the second stage.
_VARIANT_FOR = {
    "pure_imputation": NU_IMPUTATION,
    "weight_then_imp": NU_WEIGHTING,
    "dr1": NU_IMPUTATION,
    "dr2": NU_WEIGHTING,
    "dr4": NU_DR,
    "tr1": NU_IMPUTATION,
    "tr2": NU_WEIGHTING,
    "qr": NU_DR,
}


def required_variant(estimator: str) -> str | None:
    """The nu_variant an estimator needs, or None when any will do."""
    if estimator not in ALL_ESTIMATORS:
        raise SchemaError(f"unknown estimator {estimator!r}; known: {list(ALL_ESTIMATORS)}")
    return _VARIANT_FOR.get(estimator)


def _check_variant(estimator: str, nuis: NuisanceValues):
    needed = required_variant(estimator)
    if needed is not None and nuis.nu_variant != needed:
        raise VariantMismatch(
            f"{estimator} needs nu_variant {needed!r}, got {nuis.nu_variant!r}"
        )
    if nuis.n == 0:
        raise SchemaError("empty nuisance vectors")


def _indicators(dataset: Dataset, target: Target):
    ind_a = (dataset.a == target.a).astype(float)
    ind_m = (dataset.m == target.m).astype(float)
    return ind_a, ind_m


def estimate_plugin(
    estimator: str, dataset: Dataset, target: Target, nuis: NuisanceValues
) -> EstimateResult:
    """One of the four closed-form plug-in routes (no influence function)."""
    if estimator not in PLUGIN_ESTIMATORS or estimator == "g_comp":
        raise SchemaError(f"{estimator!r} is not a closed-form plug-in estimator")
    _check_variant(estimator, nuis)
    ind_a, ind_m = _indicators(dataset, target)
    if estimator == "pure_imputation" or estimator == "weight_then_imp":
        psi = float(np.mean(nuis.nu))
    elif estimator == "imp_then_weight":
        psi = float(np.mean(ind_a * nuis.mu / nuis.pi_a))
    else:  # pure_weighting
        psi = float(np.mean(ind_a * ind_m * dataset.y / (nuis.pi_a * nuis.pi_m)))
    return EstimateResult(psi=psi, estimator=estimator, target=target, n=dataset.n)


def estimate_dr(
    estimator: str, dataset: Dataset, target: Target, nuis: NuisanceValues
) -> EstimateResult:
    """Doubly robust forms: each is consistent under two nuisance patterns."""
    if estimator not in DR_ESTIMATORS:
        raise SchemaError(f"{estimator!r} is not a doubly robust estimator")
    _check_variant(estimator, nuis)
    ind_a, ind_m = _indicators(dataset, target)
    y = dataset.y
    if estimator == "dr1":
        summand = nuis.nu + ind_a * (nuis.mu - nuis.nu) / nuis.pi_a
    elif estimator == "dr2":
        summand = nuis.nu + ind_a * (ind_m * y / nuis.pi_m - nuis.nu) / nuis.pi_a
    elif estimator == "dr3":
        summand = ind_a * (nuis.mu + ind_m * (y - nuis.mu) / nuis.pi_m) / nuis.pi_a
    else:  # dr4
        summand = nuis.nu
    return EstimateResult(
        psi=float(np.mean(summand)), estimator=estimator, target=target, n=dataset.n
    )


def _mr_summand(dataset: Dataset, target: Target, nuis: NuisanceValues) -> np.ndarray:
    ind_a, ind_m = _indicators(dataset, target)
    return (
        nuis.nu
        + ind_a * (nuis.mu - nuis.nu) / nuis.pi_a
        + ind_a * ind_m * (dataset.y - nuis.mu) / (nuis.pi_a * nuis.pi_m)
    )


def estimate_mr(
    estimator: str, dataset: Dataset, target: Target, nuis: NuisanceValues
) -> EstimateResult:
    """Multiply robust forms sharing one summand; variants differ only in nu.

    The result carries per-unit estimated influence function values
    (summand minus its mean) and the corresponding standard error.
    """
    if estimator not in MR_ESTIMATORS:
        raise SchemaError(f"{estimator!r} is not a multiply robust estimator")
    _check_variant(estimator, nuis)
    summand = _mr_summand(dataset, target, nuis)
    psi = float(np.mean(summand))
    eif_values = summand - psi
    se = float(np.std(eif_values, ddof=1) / np.sqrt(dataset.n)) if dataset.n > 1 else None
    return EstimateResult(
        psi=psi, estimator=estimator, target=target, n=dataset.n, eif=eif_values, se=se
    )


def eif(dataset: Dataset, target: Target, nuis: NuisanceValues, psi: float) -> np.ndarray:
    """Estimated influence function values at a given point estimate."""
    return _mr_summand(dataset, target, nuis) - psi


def estimate_gcomp(
    dataset: Dataset,
    target: Target,
    y_spec: TermSpec,
    z_spec: TermSpec,
    draws: int = 200,
    seed: int = 0,
) -> EstimateResult:
    """Monte Carlo g-computation.

    Fits a linear outcome model (``y_spec`` over x, a, z, m) and a
    linear-Gaussian model for each z column (``z_spec`` over x, a, with
    constant variance from the mean squared residual), then averages the
    outcome prediction at (A=a, M=m) over fresh z draws at A=a.  With more
    than one z column the draws are independent across columns.
    """
    require_valid(dataset, target)
    if draws < 1:
        raise SchemaError("draws must be positive")
    y_fit = glm.fit_ols(build_design(y_spec, dataset), dataset.y)
    if dataset.p_z == 0:
        pred = glm.predict(
            y_fit, build_design(y_spec, dataset, {"a": target.a, "m": target.m})
        )
        return EstimateResult(
            psi=float(np.mean(pred)), estimator="g_comp", target=target, n=dataset.n
        )

    z_obs = build_design(z_spec, dataset)
    z_over = build_design(z_spec, dataset, {"a": target.a})
    z_names = ["z"] if dataset.p_z == 1 else [f"z{j + 1}" for j in range(dataset.p_z)]
    means, sds = {}, {}
    for j, name in enumerate(z_names):
        fit_j = glm.fit_ols(z_obs, dataset.z[:, j])
        resid = dataset.z[:, j] - glm.predict(fit_j, z_obs)
        means[name] = glm.predict(fit_j, z_over)
        sds[name] = float(np.sqrt(np.mean(resid**2)))

    rng = np.random.default_rng(seed)
    total = np.zeros(dataset.n)
    for _ in range(draws):
        overrides: dict = {"a": target.a, "m": target.m}
        for name in z_names:
            overrides[name] = means[name] + sds[name] * rng.standard_normal(dataset.n)
        total += glm.predict(y_fit, build_design(y_spec, dataset, overrides))
    psi = float(np.mean(total / draws))
    return EstimateResult(psi=psi, estimator="g_comp", target=target, n=dataset.n)


def estimate(
    estimator: str,
    dataset: Dataset,
    target: Target,
    spec: NuisanceSpec,
    *,
    folds: int | None = None,
    seed: int = 0,
    learner: str = "glm",
    z_spec: TermSpec | None = None,
    draws: int = 200,
    nuisances: NuisanceValues | None = None,
) -> EstimateResult:
    """Fit the right nuisances for an estimator and evaluate it.

    The pseudo-outcome variant is switched automatically for estimators
    that pin one.  ``folds`` turns on cross-fitting; ``nuisances`` skips
    refitting when the caller already holds compatible values.
    """
    if estimator == "g_comp":
        if z_spec is None:
            raise SchemaError("g_comp needs a z_spec (terms over x and a)")
        return estimate_gcomp(dataset, target, spec.mu_spec, z_spec, draws=draws, seed=seed)
    needed = required_variant(estimator)
    if nuisances is None:
        use = spec if needed is None else spec.with_variant(needed)
        if folds is None:
            nuisances = fit_nuisances(dataset, target, use, learner=learner)
        else:
            nuisances = cross_fit(dataset, target, use, folds=folds, seed=seed, learner=learner)
    if estimator in MR_ESTIMATORS:
        return estimate_mr(estimator, dataset, target, nuisances)
    if estimator in DR_ESTIMATORS:
        return estimate_dr(estimator, dataset, target, nuisances)
    return estimate_plugin(estimator, dataset, target, nuisances)
