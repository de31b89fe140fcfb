"""Uncertainty for single cells and contrasts of cells.

Contrasts of the controlled response function come in three kinds:

- ``CDE``: psi(a, m) - psi(a', m), the controlled direct effect
- ``CME``: psi(a, m) - psi(a, m'), the controlled mediator effect
- ``interaction``: [psi(a, m) - psi(a, m')] - [psi(a', m) - psi(a', m')]

For multiply robust estimators the variance comes from the per-unit
influence function values: the contrast's variance is the mean squared
contrast of EIF values divided by n, which accounts for the dependence
between the cell estimates on a shared sample.  The nonparametric
bootstrap route refits everything per resample and works for any
estimator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .data import Dataset, EstimateResult, Target, validate
from .errors import BootstrapFailure, LengthMismatch, MissingEif, MrcdeError, SchemaError
from .estimators import estimate
from .glm import TermSpec
from .nuisance import NuisanceSpec

CONTRAST_KINDS = ("CDE", "CME", "interaction")
# Fraction of skippable bootstrap replicates before the run counts as failed.
MAX_SKIP_FRACTION = 0.10


@dataclass(frozen=True)
class ContrastResult:
    """A contrast estimate with its uncertainty and provenance."""

    kind: str
    estimate: float
    se: float | None
    ci_low: float | None
    ci_high: float | None
    method: str
    level: float
    estimator: str
    n: int

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "estimate": float(self.estimate),
            "se": None if self.se is None else float(self.se),
            "ci_low": None if self.ci_low is None else float(self.ci_low),
            "ci_high": None if self.ci_high is None else float(self.ci_high),
            "method": self.method,
            "level": self.level,
            "estimator": self.estimator,
            "n": int(self.n),
        }


def _z_quantile(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise SchemaError("confidence level must lie in (0, 1)")
    return float(norm.ppf(0.5 * (1.0 + level)))


def wald_interval(result: EstimateResult, level: float = 0.95) -> EstimateResult:
    """Attach a symmetric normal-quantile interval to a result with an SE."""
    if result.se is None:
        raise MissingEif(f"{result.estimator} carries no standard error")
    half = _z_quantile(level) * result.se
    return replace(result, ci_low=result.psi - half, ci_high=result.psi + half)


def _eif_matrix(results: Sequence[EstimateResult]) -> np.ndarray:
    rows = []
    n = None
    for res in results:
        if res.eif is None:
            raise MissingEif(
                f"{res.estimator} at target {res.target.to_dict()} has no influence "
                "function values; use a multiply robust estimator or the bootstrap"
            )
        if n is None:
            n = res.eif.shape[0]
        elif res.eif.shape[0] != n:
            raise LengthMismatch("results come from samples of different sizes")
        rows.append(res.eif)
    return np.vstack(rows)


def contrast(kind: str, results: Sequence[EstimateResult], level: float = 0.95) -> ContrastResult:
    """Influence-function contrast of cell estimates fitted on one sample.

    ``results`` order: CDE takes [(a, m), (a', m)]; CME takes
    [(a, m), (a, m')]; interaction takes [(a, m), (a, m'), (a', m),
    (a', m')].  Signs follow the definitions in the module docstring.
    """
    if kind not in CONTRAST_KINDS:
        raise SchemaError(f"unknown contrast kind {kind!r}; known: {list(CONTRAST_KINDS)}")
    weights = {"CDE": (1.0, -1.0), "CME": (1.0, -1.0), "interaction": (1.0, -1.0, -1.0, 1.0)}[kind]
    if len(results) != len(weights):
        raise SchemaError(f"{kind} contrast needs {len(weights)} results, got {len(results)}")
    coef = np.asarray(weights)
    phi = _eif_matrix(results)
    estimate_value = float(np.dot(coef, [r.psi for r in results]))
    diff = coef @ phi
    n = phi.shape[1]
    se = float(np.sqrt(np.mean(diff**2) / n))
    half = _z_quantile(level) * se
    return ContrastResult(
        kind=kind,
        estimate=estimate_value,
        se=se,
        ci_low=estimate_value - half,
        ci_high=estimate_value + half,
        method="eif",
        level=level,
        estimator=results[0].estimator,
        n=n,
    )


def cde_eif(
    result_am: EstimateResult, result_apm: EstimateResult, level: float = 0.95
) -> ContrastResult:
    """Controlled direct effect psi(a, m) - psi(a', m) via shared EIF values."""
    return contrast("CDE", [result_am, result_apm], level=level)


def _contrast_targets(kind: str, target: Target) -> list[Target]:
    """Cells a contrast needs, in the order :func:`contrast` expects."""
    a, m, ap, mp = target.a, target.m, target.a_prime, target.m_prime
    if kind == "CDE":
        if ap is None:
            raise SchemaError("CDE needs target.a_prime")
        return [Target(a=a, m=m), Target(a=ap, m=m)]
    if kind == "CME":
        if mp is None:
            raise SchemaError("CME needs target.m_prime")
        return [Target(a=a, m=m), Target(a=a, m=mp)]
    if ap is None or mp is None:
        raise SchemaError("interaction needs both a_prime and m_prime")
    return [Target(a=a, m=m), Target(a=a, m=mp), Target(a=ap, m=m), Target(a=ap, m=mp)]


def bootstrap(
    dataset: Dataset,
    target: Target,
    estimator: str,
    spec: NuisanceSpec,
    b: int = 500,
    seed: int = 0,
    level: float = 0.95,
    kind: str | None = None,
    *,
    folds: int | None = None,
    learner: str = "glm",
    z_spec: TermSpec | None = None,
    draws: int = 200,
) -> EstimateResult | ContrastResult:
    """Nonparametric bootstrap with full nuisance refitting per resample.

    Resamples rows with replacement ``b`` times using independent streams
    derived from (seed, replicate), so results do not depend on execution
    order.  Replicates whose resample empties a needed stratum are
    skipped; more than ``MAX_SKIP_FRACTION`` of skips (or estimation
    failures) raises :class:`~mrcde.errors.BootstrapFailure`.

    With ``kind`` set, bootstraps the contrast built from ``target``'s
    cells; otherwise bootstraps the single-cell estimate.  Returns the
    full-sample point estimate with the bootstrap standard error and
    percentile interval.
    """
    if b < 2:
        raise SchemaError("bootstrap needs b >= 2 replicates")
    if not 0.0 < level < 1.0:
        raise SchemaError("confidence level must lie in (0, 1)")
    if folds is not None and learner != "glm":
        warnings.warn(
            "cross-fitting inside the bootstrap with a data-adaptive learner is "
            "outside the supported scope; interpret intervals with care",
            stacklevel=2,
        )

    if kind is None:
        cells = [Target(a=target.a, m=target.m)]
        coef = np.array([1.0])
    else:
        cells = _contrast_targets(kind, target)
        coef = {"CDE": [1.0, -1.0], "CME": [1.0, -1.0], "interaction": [1.0, -1.0, -1.0, 1.0]}[kind]
        coef = np.asarray(coef)

    def point(ds: Dataset) -> float:
        values = [
            estimate(
                estimator, ds, cell, spec,
                folds=folds, seed=seed, learner=learner, z_spec=z_spec, draws=draws,
            ).psi
            for cell in cells
        ]
        return float(np.dot(coef, values))

    full = point(dataset)
    draws_out = np.empty(b)
    kept = 0
    skipped = 0
    for rep in range(b):
        rng = np.random.default_rng([seed, rep])
        idx = rng.integers(0, dataset.n, size=dataset.n)
        resample = dataset.take(idx)
        if any(not validate(resample, cell).ok for cell in cells):
            skipped += 1
            continue
        try:
            draws_out[kept] = point(resample)
        except MrcdeError:
            skipped += 1
            continue
        kept += 1
    if skipped > MAX_SKIP_FRACTION * b:
        raise BootstrapFailure(
            f"{skipped}/{b} bootstrap replicates failed or emptied a stratum"
        )
    values = draws_out[:kept]
    se = float(np.std(values, ddof=1))
    lo, hi = np.percentile(values, [50.0 * (1.0 - level), 50.0 * (1.0 + level)])
    if kind is None:
        return EstimateResult(
            psi=full,
            estimator=estimator,
            target=cells[0],
            n=dataset.n,
            se=se,
            ci_low=float(lo),
            ci_high=float(hi),
        )
    return ContrastResult(
        kind=kind,
        estimate=full,
        se=se,
        ci_low=float(lo),
        ci_high=float(hi),
        method="bootstrap",
        level=level,
        estimator=estimator,
        n=dataset.n,
    )
