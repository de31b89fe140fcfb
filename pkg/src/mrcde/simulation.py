"""Synthetic benchmark: data generator, truth oracles, robustness grid.

The continuous generator draws, per unit, four latent standard normals
``u = (u_a, u_z, u_m, u_y)`` and then

- ``X  ~ Normal(u . beta_x, 1)``
- ``A  ~ Bernoulli(logistic((1, u_a, |X|) . beta_a))``
- ``Z  ~ Normal((1, u_z, X, X^2, A) . beta_z, 1)``
- ``M  ~ Bernoulli(logistic((1, u_m, X, X^2, A, Z, X*A, X*Z) . beta_m))``
- ``Y  ~ Normal((1, u_y, X, X^2, A, Z, X*Z, M, A*M) . beta_y, 1)``

Only (X, A, Z, M, Y) are released.  Under the default coefficients the
latent loadings into A, Z, and M are zero, so the four working GLM specs
in ``CORRECT_*`` are exactly correct, while the ``MIS_*`` specs drop the
nonlinearities and interactions.  Scenario labels P1..P4 select which
nuisances get the correct spec:

- P1: mu and pi_a correct
- P2: mu and nu correct
- P3: pi_m and pi_a correct
- P4: pi_m and nu correct

plus ``all_correct`` for efficiency and coverage studies.

:class:`DiscretePopulation` is a fully enumerable binary world (16
cells) used as an exact oracle: the g-formula value, every estimator's
population expectation under exact nuisances, and the influence function
mean all come from direct summation.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import norm

from .data import Dataset, NuisanceValues, Target
from .errors import MrcdeError, SchemaError, ZeroCell
from .estimators import estimate, required_variant
from .glm import TermSpec
from .nuisance import NuisanceSpec, fit_nuisances

# ---------------------------------------------------------------------------
# Generator configuration

_BETA_LENGTHS = {"beta_x": 4, "beta_a": 3, "beta_z": 5, "beta_m": 8, "beta_y": 9}


@dataclass(frozen=True)
class SimConfig:
    """Coefficients of the generator; see the module docstring for layouts."""

    beta_x: tuple[float, ...]
    beta_a: tuple[float, ...]
    beta_z: tuple[float, ...]
    beta_m: tuple[float, ...]
    beta_y: tuple[float, ...]
    n: int = 2000

    def __post_init__(self):
        for name, length in _BETA_LENGTHS.items():
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != length:
                raise SchemaError(f"{name} must have length {length}, got {len(value)}")
            object.__setattr__(self, name, value)
        if self.n < 1:
            raise SchemaError("n must be positive")

    def to_json(self) -> dict:
        return {name: list(getattr(self, name)) for name in _BETA_LENGTHS} | {"n": self.n}

    @classmethod
    def from_json(cls, obj: dict) -> "SimConfig":
        try:
            return cls(**{name: tuple(obj[name]) for name in _BETA_LENGTHS}, n=int(obj.get("n", 2000)))
        except KeyError as exc:
            raise SchemaError(f"simulation config missing key {exc}") from exc


# Default coefficients.  The zero entries keep every CORRECT_* spec exactly
# correct (see module docstring); beta_y keeps beta_a + beta_am = 0 so the
# second-stage regression target stays polynomial in every scenario at m=1.
DEFAULT_CONFIG = SimConfig(
    beta_x=(0.3, 0.0, 0.3, 0.5),
    beta_a=(-0.3, 0.0, 0.8),
    beta_z=(0.2, 0.5, 0.4, 0.2, 0.6),
    beta_m=(-0.2, 0.0, 0.4, -0.25, 0.5, 0.4, -0.2, 0.15),
    beta_y=(1.0, 0.6, 0.5, 0.35, 0.6, 0.7, 0.35, 0.8, -0.6),
)


def _structural(config: SimConfig, rng: np.random.Generator, n: int, a=None, m=None):
    """Draw the structural system; override a and m to set treatment levels.

    Returns (x, a, z, m, y_mean, y).  The outcome noise is drawn only when
    neither override is active (observational sampling).
    """
    bx = np.asarray(config.beta_x)
    ba = np.asarray(config.beta_a)
    bz = np.asarray(config.beta_z)
    bm = np.asarray(config.beta_m)
    by = np.asarray(config.beta_y)
    u = rng.standard_normal((n, 4))
    x = u @ bx + rng.standard_normal(n)
    if a is None:
        p_a = expit(ba[0] + ba[1] * u[:, 0] + ba[2] * np.abs(x))
        a_col = (rng.random(n) < p_a).astype(np.int64)
    else:
        a_col = np.full(n, a, dtype=np.int64)
    z = (
        bz[0] + bz[1] * u[:, 1] + bz[2] * x + bz[3] * x**2 + bz[4] * a_col
        + rng.standard_normal(n)
    )
    if m is None:
        p_m = expit(
            bm[0] + bm[1] * u[:, 2] + bm[2] * x + bm[3] * x**2 + bm[4] * a_col
            + bm[5] * z + bm[6] * x * a_col + bm[7] * x * z
        )
        m_col = (rng.random(n) < p_m).astype(np.int64)
    else:
        m_col = np.full(n, m, dtype=np.int64)
    y_mean = (
        by[0] + by[1] * u[:, 3] + by[2] * x + by[3] * x**2 + by[4] * a_col
        + by[5] * z + by[6] * x * z + by[7] * m_col + by[8] * a_col * m_col
    )
    y = y_mean + rng.standard_normal(n) if a is None and m is None else y_mean
    return x, a_col, z, m_col, y_mean, y


def generate(config: SimConfig, seed) -> Dataset:
    """One observational sample of size ``config.n``; latents stay hidden."""
    rng = np.random.default_rng(seed)
    x, a, z, m, _, y = _structural(config, rng, config.n)
    return Dataset(x=x, a=a, z=z, m=m, y=y, a_support=(0, 1), m_support=(0, 1))


def true_psi(config: SimConfig, a: int, m: int, n_draws: int = 10_000_000, seed=2024):
    """Monte Carlo truth for E[Y(a, m)] with its standard error.

    Averages the conditional outcome mean under forced (A=a, M=m), so the
    outcome noise never enters; z noise does, as the effect flows through
    it.  Draws are chunked to bound memory.
    """
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_draws:
        chunk = min(1_000_000, n_draws - done)
        _, _, _, _, y_mean, _ = _structural(config, rng, chunk, a=a, m=m)
        total += float(y_mean.sum())
        total_sq += float((y_mean**2).sum())
        done += chunk
    mean = total / n_draws
    var = max(total_sq / n_draws - mean**2, 0.0)
    return mean, float(np.sqrt(var / n_draws))


# Frozen truth for DEFAULT_CONFIG, computed once from true_psi at 1e7 draws
# (value, mc_se); refreshed whenever DEFAULT_CONFIG changes.
DEFAULT_TRUTH: dict[tuple[int, int], tuple[float, float]] = {
    (0, 0): (2.040883, 0.000741),
    (0, 1): (2.840883, 0.000741),
    (1, 0): (3.060884, 0.000798),
    (1, 1): (3.260884, 0.000798),
}


def default_truth(a: int, m: int) -> tuple[float, float]:
    """Frozen Monte Carlo truth for the default generator at cell (a, m)."""
    if (a, m) not in DEFAULT_TRUTH:
        raise SchemaError(f"no frozen truth for cell ({a}, {m})")
    return DEFAULT_TRUTH[(a, m)]


# ---------------------------------------------------------------------------
# Working model specs and scenarios

CORRECT_MU = TermSpec(("1", "x", "x^2", "a", "z", "x*z", "m", "a*m"))
CORRECT_NU = TermSpec(("1", "x", "x^2", "x^3", "a", "x*a"))
CORRECT_PI_A = TermSpec(("1", "|x|"))
CORRECT_PI_M = TermSpec(("1", "x", "x^2", "a", "z", "x*a", "x*z"))
MIS_MU = TermSpec(("1", "x", "a", "z", "m"))
MIS_NU = TermSpec(("1", "x", "a"))
MIS_PI_A = TermSpec(("1", "x"))
MIS_PI_M = TermSpec(("1", "x"))
# E[Z | X, A] family for g-computation; exactly correct under the generator.
Z_MODEL = TermSpec(("1", "x", "x^2", "a"))

SCENARIOS = ("P1", "P2", "P3", "P4")
_SCENARIO_CORRECT = {
    "P1": frozenset({"mu", "pi_a"}),
    "P2": frozenset({"mu", "nu"}),
    "P3": frozenset({"pi_m", "pi_a"}),
    "P4": frozenset({"pi_m", "nu"}),
    "all_correct": frozenset({"mu", "nu", "pi_a", "pi_m"}),
}
# Stable integers for seed derivation; order never changes.
_SCENARIO_INDEX = {"all_correct": 0, "P1": 1, "P2": 2, "P3": 3, "P4": 4}

# Scenarios in which each estimator's population limit equals the truth.
CONSISTENT_IN = {
    "g_comp": frozenset({"P1", "P2", "all_correct"}),
    "pure_imputation": frozenset({"P2", "all_correct"}),
    "imp_then_weight": frozenset({"P1", "all_correct"}),
    "pure_weighting": frozenset({"P3", "all_correct"}),
    "weight_then_imp": frozenset({"P4", "all_correct"}),
    "dr1": frozenset({"P1", "P2", "all_correct"}),
    "dr2": frozenset({"P3", "P4", "all_correct"}),
    "dr3": frozenset({"P1", "P3", "all_correct"}),
    "dr4": frozenset({"P2", "P4", "all_correct"}),
    "tr1": frozenset({"P1", "P2", "P3", "all_correct"}),
    "tr2": frozenset({"P1", "P3", "P4", "all_correct"}),
    "qr": frozenset({"P1", "P2", "P3", "P4", "all_correct"}),
}


def spec_for(scenario: str) -> NuisanceSpec:
    """Nuisance spec for a robustness scenario (P1..P4 or all_correct)."""
    if scenario not in _SCENARIO_CORRECT:
        raise SchemaError(f"unknown scenario {scenario!r}; known: {sorted(_SCENARIO_CORRECT)}")
    correct = _SCENARIO_CORRECT[scenario]
    return NuisanceSpec(
        mu_spec=CORRECT_MU if "mu" in correct else MIS_MU,
        nu_spec=CORRECT_NU if "nu" in correct else MIS_NU,
        pi_a_spec=CORRECT_PI_A if "pi_a" in correct else MIS_PI_A,
        pi_m_spec=CORRECT_PI_M if "pi_m" in correct else MIS_PI_M,
    )


def propensity_tail_fraction(
    config: SimConfig, pilot_n: int = 200_000, seed: int = 7, bound: float = 0.01
) -> dict[str, float]:
    """Share of pilot units whose true propensities leave (bound, 1 - bound)."""
    rng = np.random.default_rng(seed)
    bx = np.asarray(config.beta_x)
    ba = np.asarray(config.beta_a)
    bm = np.asarray(config.beta_m)
    bz = np.asarray(config.beta_z)
    u = rng.standard_normal((pilot_n, 4))
    x = u @ bx + rng.standard_normal(pilot_n)
    p_a = expit(ba[0] + ba[1] * u[:, 0] + ba[2] * np.abs(x))
    a = (rng.random(pilot_n) < p_a).astype(float)
    z = bz[0] + bz[1] * u[:, 1] + bz[2] * x + bz[3] * x**2 + bz[4] * a + rng.standard_normal(pilot_n)
    p_m = expit(
        bm[0] + bm[1] * u[:, 2] + bm[2] * x + bm[3] * x**2 + bm[4] * a
        + bm[5] * z + bm[6] * x * a + bm[7] * x * z
    )
    out = {}
    for name, p in (("pi_a", p_a), ("pi_m", p_m)):
        out[name] = float(np.mean((p < bound) | (p > 1.0 - bound)))
    return out


# ---------------------------------------------------------------------------
# Replication grid


@dataclass
class GridResult:
    """Per-replicate estimates and their per-cell summary."""

    replicates: pd.DataFrame
    summary: pd.DataFrame
    truth: float
    target: Target
    level: float

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "replicates": out / "replicates.csv",
            "summary": out / "summary.csv",
        }
        self.replicates.to_csv(paths["replicates"], index=False)
        self.summary.to_csv(paths["summary"], index=False)
        return paths


def _grid_cell(payload) -> list[tuple]:
    """One (scenario, replicate): generate a sample, run every estimator.

    Nuisances are fitted once per pseudo-outcome variant and shared by all
    estimators needing that variant.
    """
    config, scenario, rep, seed, estimators, target, level, truth = payload
    cell_seed = [seed, _SCENARIO_INDEX[scenario], rep]
    dataset = generate(config, cell_seed)
    spec = spec_for(scenario)
    z_crit = float(norm.ppf(0.5 * (1.0 + level)))
    fitted: dict[str, NuisanceValues | MrcdeError] = {}

    def nuisances_for(est: str):
        variant = required_variant(est) or spec.nu_variant
        if variant not in fitted:
            try:
                fitted[variant] = fit_nuisances(dataset, target, spec.with_variant(variant))
            except MrcdeError as exc:
                fitted[variant] = exc
        value = fitted[variant]
        if isinstance(value, MrcdeError):
            raise value
        return value

    rows = []
    for est in estimators:
        try:
            result = estimate(
                est, dataset, target, spec,
                z_spec=Z_MODEL, seed=cell_seed + [101], draws=200,
                nuisances=None if est == "g_comp" else nuisances_for(est),
            )
        except MrcdeError as exc:
            rows.append((scenario, est, rep, np.nan, np.nan, np.nan, None, f"{type(exc).__name__}: {exc}"))
            continue
        bias = result.psi - truth
        covered = None
        if result.se is not None:
            covered = bool(abs(bias) <= z_crit * result.se)
        rows.append((scenario, est, rep, result.psi, bias, result.se, covered, ""))
    return rows


def run_grid(
    config: SimConfig,
    scenarios,
    estimators,
    reps: int,
    n: int,
    seed: int,
    jobs: int = 1,
    level: float = 0.95,
    target: Target = Target(a=0, m=1),
    truth: float | None = None,
    out_dir: str | Path | None = None,
) -> GridResult:
    """Replicated estimation across misspecification scenarios.

    Per replicate: draw a fresh sample from ``config`` (at size ``n``)
    under a seed derived from (seed, scenario, replicate), fit the
    scenario's nuisance specs, run every requested estimator, and record
    estimate, standard error, bias against the truth, and interval
    coverage.  ``jobs > 1`` fans replicates out to processes; the output
    is byte-identical to a serial run.
    """
    scenarios = list(scenarios)
    estimators = list(estimators)
    for scenario in scenarios:
        if scenario not in _SCENARIO_CORRECT:
            raise SchemaError(f"unknown scenario {scenario!r}")
    if reps < 1:
        raise SchemaError("reps must be positive")
    if truth is None:
        if config.to_json() == DEFAULT_CONFIG.to_json() and (target.a, target.m) in DEFAULT_TRUTH:
            truth = DEFAULT_TRUTH[(target.a, target.m)][0]
        else:
            truth, _ = true_psi(config, target.a, target.m, n_draws=2_000_000, seed=[seed, 999])
    config_n = replace(config, n=n)
    payloads = [
        (config_n, scenario, rep, seed, estimators, target, level, truth)
        for scenario in scenarios
        for rep in range(reps)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_grid_cell, payloads, chunksize=8))
    else:
        chunks = [_grid_cell(p) for p in payloads]
    rows = [row for chunk in chunks for row in chunk]
    replicates = pd.DataFrame(
        rows,
        columns=["scenario", "estimator", "replicate", "estimate", "bias", "se", "covered", "error"],
    )

    summaries = []
    for scenario in scenarios:
        for est in estimators:
            sub = replicates[(replicates.scenario == scenario) & (replicates.estimator == est)]
            ok = sub[sub.error == ""]
            n_ok = len(ok)
            ses = ok.se.dropna()
            cov = ok.covered.dropna()
            summaries.append({
                "scenario": scenario,
                "estimator": est,
                "n_ok": n_ok,
                "n_failed": len(sub) - n_ok,
                "mean_bias": float(ok.bias.mean()) if n_ok else np.nan,
                "sd": float(ok.estimate.std(ddof=1)) if n_ok > 1 else np.nan,
                "mc_se": float(ok.estimate.std(ddof=1) / np.sqrt(n_ok)) if n_ok > 1 else np.nan,
                "rmse": float(np.sqrt(np.mean(ok.bias**2))) if n_ok else np.nan,
                "mean_se": float(ses.mean()) if len(ses) else np.nan,
                "coverage": float(cov.astype(float).mean()) if len(cov) else np.nan,
            })
    summary = pd.DataFrame(summaries)
    result = GridResult(replicates=replicates, summary=summary, truth=truth, target=target, level=level)
    if out_dir is not None:
        result.write(out_dir)
    return result


# ---------------------------------------------------------------------------
# Exact discrete oracle (16-cell binary world)


@dataclass(frozen=True)
class DiscretePopulation:
    """Binary (X, A, Z, M) population with known conditionals and Y means.

    Arrays are indexed by the 0/1 values of their conditioning variables:
    ``p_x[x]``, ``p_a[x, a]``, ``p_z[x, a, z]``, ``p_m[x, a, z, m]``,
    ``y_mean[x, a, z, m]``.
    """

    p_x: np.ndarray
    p_a: np.ndarray
    p_z: np.ndarray
    p_m: np.ndarray
    y_mean: np.ndarray

    def __post_init__(self):
        shapes = {"p_x": (2,), "p_a": (2, 2), "p_z": (2, 2, 2), "p_m": (2, 2, 2, 2), "y_mean": (2, 2, 2, 2)}
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise SchemaError(f"{name} must have shape {shape}")
            object.__setattr__(self, name, arr)
        for name in ("p_x", "p_a", "p_z", "p_m"):
            arr = getattr(self, name)
            if (arr < 0).any() or (arr > 1).any():
                raise SchemaError(f"{name} entries must lie in [0, 1]")
            if not np.allclose(arr.sum(axis=-1), 1.0, atol=1e-12):
                raise SchemaError(f"{name} must sum to one along its last axis")

    @classmethod
    def from_counts(cls, counts, y_mean) -> "DiscretePopulation":
        """Population whose joint equals the empirical law of a finite table.

        ``counts[x, a, z, m]`` are non-negative integers; conditionals are
        the corresponding frequency ratios, so :meth:`to_dataset` expands
        back to a sample whose empirical distribution matches exactly.
        """
        c = np.asarray(counts, dtype=float)
        if c.shape != (2, 2, 2, 2) or (c < 0).any():
            raise SchemaError("counts must be a non-negative (2, 2, 2, 2) table")
        total = c.sum()
        if total <= 0:
            raise SchemaError("counts must not be all zero")
        c_x = c.sum(axis=(1, 2, 3))
        c_xa = c.sum(axis=(2, 3))
        c_xaz = c.sum(axis=3)
        with np.errstate(invalid="ignore", divide="ignore"):
            p_a = np.where(c_x[:, None] > 0, c_xa / c_x[:, None], 0.5)
            p_z = np.where(c_xa[:, :, None] > 0, c_xaz / c_xa[:, :, None], 0.5)
            p_m = np.where(c_xaz[:, :, :, None] > 0, c / c_xaz[:, :, :, None], 0.5)
        return cls(p_x=c_x / total, p_a=p_a, p_z=p_z, p_m=p_m, y_mean=np.asarray(y_mean, dtype=float))

    def joint(self) -> np.ndarray:
        """Cell probabilities p(x, a, z, m) as a (2, 2, 2, 2) array."""
        return (
            self.p_x[:, None, None, None]
            * self.p_a[:, :, None, None]
            * self.p_z[:, :, :, None]
            * self.p_m
        )

    def psi(self, a: int, m: int) -> float:
        """The g-formula value by direct summation."""
        self._require_positive(a, m)
        return float(np.sum(self.p_x[:, None] * self.p_z[:, a, :] * self.y_mean[:, a, :, m]))

    def _require_positive(self, a: int, m: int):
        live_x = self.p_x > 0
        if (self.p_a[live_x, a] <= 0).any():
            raise ZeroCell(f"Pr[A={a} | X] is zero on a live X cell")
        if (self.p_m[live_x, a, :, m] <= 0).any():
            raise ZeroCell(f"Pr[M={m} | X, A={a}, Z] is zero on a live cell")

    def nu(self, a: int, m: int) -> np.ndarray:
        """E over Z | X, A=a of the Y mean at (a, m); indexed by x."""
        return np.einsum("xz,xz->x", self.p_z[:, a, :], self.y_mean[:, a, :, m])

    def to_dataset(self, counts) -> Dataset:
        """Expand an integer cell table into a dataset (Y set to the cell mean)."""
        c = np.asarray(counts)
        rows = []
        for x, a, z, m in product(range(2), repeat=4):
            rows += [(x, a, z, m, self.y_mean[x, a, z, m])] * int(c[x, a, z, m])
        arr = np.asarray(rows, dtype=float)
        return Dataset(
            x=arr[:, 0], a=arr[:, 1].astype(int), z=arr[:, 2], m=arr[:, 3].astype(int), y=arr[:, 4]
        )

    def nuisance_values(self, dataset: Dataset, a: int, m: int, variant: str) -> NuisanceValues:
        """Exact nuisance tables evaluated at each dataset row."""
        self._require_positive(a, m)
        x_idx = dataset.x[:, 0].astype(int)
        z_idx = dataset.z[:, 0].astype(int)
        return NuisanceValues(
            mu=self.y_mean[x_idx, a, z_idx, m],
            nu=self.nu(a, m)[x_idx],
            pi_a=self.p_a[x_idx, a],
            pi_m=self.p_m[x_idx, a, z_idx, m],
            nu_variant=variant,
        )


@dataclass(frozen=True)
class OracleTables:
    """Exact population quantities at one (a, m) cell."""

    psi: float
    mu: np.ndarray      # indexed [x, z]
    nu: np.ndarray      # indexed [x]
    pi_a: np.ndarray    # indexed [x]
    pi_m: np.ndarray    # indexed [x, z]
    expectations: dict[str, float] = field(default_factory=dict)
    eif_mean: float = 0.0


def discrete_oracle(population: DiscretePopulation, a: int, m: int) -> OracleTables:
    """Exact summation oracle: psi, nuisance tables, estimator expectations.

    Every estimator form is linear in Y within cells, so replacing Y by
    the cell mean yields its exact population expectation.  With exact
    nuisances all of them must equal the g-formula value; the influence
    function mean must be zero.
    """
    pop = population
    pop._require_positive(a, m)
    psi = pop.psi(a, m)
    mu = pop.y_mean[:, a, :, m]
    nu = pop.nu(a, m)
    pi_a = pop.p_a[:, a]
    pi_m = pop.p_m[:, a, :, m]
    joint = pop.joint()

    forms = {k: 0.0 for k in (
        "pure_imputation", "imp_then_weight", "pure_weighting", "weight_then_imp",
        "dr1", "dr2", "dr3", "dr4", "tr1", "tr2", "qr",
    )}
    eif_mean = 0.0
    for x, a_obs, z, m_obs in product(range(2), repeat=4):
        p = joint[x, a_obs, z, m_obs]
        if p == 0.0:
            continue
        y = pop.y_mean[x, a_obs, z, m_obs]
        ind_a = 1.0 if a_obs == a else 0.0
        ind_m = 1.0 if m_obs == m else 0.0
        w_a = ind_a / pi_a[x]
        w_am = ind_a * ind_m / (pi_a[x] * pi_m[x, z])
        forms["pure_imputation"] += p * nu[x]
        forms["imp_then_weight"] += p * w_a * mu[x, z]
        forms["pure_weighting"] += p * w_am * y
        forms["dr1"] += p * (nu[x] + w_a * (mu[x, z] - nu[x]))
        forms["dr2"] += p * (nu[x] + w_a * (ind_m * y / pi_m[x, z] - nu[x]))
        forms["dr3"] += p * w_a * (mu[x, z] + ind_m * (y - mu[x, z]) / pi_m[x, z])
        forms["dr4"] += p * nu[x]
        summand = (
            nu[x] + w_a * (mu[x, z] - nu[x]) + w_am * (y - mu[x, z])
        )
        forms["tr1"] += p * summand
        forms["tr2"] += p * summand
        forms["qr"] += p * summand
        eif_mean += p * (summand - psi)
    # Weighting-then-imputation: inner conditional expectation of the
    # weighted pseudo-outcome at A=a, then the outer mean over X.
    inner = np.zeros(2)
    for x, z, m_obs in product(range(2), repeat=3):
        if m_obs != m:
            continue
        inner[x] += (
            pop.p_z[x, a, z] * pop.p_m[x, a, z, m_obs]
            * pop.y_mean[x, a, z, m_obs] / pi_m[x, z]
        )
    forms["weight_then_imp"] = float(np.dot(pop.p_x, inner))
    return OracleTables(
        psi=psi, mu=mu, nu=nu, pi_a=pi_a, pi_m=pi_m, expectations=forms, eif_mean=eif_mean
    )
