"""Core data structures: dataset container, targets, nuisance values, results.

A :class:`Dataset` is a validated, immutable bundle of observed columns
(confounders ``x``, treatment ``a``, intermediate confounders ``z``,
mediator ``m``, outcome ``y``).  Treatment and mediator labels are integers
drawn from declared finite supports.  Columns are addressed by canonical
names: ``x`` and ``z`` when one-dimensional, otherwise ``x1``, ``x2``, ...
and ``z1``, ``z2``, ...; the labels ``a`` and ``m`` resolve to float
encodings of the raw labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from .errors import EmptyStratum, SchemaError, UnknownVariable

# Fraction below which an involved stratum draws a positivity warning.
CELL_FRACTION_WARN = 0.01


def _as_float_matrix(arr, name: str, n: int | None) -> np.ndarray:
    out = np.asarray(arr, dtype=float)
    if out.ndim == 1:
        out = out.reshape(-1, 1)
    if out.ndim != 2:
        raise SchemaError(f"{name} must be 1- or 2-dimensional, got ndim={out.ndim}")
    if n is not None and out.shape[0] != n:
        raise SchemaError(f"{name} has {out.shape[0]} rows, expected {n}")
    if out.size and not np.isfinite(out).all():
        raise SchemaError(f"{name} contains non-finite values")
    return out


def _as_label_vector(arr, name: str, n: int, support: tuple[int, ...]) -> np.ndarray:
    raw = np.asarray(arr)
    out = np.asarray(raw, dtype=np.int64)
    if out.ndim != 1:
        raise SchemaError(f"{name} must be 1-dimensional")
    if out.shape[0] != n:
        raise SchemaError(f"{name} has length {out.shape[0]}, expected {n}")
    if raw.dtype.kind == "f" and not np.array_equal(raw, out):
        raise SchemaError(f"{name} labels must be integers")
    bad = set(np.unique(out)) - set(support)
    if bad:
        raise SchemaError(f"{name} contains labels {sorted(bad)} outside support {list(support)}")
    return out


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dataset:
    """Immutable observed-data container.

    Parameters
    ----------
    x : array_like, shape (n, p_x) or (n,)
        Baseline confounders; ``p_x`` may be zero.
    a : array_like of int, shape (n,)
        Treatment labels, each in ``a_support``.
    z : array_like, shape (n, p_z) or (n,)
        Post-treatment intermediate confounders; ``p_z`` may be zero.
    m : array_like of int, shape (n,)
        Mediator labels, each in ``m_support``.
    y : array_like, shape (n,)
        Outcome.
    a_support, m_support : tuple of int
        Declared finite label supports.
    """

    x: np.ndarray
    a: np.ndarray
    z: np.ndarray
    m: np.ndarray
    y: np.ndarray
    a_support: tuple[int, ...] = (0, 1)
    m_support: tuple[int, ...] = (0, 1)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1:
            raise SchemaError("y must be 1-dimensional")
        n = y.shape[0]
        if n < 1:
            raise SchemaError("dataset must contain at least one row")
        if not np.isfinite(y).all():
            raise SchemaError("y contains non-finite values")
        a_support = tuple(int(v) for v in self.a_support)
        m_support = tuple(int(v) for v in self.m_support)
        if len(set(a_support)) != len(a_support) or not a_support:
            raise SchemaError("a_support must be a non-empty set of distinct labels")
        if len(set(m_support)) != len(m_support) or not m_support:
            raise SchemaError("m_support must be a non-empty set of distinct labels")
        x = _as_float_matrix(self.x, "x", n) if np.size(self.x) else np.empty((n, 0))
        z = _as_float_matrix(self.z, "z", n) if np.size(self.z) else np.empty((n, 0))
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "z", _freeze(z))
        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "a", _freeze(_as_label_vector(self.a, "a", n, a_support)))
        object.__setattr__(self, "m", _freeze(_as_label_vector(self.m, "m", n, m_support)))
        object.__setattr__(self, "a_support", a_support)
        object.__setattr__(self, "m_support", m_support)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p_x(self) -> int:
        return self.x.shape[1]

    @property
    def p_z(self) -> int:
        return self.z.shape[1]

    def variable_names(self) -> list[str]:
        """Canonical design-variable names this dataset can resolve."""
        names = ["a", "m"]
        names += ["x"] if self.p_x == 1 else [f"x{i + 1}" for i in range(self.p_x)]
        names += ["z"] if self.p_z == 1 else [f"z{i + 1}" for i in range(self.p_z)]
        return names

    def column(self, name: str) -> np.ndarray:
        """Resolve a canonical variable name to a float column."""
        if name == "a":
            return self.a.astype(float)
        if name == "m":
            return self.m.astype(float)
        for label, mat in (("x", self.x), ("z", self.z)):
            if name == label and mat.shape[1] == 1:
                return mat[:, 0]
            if name.startswith(label) and name[len(label):].isdigit():
                idx = int(name[len(label):]) - 1
                if 0 <= idx < mat.shape[1]:
                    return mat[:, idx]
        raise UnknownVariable(
            f"variable {name!r} not available; dataset provides {self.variable_names()}"
        )

    def take(self, indices) -> "Dataset":
        """Row subset (or resample) as a new Dataset."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            x=self.x[idx],
            a=self.a[idx],
            z=self.z[idx],
            m=self.m[idx],
            y=self.y[idx],
            a_support=self.a_support,
            m_support=self.m_support,
        )


@dataclass(frozen=True)
class Target:
    """Estimand labels: primary cell (a, m), optional contrast labels.

    ``a_prime`` identifies the comparison treatment for a controlled direct
    effect; ``m_prime`` the comparison mediator level for a controlled
    mediator effect.  Both together define the interaction contrast.
    """

    a: int
    m: int
    a_prime: int | None = None
    m_prime: int | None = None

    def cells(self) -> list[tuple[int, int]]:
        """Distinct (a, m) cells the target touches, primary first."""
        out = [(self.a, self.m)]
        if self.a_prime is not None:
            out.append((self.a_prime, self.m))
        if self.m_prime is not None:
            out.append((self.a, self.m_prime))
        if self.a_prime is not None and self.m_prime is not None:
            out.append((self.a_prime, self.m_prime))
        return list(dict.fromkeys(out))

    def to_dict(self) -> dict:
        return {"a": self.a, "m": self.m, "a_prime": self.a_prime, "m_prime": self.m_prime}


# Second-stage pseudo-outcome variants for the nested regression nu.
NU_IMPUTATION = "imputation"
NU_WEIGHTING = "weighting"
NU_DR = "dr"
NU_VARIANTS = (NU_IMPUTATION, NU_WEIGHTING, NU_DR)


@dataclass(frozen=True)
class NuisanceValues:
    """Per-unit nuisance evaluations at a fixed target cell (a, m).

    ``mu`` is the outcome regression evaluated at the override (A=a, M=m);
    ``nu`` the second-stage regression evaluated at A=a; ``pi_a`` the
    treatment propensity for label a; ``pi_m`` the mediator probability for
    label m evaluated at A=a.  Probabilities are already truncated away
    from 0 and 1.
    """

    mu: np.ndarray
    nu: np.ndarray
    pi_a: np.ndarray
    pi_m: np.ndarray
    nu_variant: str

    def __post_init__(self):
        arrays = {}
        n = None
        for name in ("mu", "nu", "pi_a", "pi_m"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise SchemaError(f"{name} must be 1-dimensional")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise SchemaError("nuisance vectors must share a common length")
            if not np.isfinite(arr).all():
                raise SchemaError(f"{name} contains non-finite values")
            arrays[name] = _freeze(arr)
        for name in ("pi_a", "pi_m"):
            arr = arrays[name]
            if arr.size and (arr.min() <= 0.0 or arr.max() >= 1.0):
                raise SchemaError(f"{name} must lie strictly inside (0, 1) after truncation")
        if self.nu_variant not in NU_VARIANTS:
            raise SchemaError(f"nu_variant must be one of {NU_VARIANTS}, got {self.nu_variant!r}")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class EstimateResult:
    """Point estimate for one (a, m) cell, with EIF-based uncertainty when available."""

    psi: float
    estimator: str
    target: Target
    n: int
    eif: np.ndarray | None = None
    se: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None

    def __post_init__(self):
        if self.eif is not None:
            arr = np.asarray(self.eif, dtype=float)
            if arr.ndim != 1 or arr.shape[0] != self.n:
                raise SchemaError("eif must be a length-n vector")
            object.__setattr__(self, "eif", _freeze(arr))
        if self.se is not None and self.se < 0:
            raise SchemaError("se must be non-negative")

    def to_dict(self) -> dict:
        """JSON-ready summary (per-unit EIF values are not serialized)."""
        return {
            "estimator": self.estimator,
            "target": self.target.to_dict(),
            "psi": float(self.psi),
            "se": None if self.se is None else float(self.se),
            "ci_low": None if self.ci_low is None else float(self.ci_low),
            "ci_high": None if self.ci_high is None else float(self.ci_high),
            "n": int(self.n),
        }


@dataclass
class ValidationReport:
    """Outcome of target-against-dataset validation."""

    n: int
    counts: dict[str, int] = field(default_factory=dict)
    errors: list[Exception] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_for_errors(self) -> None:
        if self.errors:
            raise self.errors[0]


def validate(dataset: Dataset, target: Target) -> ValidationReport:
    """Check that every stratum the target needs is populated.

    Counts units with A=a and with (A=a, M=m) for each cell the target
    touches.  A zero count is an error; a cell fraction below
    ``CELL_FRACTION_WARN`` is a warning (weak empirical positivity).
    """
    report = ValidationReport(n=dataset.n)
    labels_ok = True
    for name, value, support in (
        ("a", target.a, dataset.a_support),
        ("a_prime", target.a_prime, dataset.a_support),
        ("m", target.m, dataset.m_support),
        ("m_prime", target.m_prime, dataset.m_support),
    ):
        if value is not None and value not in support:
            report.errors.append(
                SchemaError(f"target {name}={value} is not in the declared support {list(support)}")
            )
            labels_ok = False
    if not labels_ok:
        return report

    seen_a = set()
    for a_val, m_val in target.cells():
        in_a = dataset.a == a_val
        in_am = in_a & (dataset.m == m_val)
        if a_val not in seen_a:
            seen_a.add(a_val)
            count_a = int(in_a.sum())
            report.counts[f"a={a_val}"] = count_a
            if count_a == 0:
                report.errors.append(EmptyStratum(f"no units with A={a_val}"))
            elif count_a / dataset.n < CELL_FRACTION_WARN:
                report.warnings.append(
                    f"stratum A={a_val} holds {count_a}/{dataset.n} units "
                    f"(fraction below {CELL_FRACTION_WARN})"
                )
        key = f"a={a_val},m={m_val}"
        count_am = int(in_am.sum())
        report.counts[key] = count_am
        if count_am == 0:
            report.errors.append(EmptyStratum(f"no units with A={a_val}, M={m_val}"))
        elif count_am / dataset.n < CELL_FRACTION_WARN:
            report.warnings.append(
                f"stratum A={a_val}, M={m_val} holds {count_am}/{dataset.n} units "
                f"(fraction below {CELL_FRACTION_WARN})"
            )
    return report


def require_valid(dataset: Dataset, target: Target) -> ValidationReport:
    """Validate and raise the first error, if any."""
    report = validate(dataset, target)
    report.raise_for_errors()
    return report


# ---------------------------------------------------------------------------
# CSV ingestion


def _require_keys(roles: dict, keys: Iterable[str]) -> None:
    missing = [k for k in keys if k not in roles]
    if missing:
        raise SchemaError(f"roles config missing keys: {missing}")


def load_roles(path: str | Path) -> dict:
    """Read and minimally check a roles config JSON file."""
    try:
        with open(path) as fh:
            roles = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"roles config is not valid JSON: {exc}") from exc
    if not isinstance(roles, dict):
        raise SchemaError("roles config must be a JSON object")
    _require_keys(roles, ("a", "m", "y", "a_support", "m_support"))
    roles.setdefault("x", [])
    roles.setdefault("z", [])
    for key in ("x", "z"):
        if not isinstance(roles[key], list):
            raise SchemaError(f"roles key {key!r} must be a list of column names")
    return roles


def load_csv(data_path: str | Path, roles: dict | str | Path) -> Dataset:
    """Build a Dataset from a CSV file and a column-role mapping.

    ``roles`` is either a parsed config dict or a path to a JSON file with
    keys ``x`` (list), ``a``, ``z`` (list), ``m``, ``y``, ``a_support``,
    ``m_support``.
    """
    if not isinstance(roles, dict):
        roles = load_roles(roles)
    frame = pd.read_csv(data_path)
    wanted = list(roles["x"]) + [roles["a"]] + list(roles["z"]) + [roles["m"], roles["y"]]
    missing = [c for c in wanted if c not in frame.columns]
    if missing:
        raise SchemaError(f"data file lacks columns {missing}")
    try:
        return Dataset(
            x=frame[list(roles["x"])].to_numpy(dtype=float) if roles["x"] else np.empty((len(frame), 0)),
            a=frame[roles["a"]].to_numpy(),
            z=frame[list(roles["z"])].to_numpy(dtype=float) if roles["z"] else np.empty((len(frame), 0)),
            m=frame[roles["m"]].to_numpy(),
            y=frame[roles["y"]].to_numpy(dtype=float),
            a_support=tuple(roles["a_support"]),
            m_support=tuple(roles["m_support"]),
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"could not coerce columns to the declared roles: {exc}") from exc
