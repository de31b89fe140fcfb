"""Command-line surface: ``mrcde estimate`` and ``mrcde simulate``.

Exit codes: 0 success, 2 validation problem (bad labels, schema, empty
strata, unusable configs), 3 numerical failure (rank deficiency,
separation, non-convergence, bootstrap breakdown).  Diagnostics go to
stderr; machine-readable output goes to files or, with ``--stdout``, to
stdout.

Every run writes (or embeds) a manifest holding the command, the fully
resolved configuration, the seed, the tool version, and digests of the
input files; ``--from-manifest`` replays a previous run from it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from .data import Dataset, Target, load_csv, load_roles, validate
from .errors import (
    BootstrapFailure,
    DimensionMismatch,
    EmptyStratum,
    FoldTooSmall,
    LengthMismatch,
    MissingEif,
    MrcdeError,
    NotConverged,
    RankDeficient,
    SchemaError,
    Separation,
    UnknownVariable,
    VariantMismatch,
    ZeroCell,
)
from .estimators import ALL_ESTIMATORS, MR_ESTIMATORS, estimate
from .glm import TermSpec
from .inference import bootstrap, contrast, wald_interval
from .nuisance import DEFAULT_TRUNCATION, NuisanceSpec
from .simulation import DEFAULT_CONFIG, SimConfig, run_grid

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

_VALIDATION_ERRORS = (
    SchemaError,
    EmptyStratum,
    UnknownVariable,
    VariantMismatch,
    LengthMismatch,
    MissingEif,
    FoldTooSmall,
    ZeroCell,
)
_NUMERICAL_ERRORS = (RankDeficient, Separation, NotConverged, DimensionMismatch, BootstrapFailure)


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("mrcde")
    except Exception:
        from . import __version__

        return __version__


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(command: str, args: dict, digests: dict[str, str]) -> dict:
    return {
        "command": command,
        "args": args,
        "seed": args.get("seed"),
        "version": _version(),
        "input_digests": digests,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


def _log(message: str):
    print(message, file=sys.stderr)


# Output destinations are never replayed; the current invocation picks them.
_REPLAY_SKIP = {"out", "out_dir", "csv", "stdout"}


def _load_manifest_args(parser: argparse.ArgumentParser, args: argparse.Namespace, command: str):
    """Replay the computation-relevant option values stored in a manifest."""
    if not getattr(args, "from_manifest", None):
        return args
    with open(args.from_manifest) as fh:
        manifest = json.load(fh)
    if manifest.get("command") != command:
        parser.error(f"manifest was written by {manifest.get('command')!r}, not {command!r}")
    stored = manifest.get("args", {})
    for key, value in stored.items():
        if key not in _REPLAY_SKIP:
            setattr(args, key, value)
    if "resolved_config" in manifest:
        args.resolved_config = manifest["resolved_config"]
    return args


# ---------------------------------------------------------------------------
# estimate


def _default_models(dataset: Dataset) -> dict[str, list[str]]:
    """Main-effects designs over the declared columns."""
    x = ["x"] if dataset.p_x == 1 else [f"x{i + 1}" for i in range(dataset.p_x)]
    z = ["z"] if dataset.p_z == 1 else [f"z{i + 1}" for i in range(dataset.p_z)]
    return {
        "mu": ["1", *x, "a", *z, "m"],
        "nu": ["1", *x, "a"],
        "pi_a": ["1", *x],
        "pi_m": ["1", *x, "a", *z],
        "z": ["1", *x, "a"],
    }


def _build_spec(args, dataset: Dataset) -> tuple[NuisanceSpec, TermSpec]:
    models = _default_models(dataset)
    if args.models:
        with open(args.models) as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"models file is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise SchemaError("models file must be a JSON object of term lists")
        unknown = set(user) - set(models)
        if unknown:
            raise SchemaError(f"models file has unknown keys {sorted(unknown)}")
        models.update(user)
    spec = NuisanceSpec(
        mu_spec=TermSpec.from_json(models["mu"]),
        nu_spec=TermSpec.from_json(models["nu"]),
        pi_a_spec=TermSpec.from_json(models["pi_a"]),
        pi_m_spec=TermSpec.from_json(models["pi_m"]),
        nu_variant=args.nu_variant,
        truncation=args.truncation,
        br_augment=args.br,
    )
    return spec, TermSpec.from_json(models["z"])


def cmd_estimate(parser, args) -> int:
    args = _load_manifest_args(parser, args, "estimate")
    roles = load_roles(args.roles)
    dataset = load_csv(args.data, roles)
    target = Target(a=args.a, m=args.m, a_prime=args.a_prime, m_prime=args.m_prime)
    report = validate(dataset, target)
    for warning in report.warnings:
        _log(f"warning: {warning}")
    if not report.ok:
        for error in report.errors:
            _log(f"error: {error}")
        return EXIT_VALIDATION
    estimators = args.estimator or ["qr"]
    for name in estimators:
        if name not in ALL_ESTIMATORS:
            raise SchemaError(f"unknown estimator {name!r}; known: {list(ALL_ESTIMATORS)}")
    spec, z_spec = _build_spec(args, dataset)

    kinds = []
    if target.a_prime is not None:
        kinds.append("CDE")
    if target.m_prime is not None:
        kinds.append("CME")
    if target.a_prime is not None and target.m_prime is not None:
        kinds.append("interaction")

    results = []
    contrasts = []
    for name in estimators:
        if args.bootstrap:
            for a_val, m_val in target.cells():
                res = bootstrap(
                    dataset, Target(a=a_val, m=m_val), name, spec,
                    b=args.bootstrap, seed=args.seed, level=args.level,
                    folds=args.folds, z_spec=z_spec, draws=args.draws,
                )
                results.append(res)
            for kind in kinds:
                contrasts.append(
                    bootstrap(
                        dataset, target, name, spec,
                        b=args.bootstrap, seed=args.seed, level=args.level, kind=kind,
                        folds=args.folds, z_spec=z_spec, draws=args.draws,
                    )
                )
        else:
            by_cell = {}
            for a_val, m_val in target.cells():
                res = estimate(
                    name, dataset, Target(a=a_val, m=m_val), spec,
                    folds=args.folds, seed=args.seed, z_spec=z_spec, draws=args.draws,
                )
                if res.se is not None:
                    res = wald_interval(res, level=args.level)
                by_cell[(a_val, m_val)] = res
                results.append(res)
            if name in MR_ESTIMATORS:
                pair_for = {
                    "CDE": [(target.a, target.m), (target.a_prime, target.m)],
                    "CME": [(target.a, target.m), (target.a, target.m_prime)],
                    "interaction": [
                        (target.a, target.m), (target.a, target.m_prime),
                        (target.a_prime, target.m), (target.a_prime, target.m_prime),
                    ],
                }
                for kind in kinds:
                    contrasts.append(
                        contrast(kind, [by_cell[c] for c in pair_for[kind]], level=args.level)
                    )
            elif kinds:
                _log(
                    f"note: {name} carries no influence function; contrasts skipped "
                    "(rerun with --bootstrap B for resampled intervals)"
                )

    manifest_args = {
        "data": str(args.data), "roles": str(args.roles), "models": args.models,
        "a": args.a, "m": args.m, "a_prime": args.a_prime, "m_prime": args.m_prime,
        "estimator": estimators, "nu_variant": args.nu_variant, "folds": args.folds,
        "bootstrap": args.bootstrap, "seed": args.seed, "level": args.level,
        "truncation": args.truncation, "br": args.br, "draws": args.draws,
    }
    digests = {"data": _digest(args.data), "roles": _digest(args.roles)}
    if args.models:
        digests["models"] = _digest(args.models)
    doc = {
        "manifest": _manifest("estimate", manifest_args, digests),
        "stratum_counts": report.counts,
        "results": [r.to_dict() for r in results],
        "contrasts": [c.to_dict() for c in contrasts],
    }
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        _log(f"wrote {args.out}")
    if args.stdout or not args.out:
        print(text)
    if args.csv:
        import pandas as pd

        rows = [c.to_dict() for c in contrasts] or [r.to_dict() | {"kind": "cell"} for r in results]
        pd.DataFrame(rows).to_csv(args.csv, index=False)
        _log(f"wrote {args.csv}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(parser, args) -> int:
    args = _load_manifest_args(parser, args, "simulate")
    config_digest = {}
    if getattr(args, "resolved_config", None):
        config = SimConfig.from_json(args.resolved_config)
    elif args.config:
        with open(args.config) as fh:
            try:
                config = SimConfig.from_json(json.load(fh))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"config file is not valid JSON: {exc}") from exc
        config_digest = {"config": _digest(args.config)}
    else:
        config = DEFAULT_CONFIG
    reps = args.reps if args.reps is not None else (200 if args.quick else 1000)
    n = args.n if args.n is not None else (1000 if args.quick else 2000)
    scenarios = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    for name in estimators:
        if name not in ALL_ESTIMATORS:
            raise SchemaError(f"unknown estimator {name!r}; known: {list(ALL_ESTIMATORS)}")

    _log(
        f"running {len(scenarios)} scenario(s) x {reps} replicate(s) at n={n} "
        f"with {len(estimators)} estimator(s), jobs={args.jobs}"
    )
    result = run_grid(
        config, scenarios, estimators, reps=reps, n=n,
        seed=args.seed, jobs=args.jobs, level=args.level,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.replicates.to_csv(out_dir / "replicates.csv", index=False)
    summary_doc = {
        "target": result.target.to_dict(),
        "truth": result.truth,
        "level": result.level,
        "n": n,
        "reps": reps,
        "n_failed": int(result.summary.n_failed.sum()),
        "cells": result.summary.to_dict(orient="records"),
    }
    summary_text = json.dumps(summary_doc, indent=2, allow_nan=True)
    (out_dir / "summary.json").write_text(summary_text + "\n")
    manifest_args = {
        "config": str(args.config) if args.config else None,
        "scenarios": ",".join(scenarios), "estimators": ",".join(estimators),
        "reps": reps, "n": n, "seed": args.seed, "jobs": args.jobs,
        "level": args.level, "out_dir": str(out_dir), "quick": False,
    }
    manifest = _manifest("simulate", manifest_args, config_digest)
    manifest["resolved_config"] = config.to_json()
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    _log(f"wrote {out_dir}/replicates.csv, summary.json, manifest.json")
    if args.stdout:
        print(summary_text)
    failed = int(result.summary.n_failed.sum())
    if failed:
        _log(f"note: {failed} replicate estimation(s) failed; see the error column")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrcde",
        description="Doubly and multiply robust estimation of controlled direct effects.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate E[Y(a, m)] and contrasts from a CSV file")
    est.add_argument("--data", required=False, help="CSV file with the observed columns")
    est.add_argument("--roles", required=False, help="JSON mapping columns to roles")
    est.add_argument("--models", default=None, help="JSON with design term lists (mu, nu, pi_a, pi_m, z)")
    est.add_argument("--a", type=int, help="treatment label to set")
    est.add_argument("--m", type=int, help="mediator label to set")
    est.add_argument("--a-prime", type=int, default=None, dest="a_prime", help="comparison treatment (direct-effect contrast)")
    est.add_argument("--m-prime", type=int, default=None, dest="m_prime", help="comparison mediator (mediator contrast)")
    est.add_argument("--estimator", action="append", choices=ALL_ESTIMATORS, help="repeatable; default qr")
    est.add_argument("--nu-variant", default="imputation", dest="nu_variant",
                     choices=("imputation", "weighting", "dr"),
                     help="second-stage pseudo-outcome for estimators that do not pin one")
    est.add_argument("--folds", type=int, default=None, help="cross-fitting folds (>= 2)")
    est.add_argument("--bootstrap", type=int, default=None, metavar="B", help="bootstrap replicates for uncertainty")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--level", type=float, default=0.95)
    est.add_argument("--truncation", type=float, default=DEFAULT_TRUNCATION, help="probability truncation bound")
    est.add_argument("--br", action="store_true", help="inverse-weight covariate augmentation of mu and nu")
    est.add_argument("--draws", type=int, default=200, help="Monte Carlo draws for g_comp")
    est.add_argument("--out", default=None, help="write the JSON document here")
    est.add_argument("--csv", default=None, help="write contrasts as one-row-per-contrast CSV")
    est.add_argument("--stdout", action="store_true", help="print the JSON document to stdout")
    est.add_argument("--from-manifest", default=None, dest="from_manifest", help="replay a previous run")

    sim = sub.add_parser("simulate", help="run the replication grid on the synthetic benchmark")
    sim.add_argument("--config", default=None, help="SimConfig JSON; omit for the built-in default")
    sim.add_argument("--default-config", action="store_true", dest="default_config",
                     help="use the built-in coefficient set (the default when --config is absent)")
    sim.add_argument("--scenarios", default="P1,P2,P3,P4", help="comma-separated scenario labels")
    sim.add_argument("--estimators", default="dr1,dr2,dr3,dr4,tr1,tr2,qr", help="comma-separated estimator ids")
    sim.add_argument("--reps", type=int, default=None, help="replicates per scenario (default 1000)")
    sim.add_argument("--n", type=int, default=None, help="sample size per replicate (default 2000)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--jobs", type=int, default=1, help="parallel worker processes for replicates")
    sim.add_argument("--level", type=float, default=0.95)
    sim.add_argument("--quick", action="store_true", help="desk-scale preset: reps=200, n=1000")
    sim.add_argument("--out-dir", default="mrcde_sim", dest="out_dir")
    sim.add_argument("--stdout", action="store_true", help="print the summary JSON to stdout")
    sim.add_argument("--from-manifest", default=None, dest="from_manifest", help="replay a previous run")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            if not args.from_manifest and (args.data is None or args.roles is None or args.a is None or args.m is None):
                parser.error("estimate needs --data, --roles, --a, and --m (or --from-manifest)")
            return cmd_estimate(parser, args)
        return cmd_simulate(parser, args)
    except _VALIDATION_ERRORS as exc:
        _log(f"error: {exc}")
        return EXIT_VALIDATION
    except _NUMERICAL_ERRORS as exc:
        _log(f"error: {exc}")
        return EXIT_NUMERICAL
    except MrcdeError as exc:
        _log(f"error: {exc}")
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        _log(f"error: {exc}")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
