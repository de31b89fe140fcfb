"""Estimator tests: exact identities, equivariance, and structural collapses.

The identity cascade feeds exact nuisances from a discrete population into
every estimator form; all of them must reproduce the direct g-formula
value to float precision on the expanded dataset.
"""

import numpy as np
import pytest

from mrcde import (
    Dataset,
    NuisanceSpec,
    SchemaError,
    Target,
    TermSpec,
    VariantMismatch,
    build_design,
    estimate,
    estimate_dr,
    estimate_gcomp,
    estimate_mr,
    estimate_plugin,
    fit_nuisances,
    fit_ols,
    predict,
)
from mrcde.estimators import (
    ALL_ESTIMATORS,
    DR_ESTIMATORS,
    MR_ESTIMATORS,
    PLUGIN_ESTIMATORS,
    eif,
    required_variant,
)
from mrcde.simulation import spec_for

EXACT_EQUIVARIANT = ("g_comp", "pure_imputation", "dr1", "dr4", "tr1", "qr")

ALL_CELLS = [(0, 0), (0, 1), (1, 0), (1, 1)]


def run_estimator(est, ds, target, nuis):
    if est in MR_ESTIMATORS:
        return estimate_mr(est, ds, target, nuis)
    if est in DR_ESTIMATORS:
        return estimate_dr(est, ds, target, nuis)
    return estimate_plugin(est, ds, target, nuis)


class TestIdentityCascade:
    def test_exact_nuisances_reproduce_the_g_formula(self, populations):
        forms = [e for e in ALL_ESTIMATORS if e != "g_comp"]
        for pop, counts in populations:
            ds = pop.to_dataset(counts)
            for a, m in ALL_CELLS:
                truth = pop.psi(a, m)
                for est in forms:
                    variant = required_variant(est) or "imputation"
                    nuis = pop.nuisance_values(ds, a, m, variant)
                    got = run_estimator(est, ds, Target(a, m), nuis).psi
                    assert abs(got - truth) < 1e-12, (est, a, m)

    def test_influence_function_mean_is_zero(self, populations):
        for pop, counts in populations:
            ds = pop.to_dataset(counts)
            for a, m in ALL_CELLS:
                nuis = pop.nuisance_values(ds, a, m, "dr")
                res = estimate_mr("qr", ds, Target(a, m), nuis)
                assert abs(np.mean(res.eif)) < 1e-12

    def test_dispatcher_accepts_prefit_nuisances(self, populations):
        pop, counts = populations[0]
        ds = pop.to_dataset(counts)
        nuis = pop.nuisance_values(ds, 0, 1, "dr")
        one = TermSpec(("1",))
        spec = NuisanceSpec(mu_spec=one, nu_spec=one, pi_a_spec=one, pi_m_spec=one)
        via_dispatch = estimate("qr", ds, Target(0, 1), spec, nuisances=nuis).psi
        direct = estimate_mr("qr", ds, Target(0, 1), nuis).psi
        assert via_dispatch == direct


class TestVariantPolicy:
    def test_required_variant_map(self):
        assert required_variant("tr1") == "imputation"
        assert required_variant("tr2") == "weighting"
        assert required_variant("qr") == "dr"
        assert required_variant("dr3") is None
        assert required_variant("pure_weighting") is None

    def test_unknown_estimator_rejected(self):
        with pytest.raises(SchemaError):
            required_variant("tr9")

    def test_mismatched_variant_rejected(self, populations):
        pop, counts = populations[0]
        ds = pop.to_dataset(counts)
        wrong = pop.nuisance_values(ds, 0, 1, "weighting")
        with pytest.raises(VariantMismatch):
            estimate_mr("tr1", ds, Target(0, 1), wrong)
        with pytest.raises(VariantMismatch):
            estimate_dr("dr4", ds, Target(0, 1), wrong)
        with pytest.raises(VariantMismatch):
            estimate_plugin("pure_imputation", ds, Target(0, 1), wrong)

    def test_dr3_ignores_the_variant(self, populations):
        pop, counts = populations[1]
        ds = pop.to_dataset(counts)
        values = [
            estimate_dr("dr3", ds, Target(1, 1), pop.nuisance_values(ds, 1, 1, v)).psi
            for v in ("imputation", "weighting", "dr")
        ]
        assert values[0] == values[1] == values[2]

    def test_estimator_class_checks(self, populations):
        pop, counts = populations[0]
        ds = pop.to_dataset(counts)
        nuis = pop.nuisance_values(ds, 0, 1, "imputation")
        with pytest.raises(SchemaError):
            estimate_plugin("dr1", ds, Target(0, 1), nuis)
        with pytest.raises(SchemaError):
            estimate_dr("tr1", ds, Target(0, 1), nuis)
        with pytest.raises(SchemaError):
            estimate_mr("dr1", ds, Target(0, 1), nuis)


class TestInfluenceFunction:
    def test_se_matches_summand_spread(self, sample_400):
        res = estimate("qr", sample_400, Target(0, 1), spec_for("all_correct"))
        assert res.eif is not None
        assert abs(np.mean(res.eif)) < 1e-12
        manual = np.std(res.eif, ddof=1) / np.sqrt(sample_400.n)
        assert abs(res.se - manual) < 1e-12

    def test_eif_function_recentres_at_given_psi(self, sample_400):
        spec = spec_for("all_correct").with_variant("dr")
        nuis = fit_nuisances(sample_400, Target(0, 1), spec)
        res = estimate_mr("qr", sample_400, Target(0, 1), nuis)
        shifted = eif(sample_400, Target(0, 1), nuis, res.psi + 1.0)
        assert np.allclose(shifted, res.eif - 1.0)


class TestAffineEquivariance:
    def run_pair(self, est, ds, ds2, spec):
        kwargs = {"z_spec": TermSpec(("1", "x", "x^2", "a"))} if est == "g_comp" else {}
        p1 = estimate(est, ds, Target(0, 1), spec, seed=5, **kwargs).psi
        p2 = estimate(est, ds2, Target(0, 1), spec, seed=5, **kwargs).psi
        return p1, p2

    def test_affine_outcome_maps_exactly_for_linear_forms(self, sample_400):
        ds = sample_400
        ds2 = Dataset(x=ds.x, a=ds.a, z=ds.z, m=ds.m, y=2.0 * ds.y + 3.0)
        spec = spec_for("all_correct")
        for est in EXACT_EQUIVARIANT:
            p1, p2 = self.run_pair(est, ds, ds2, spec)
            assert abs(p2 - (2.0 * p1 + 3.0)) < 1e-10, est

    def test_weighting_forms_are_approximately_equivariant(self, sample_400):
        # Forms with a bare inverse-probability term pick up a
        # Pn[weight] - 1 remainder; it vanishes only as n grows.
        ds = sample_400
        ds2 = Dataset(x=ds.x, a=ds.a, z=ds.z, m=ds.m, y=2.0 * ds.y + 3.0)
        spec = spec_for("all_correct")
        rest = [e for e in ALL_ESTIMATORS if e not in EXACT_EQUIVARIANT]
        for est in rest:
            p1, p2 = self.run_pair(est, ds, ds2, spec)
            assert abs(p2 - (2.0 * p1 + 3.0)) < 2.0, est


class TestGcomp:
    def test_no_z_columns_is_a_closed_form(self):
        rng = np.random.default_rng(21)
        n = 60
        ds = Dataset(
            x=rng.normal(size=n), a=rng.integers(0, 2, size=n), z=np.empty((n, 0)),
            m=rng.integers(0, 2, size=n), y=rng.normal(size=n),
        )
        y_spec = TermSpec(("1", "x", "a", "m"))
        res = estimate_gcomp(ds, Target(1, 0), y_spec, TermSpec(("1", "x", "a")))
        fit = fit_ols(build_design(y_spec, ds), ds.y)
        manual = float(np.mean(predict(fit, build_design(y_spec, ds, {"a": 1, "m": 0}))))
        assert abs(res.psi - manual) < 1e-12

    def test_linear_in_z_model_matches_plugging_the_z_mean(self, sample_400):
        ds = sample_400
        y_spec = TermSpec(("1", "x", "a", "z", "m"))
        z_spec = TermSpec(("1", "x", "a"))
        res = estimate_gcomp(ds, Target(0, 1), y_spec, z_spec, draws=4000, seed=2)
        y_fit = fit_ols(build_design(y_spec, ds), ds.y)
        z_fit = fit_ols(build_design(z_spec, ds), ds.z[:, 0])
        z_bar = predict(z_fit, build_design(z_spec, ds, {"a": 0}))
        manual = float(np.mean(predict(
            y_fit, build_design(y_spec, ds, {"a": 0, "m": 1, "z": z_bar})
        )))
        assert abs(res.psi - manual) < 0.02

    def test_draw_seed_is_reproducible(self, sample_400):
        spec = spec_for("all_correct")
        z_spec = TermSpec(("1", "x", "x^2", "a"))
        kwargs = dict(z_spec=z_spec, draws=50)
        one = estimate("g_comp", sample_400, Target(0, 1), spec, seed=9, **kwargs).psi
        two = estimate("g_comp", sample_400, Target(0, 1), spec, seed=9, **kwargs).psi
        three = estimate("g_comp", sample_400, Target(0, 1), spec, seed=10, **kwargs).psi
        assert one == two
        assert one != three

    def test_missing_z_spec_rejected(self, sample_400):
        with pytest.raises(SchemaError):
            estimate("g_comp", sample_400, Target(0, 1), spec_for("all_correct"))

    def test_nonpositive_draws_rejected(self, sample_400):
        with pytest.raises(SchemaError):
            estimate_gcomp(
                sample_400, Target(0, 1),
                TermSpec(("1", "x", "a", "z", "m")), TermSpec(("1", "x", "a")), draws=0,
            )


class TestBangRobinsCollapse:
    def test_augmentation_terms_vanish_and_tr1_collapses(self, sample_1500):
        ds = sample_1500
        target = Target(0, 1)
        base = spec_for("all_correct")
        spec = NuisanceSpec(
            mu_spec=base.mu_spec, nu_spec=base.nu_spec, pi_a_spec=base.pi_a_spec,
            pi_m_spec=base.pi_m_spec, br_augment=True,
        )
        nuis = fit_nuisances(ds, target, spec)
        ind_a = (ds.a == target.a).astype(float)
        ind_m = (ds.m == target.m).astype(float)
        term_mu = np.mean(ind_a * (nuis.mu - nuis.nu) / nuis.pi_a)
        term_y = np.mean(ind_a * ind_m * (ds.y - nuis.mu) / (nuis.pi_a * nuis.pi_m))
        assert abs(term_mu) < 1e-8
        assert abs(term_y) < 1e-8
        res = estimate_mr("tr1", ds, target, nuis)
        assert abs(res.psi - np.mean(nuis.nu)) < 1e-8


class TestCrossFittedEstimation:
    def test_folds_path_matches_manual_cross_fit(self, sample_400):
        from mrcde import cross_fit

        spec = spec_for("all_correct")
        via_dispatch = estimate("qr", sample_400, Target(0, 1), spec, folds=3, seed=7).psi
        nuis = cross_fit(sample_400, Target(0, 1), spec.with_variant("dr"), folds=3, seed=7)
        manual = estimate_mr("qr", sample_400, Target(0, 1), nuis).psi
        assert via_dispatch == manual
