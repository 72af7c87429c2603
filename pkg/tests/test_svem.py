import math

import numpy as np
import pytest

from formopt.design import generate_space_filling
from formopt.model import build_candidate_effects, coded_space, forward_selection, design_matrix
from formopt.svem import (
    EnsembleModel,
    actual_by_predicted,
    fractional_weights,
    predict,
    predict_rows,
    svem_fit,
    svem_fit_classical_equivalent,
)


@pytest.fixture
def fitted_fixture(lnp_study):
    """23-run design with a smooth deterministic response."""
    design = generate_space_filling(lnp_study, 23, seed=42)
    table = design.table

    def truth(row):
        z1 = (row["Ionizable"] - 0.1) / 0.69
        z2 = (row["Helper"] - 0.1) / 0.69
        bump = {"H101": 0.0, "H102": 4.0, "H103": -3.0}[row["Ionizable Lipid Type"]]
        return 50 + 30 * z2 - 18 * z1 + bump + 1.5 * (row["N_P_ratio"] - 10) * z2

    rng = np.random.default_rng(9)
    table.responses["Potency"] = [truth(table.factor_row(i)) + rng.normal(0, 1.5)
                                  for i in range(table.n_rows)]
    table.responses["Size"] = [100.0 - 20 * table.factors["Helper"][i] + rng.normal(0, 2)
                               for i in range(table.n_rows)]
    return lnp_study, table


class TestFractionalWeights:
    def test_symmetry_point(self):
        # u = 0.5 maps to (ln 2, ln 2)
        w = fractional_weights(1, seed=0)
        assert math.log(2) == pytest.approx(-math.log(0.5))

    def test_pair_construction_law(self):
        w = fractional_weights(5000, seed=3)
        u = np.exp(-w.train)
        assert np.allclose(w.valid, -np.log1p(-u), atol=1e-9)
        assert (w.train > 0).all() and (w.valid > 0).all()
        assert np.isfinite(w.train).all() and np.isfinite(w.valid).all()

    def test_extreme_u_holds_row_out(self):
        u = 1.0 - 1e-12
        train, valid = -math.log(u), -math.log1p(-u)
        assert train < 1e-11
        assert valid > 25

    def test_mean_and_anticorrelation(self):
        w = fractional_weights(10_000, seed=11)
        # exponential mean 1, sd 1 -> 3 standard errors = 0.03
        assert abs(w.train.mean() - 1.0) < 3.0 / math.sqrt(10_000)
        corr = np.corrcoef(w.train, w.valid)[0, 1]
        assert corr < -0.5

    def test_deterministic_given_seed(self):
        a = fractional_weights(100, seed=5)
        b = fractional_weights(100, seed=5)
        assert np.array_equal(a.train, b.train)
        assert np.array_equal(a.valid, b.valid)


class TestSvemFit:
    def test_degenerate_reduction_matches_classical(self, fitted_fixture):
        study, table = fitted_fixture
        effects = build_candidate_effects(study)
        space = coded_space(study)
        degenerate = svem_fit_classical_equivalent(effects, space, table, "Potency")
        X, y, _, rows = design_matrix(effects, space, table, "Potency")
        classical = forward_selection(X, y, np.ones(len(y)), score="aicc")
        assert degenerate.members[0].effect_indices == classical.effect_indices
        assert degenerate.members[0].coefficients == pytest.approx(
            classical.coefficients, abs=1e-10)

    def test_noiseless_linear_truth_recovered(self, lnp_study):
        design = generate_space_filling(lnp_study, 23, seed=4)
        table = design.table
        space = coded_space(lnp_study)
        effects = build_candidate_effects(lnp_study)
        from formopt.model import code_row
        table.responses["Potency"] = [
            2.0 + 3.0 * code_row(space, table.factor_row(i))["Ionizable"]
            for i in range(table.n_rows)]
        table.responses["Size"] = [50.0] * table.n_rows
        model = svem_fit(effects, space, table, "Potency", samples=40, seed=1)
        rows = [table.factor_row(i) for i in range(table.n_rows)]
        pred = predict_rows(model, rows)
        actual = np.array(table.responses["Potency"])
        assert np.abs(pred - actual).max() < 1e-6

    def test_determinism(self, fitted_fixture):
        study, table = fitted_fixture
        effects = build_candidate_effects(study)
        space = coded_space(study)
        a = svem_fit(effects, space, table, "Potency", samples=30, seed=7)
        b = svem_fit(effects, space, table, "Potency", samples=30, seed=7)
        assert len(a.members) == len(b.members)
        for fa, fb in zip(a.members, b.members):
            assert fa.effect_indices == fb.effect_indices
            assert np.array_equal(fa.coefficients, fb.coefficients)

    def test_skipped_counter_zero_on_clean_fixture(self, fitted_fixture):
        study, table = fitted_fixture
        model = svem_fit(build_candidate_effects(study), coded_space(study),
                         table, "Potency", samples=30, seed=3)
        assert model.skipped_members == 0
        assert len(model.members) == 30

    def test_too_few_rows_rejected(self, lnp_study):
        design = generate_space_filling(lnp_study, 5, seed=4)
        table = design.table
        table.responses["Potency"] = [50.0, 60.0, 70.0, 80.0, 90.0]
        with pytest.raises(ValueError, match="6 usable rows"):
            svem_fit(build_candidate_effects(lnp_study), coded_space(lnp_study),
                     table, "Potency", samples=5, seed=0)

    def test_affine_equivariance(self, fitted_fixture):
        study, table = fitted_fixture
        effects = build_candidate_effects(study)
        space = coded_space(study)
        base = svem_fit(effects, space, table, "Potency", samples=25, seed=13)
        scaled_table = table.copy()
        a, b = 2.5, -40.0
        scaled_table.responses["Potency"] = [a * v + b for v in table.responses["Potency"]]
        scaled = svem_fit(effects, space, scaled_table, "Potency", samples=25, seed=13)
        rows = [table.factor_row(i) for i in range(5)]
        assert predict_rows(scaled, rows) == pytest.approx(
            a * predict_rows(base, rows) + b, abs=1e-8)

    def test_member_variance_shrinks_with_samples(self, fitted_fixture):
        study, table = fitted_fixture
        effects = build_candidate_effects(study)
        space = coded_space(study)
        centroid = {"PEG": 0.0275, "Helper": 0.3242, "Ionizable": 0.3242,
                    "Cholesterol": 0.3241, "Ionizable Lipid Type": "H101",
                    "N_P_ratio": 10.0, "flow rate": 2.0}
        preds_small, preds_large = [], []
        for s in range(12):
            small = svem_fit(effects, space, table, "Potency", samples=20, seed=100 + s)
            large = svem_fit(effects, space, table, "Potency", samples=200, seed=300 + s)
            preds_small.append(predict(small, centroid, check_bounds=False))
            preds_large.append(predict(large, centroid, check_bounds=False))
        assert np.var(preds_large) < np.var(preds_small)

    def test_lasso_method_runs(self, fitted_fixture):
        study, table = fitted_fixture
        model = svem_fit(build_candidate_effects(study), coded_space(study),
                         table, "Potency", method="svem-lasso", samples=8, seed=2,
                         lambda_points=40)
        assert len(model.members) == 8
        rows = [table.factor_row(i) for i in range(table.n_rows)]
        pred = predict_rows(model, rows)
        assert np.corrcoef(pred, np.array(table.responses["Potency"]))[0, 1] > 0.5


class TestPredict:
    def test_identical_members_equal_single(self, fitted_fixture):
        study, table = fitted_fixture
        model = svem_fit_classical_equivalent(
            build_candidate_effects(study), coded_space(study), table, "Potency")
        clone = EnsembleModel(
            response=model.response, transform=model.transform, method=model.method,
            effects=model.effects, space=model.space,
            members=[model.members[0]] * 7, seed=0, samples=7)
        row = table.factor_row(0)
        assert predict(clone, row) == pytest.approx(predict(model, row), abs=1e-12)

    def test_log_transform_predictions_positive(self, fitted_fixture):
        study, table = fitted_fixture
        model = svem_fit(build_candidate_effects(study), coded_space(study),
                         table, "Potency", response_transform="log",
                         samples=20, seed=5)
        rows = [table.factor_row(i) for i in range(table.n_rows)]
        assert (predict_rows(model, rows) > 0).all()

    def test_mean_matches_member_loop_oracle(self, fitted_fixture):
        study, table = fitted_fixture
        effects = build_candidate_effects(study)
        space = coded_space(study)
        model = svem_fit(effects, space, table, "Potency", samples=15, seed=21)
        rows = [table.factor_row(i) for i in range(4)]
        from formopt.model import effect_matrix
        X = effect_matrix(effects, space, rows)
        member_mean = np.mean(
            [X[:, f.effect_indices] @ f.coefficients for f in model.members], axis=0)
        assert predict_rows(model, rows) == pytest.approx(member_mean, abs=1e-12)

    def test_out_of_bounds_rejected(self, fitted_fixture):
        study, table = fitted_fixture
        model = svem_fit(build_candidate_effects(study), coded_space(study),
                         table, "Potency", samples=5, seed=1)
        bad = dict(table.factor_row(0))
        bad["PEG"] = 0.2
        bad["Helper"] = max(0.1, bad["Helper"] - 0.15)
        with pytest.raises(ValueError):
            predict(model, bad)


class TestActualByPredicted:
    def test_perfect_model_correlates_fully(self, lnp_study):
        design = generate_space_filling(lnp_study, 12, seed=8)
        table = design.table
        space = coded_space(lnp_study)
        effects = build_candidate_effects(lnp_study)
        from formopt.model import code_row
        table.responses["Potency"] = [
            10.0 + 5.0 * code_row(space, table.factor_row(i))["Helper"]
            for i in range(table.n_rows)]
        table.responses["Size"] = [50.0] * table.n_rows
        model = svem_fit(effects, space, table, "Potency", samples=10, seed=2)
        result = actual_by_predicted(model, table)
        assert result.correlation == pytest.approx(1.0, abs=1e-6)
        assert result.outlier_rows == []

    def test_constant_predictions_flagged_not_numeric(self, fitted_fixture):
        study, table = fitted_fixture
        model = svem_fit(build_candidate_effects(study), coded_space(study),
                         table, "Potency", samples=5, seed=3)
        constant = EnsembleModel(
            response=model.response, transform=model.transform, method=model.method,
            effects=model.effects, space=model.space,
            members=[type(model.members[0])(effect_indices=[0],
                                            coefficients=np.array([55.0]),
                                            sse=0.0, n=23)],
            seed=0, samples=1)
        result = actual_by_predicted(constant, table)
        assert result.constant_predictions
        assert result.correlation is None

    def test_moderate_correlation_on_simulated_study(self, fitted_fixture):
        study, table = fitted_fixture
        model = svem_fit(build_candidate_effects(study), coded_space(study),
                         table, "Potency", samples=50, seed=6)
        result = actual_by_predicted(model, table)
        assert result.correlation is not None and result.correlation >= 0.5

    def test_too_few_rows(self, fitted_fixture):
        study, table = fitted_fixture
        model = svem_fit(build_candidate_effects(study), coded_space(study),
                         table, "Potency", samples=5, seed=3)
        small = table.copy()
        for i in range(2, small.n_rows):
            small.responses["Potency"][i] = None
        with pytest.raises(ValueError):
            actual_by_predicted(model, small)


class TestSerialization:
    def test_json_round_trip_preserves_predictions(self, fitted_fixture):
        import json
        study, table = fitted_fixture
        model = svem_fit(build_candidate_effects(study), coded_space(study),
                         table, "Potency", samples=12, seed=19)
        payload = json.loads(json.dumps(model.to_json()))
        back = EnsembleModel.from_json(payload)
        rows = [table.factor_row(i) for i in range(table.n_rows)]
        assert predict_rows(back, rows) == pytest.approx(predict_rows(model, rows), abs=0)
