import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from propagate import (
    MECHANISM_LABELS,
    TERM_NAMES,
    BasisDictionary,
    DesignSamples,
    SymbolicModel,
    evaluate_symbolic,
    render_expression,
    ridge_fit,
    sample_network,
    simplify,
    term_report,
)
from propagate.dynamics import OUTPUT_CLAMP, UDE_SPEC
from propagate.integrate import Trajectory
from propagate.neuralnet import param_count

# the five-term closed form recovered on the original scan data
REFERENCE_COEFFS = {
    "m/(1+m)": -2608.692,
    "log(1+m)": -2459.9124,
    "m": -2113.3055,
    "m^2": 1366.5024,
    "m*log(1+m)": 831.707,
}


def _samples(m, y):
    return DesignSamples(m=np.asarray(m, dtype=float),
                         y=np.asarray(y, dtype=float))


def _random_samples(rng, n=60, hi=4.0):
    m = rng.uniform(0.0, hi, size=n)
    y = rng.normal(size=n)
    return _samples(m, y)


class TestDictionary:
    def test_canonical_term_order(self):
        assert TERM_NAMES == (
            "m", "m^2", "m^3", "log(1+m)", "log(1+m)^2", "m*log(1+m)",
            "m/(1+m)", "m^2/(1+m)", "m/(1+m)^2", "sqrt(m)")
        assert len(BasisDictionary()) == 10

    def test_design_matrix_columns(self):
        m = np.array([0.0, 0.5, 1.0, 3.0])
        X = BasisDictionary().design_matrix(m)
        assert X.shape == (4, 10)
        lg = np.log1p(m)
        expected = np.column_stack([
            m, m**2, m**3, lg, lg**2, m * lg,
            m / (1 + m), m**2 / (1 + m), m / (1 + m) ** 2, np.sqrt(m),
        ])
        np.testing.assert_allclose(X, expected, rtol=1e-15)

    def test_all_terms_vanish_at_zero(self):
        X = BasisDictionary().design_matrix(np.array([0.0, 0.0]))
        np.testing.assert_array_equal(X, np.zeros((2, 10)))

    def test_rejects_unknown_and_duplicate_terms(self):
        with pytest.raises(ValueError):
            BasisDictionary(("m", "tan(m)"))
        with pytest.raises(ValueError):
            BasisDictionary(("m", "m"))

    def test_subset_dictionary(self):
        d = BasisDictionary(("sqrt(m)", "m"))
        X = d.design_matrix(np.array([4.0]))
        np.testing.assert_allclose(X, [[2.0, 4.0]])


class TestRidgeFit:
    def test_single_term_hand_oracle(self):
        # X'X = 6*1 + 5*4 = 26, X'y = 26, so w = 26 / (26 + 1)
        s = _samples([1.0] * 6 + [2.0] * 5, [1.0] * 6 + [2.0] * 5)
        model = ridge_fit(s, BasisDictionary(("m",)), lam=1.0)
        assert model.coefficients["m"] == pytest.approx(26.0 / 27.0, rel=1e-12)
        assert model.lam == 1.0
        assert model.domain == (1.0, 2.0)

    def test_matches_augmented_least_squares(self):
        # independent algorithm: ridge == lstsq on [X; sqrt(lam) I]
        rng = np.random.default_rng(0)
        for trial in range(100):
            n = int(rng.integers(11, 200))
            s = _random_samples(rng, n=n, hi=float(rng.uniform(0.5, 5.0)))
            lam = float(rng.uniform(1e-3, 10.0))
            d = BasisDictionary()
            model = ridge_fit(s, d, lam=lam)
            X = d.design_matrix(s.m)
            Xa = np.vstack([X, math.sqrt(lam) * np.eye(10)])
            ya = np.concatenate([s.y, np.zeros(10)])
            ref, *_ = np.linalg.lstsq(Xa, ya, rcond=None)
            got = np.array([model.coefficients[t] for t in TERM_NAMES])
            np.testing.assert_allclose(got, ref, rtol=1e-8, atol=1e-10)

    def test_normal_equation_stationarity(self):
        rng = np.random.default_rng(7)
        s = _random_samples(rng)
        model = ridge_fit(s, lam=2.5)
        X = BasisDictionary().design_matrix(s.m)
        w = np.array([model.coefficients[t] for t in TERM_NAMES])
        grad = X.T @ (X @ w - s.y) + 2.5 * w
        assert np.max(np.abs(grad)) < 1e-8 * max(1.0, np.max(np.abs(X.T @ s.y)))

    def test_default_lambda_is_one(self):
        rng = np.random.default_rng(1)
        s = _random_samples(rng)
        assert ridge_fit(s).lam == 1.0

    def test_rmse_reported(self):
        rng = np.random.default_rng(2)
        s = _random_samples(rng)
        model = ridge_fit(s)
        X = BasisDictionary().design_matrix(s.m)
        w = np.array([model.coefficients[t] for t in TERM_NAMES])
        rmse = float(np.sqrt(np.mean((X @ w - s.y) ** 2)))
        assert model.fit_rmse == pytest.approx(rmse, rel=1e-12)

    def test_sample_count_and_distinctness_guards(self):
        with pytest.raises(ValueError):
            ridge_fit(_samples(np.linspace(0, 1, 10), np.zeros(10)))
        with pytest.raises(ValueError):
            ridge_fit(_samples(np.ones(15), np.ones(15)))
        with pytest.raises(ValueError):
            ridge_fit(_samples(np.linspace(0, 1, 12), np.zeros(11)))

    @given(st.integers(min_value=0, max_value=2**31 - 1),
           st.floats(min_value=1e-2, max_value=10.0))
    @settings(max_examples=30, deadline=None)
    def test_shrinkage_monotone_in_lambda(self, seed, lam):
        rng = np.random.default_rng(seed)
        s = _random_samples(rng, n=40)
        d = BasisDictionary(("m", "sqrt(m)"))
        lo = ridge_fit(s, d, lam=lam)
        hi = ridge_fit(s, d, lam=lam * 10.0)

        def norm(model):
            return sum(v * v for v in model.coefficients.values())

        assert norm(hi) <= norm(lo) + 1e-12


class TestSimplify:
    def test_planted_three_term_recovery(self):
        rng = np.random.default_rng(3)
        planted = {"m": 2.0, "m^2": -1.5, "sqrt(m)": 4.0}
        m = rng.uniform(0.05, 3.0, size=80)
        X = BasisDictionary().design_matrix(m)
        w_true = np.array([planted.get(t, 0.0) for t in TERM_NAMES])
        s = _samples(m, X @ w_true)
        full = ridge_fit(s, lam=1e-10)
        model = simplify(full, s, k=3)
        assert set(model.coefficients) == set(planted)
        for name, val in planted.items():
            assert model.coefficients[name] == pytest.approx(val, rel=1e-5)

    def test_kept_terms_stay_in_dictionary_order(self):
        rng = np.random.default_rng(4)
        s = _random_samples(rng)
        model = simplify(ridge_fit(s), s, k=4)
        kept = list(model.coefficients)
        order = [TERM_NAMES.index(t) for t in kept]
        assert order == sorted(order)

    def test_full_k_is_identity(self):
        rng = np.random.default_rng(5)
        s = _random_samples(rng)
        full = ridge_fit(s, lam=0.7)
        again = simplify(full, s, k=10)
        assert list(again.coefficients) == list(full.coefficients)
        for name, val in full.coefficients.items():
            assert again.coefficients[name] == pytest.approx(val, rel=1e-12)
        assert again.fit_rmse == pytest.approx(full.fit_rmse, rel=1e-12)

    def test_k_zero_scores_the_zero_model(self):
        rng = np.random.default_rng(6)
        s = _random_samples(rng)
        model = simplify(ridge_fit(s), s, k=0)
        assert model.coefficients == {}
        assert model.fit_rmse == pytest.approx(
            float(np.sqrt(np.mean(s.y ** 2))), rel=1e-12)

    def test_k_too_large_raises(self):
        rng = np.random.default_rng(8)
        s = _random_samples(rng)
        with pytest.raises(ValueError):
            simplify(ridge_fit(s), s, k=11)

    def test_rmse_never_improves_with_fewer_terms(self):
        rng = np.random.default_rng(9)
        s = _random_samples(rng)
        full = ridge_fit(s, lam=1.0)
        errs = [simplify(full, s, k=k).fit_rmse for k in (2, 5, 10)]
        # pruning a refit can only lose representational power
        assert errs[0] >= errs[1] - 1e-9
        assert errs[1] >= errs[2] - 1e-9


class TestEvaluateSymbolic:
    def test_reference_expression_endpoints(self):
        model = SymbolicModel(coefficients=dict(REFERENCE_COEFFS), lam=1.0,
                              fit_rmse=0.0, domain=(0.0, 1.0))
        assert evaluate_symbolic(model, 0.0) == 0.0
        assert evaluate_symbolic(model, 1.0) == pytest.approx(-3179.74, abs=0.01)

    def test_scalar_vs_array(self):
        model = SymbolicModel(coefficients={"m": 2.0, "m^2": 1.0}, lam=1.0,
                              fit_rmse=0.0, domain=(0.0, 5.0))
        out = evaluate_symbolic(model, np.array([0.0, 1.0, 2.0]))
        np.testing.assert_allclose(out, [0.0, 3.0, 8.0])
        val = evaluate_symbolic(model, 3.0)
        assert isinstance(val, float)
        assert val == pytest.approx(15.0)

    def test_extrapolation_warns_interpolation_does_not(self):
        model = SymbolicModel(coefficients={"m": 1.0}, lam=1.0,
                              fit_rmse=0.0, domain=(0.0, 1.0))
        with pytest.warns(UserWarning, match="outside fitted domain"):
            evaluate_symbolic(model, 2.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            evaluate_symbolic(model, np.array([0.0, 0.5, 1.0]))

    def test_unknown_coefficient_rejected_at_construction(self):
        with pytest.raises(ValueError):
            SymbolicModel(coefficients={"exp(m)": 1.0}, lam=1.0, fit_rmse=0.0)


class TestSampleNetwork:
    def _linear_net(self, slope, intercept):
        # relu passthrough on the first hidden unit: y = slope*m + intercept
        p = np.zeros(param_count(UDE_SPEC))
        p[0] = 1.0
        p[20] = slope
        p[30] = intercept
        return p

    def test_values_and_order(self):
        p = self._linear_net(3.0, 0.5)
        traj = Trajectory(t=np.array([0.0, 1.0, 2.0]),
                          M=np.array([0.0, 50.0, 200.0]))
        s = sample_network(p, traj, max_eta=100.0)
        np.testing.assert_allclose(s.m, [0.0, 0.5, 2.0])
        np.testing.assert_allclose(s.y, [0.5, 2.0, 6.5])

    def test_state_clamp_to_five_max_eta(self):
        p = self._linear_net(1.0, 0.0)
        traj = Trajectory(t=np.array([0.0, 1.0]),
                          M=np.array([-10.0, 1e9]))
        s = sample_network(p, traj, max_eta=100.0)
        np.testing.assert_allclose(s.m, [0.0, 5.0])

    def test_output_clamp_mirrors_dynamics(self):
        p = self._linear_net(0.0, 1e9)
        traj = Trajectory(t=np.array([0.0, 1.0]), M=np.array([1.0, 2.0]))
        s = sample_network(p, traj, max_eta=1.0)
        np.testing.assert_array_equal(s.y, [OUTPUT_CLAMP, OUTPUT_CLAMP])
        p[30] = -1e9
        s = sample_network(p, traj, max_eta=1.0)
        np.testing.assert_array_equal(s.y, [-OUTPUT_CLAMP, -OUTPUT_CLAMP])

    def test_input_validation(self):
        p = self._linear_net(1.0, 0.0)
        empty = Trajectory(t=np.array([]), M=np.array([]))
        with pytest.raises(ValueError):
            sample_network(p, empty, max_eta=1.0)
        traj = Trajectory(t=np.array([0.0]), M=np.array([1.0]))
        with pytest.raises(ValueError):
            sample_network(p, traj, max_eta=0.0)

    def test_round_trip_through_ridge(self):
        # a network that IS a dictionary element comes back as that element
        p = self._linear_net(-4.0, 0.0)
        t = np.linspace(0.0, 1.0, 40)
        traj = Trajectory(t=t, M=100.0 * np.linspace(0.0, 3.0, 40))
        s = sample_network(p, traj, max_eta=100.0)
        model = simplify(ridge_fit(s, lam=1e-10), s, k=1)
        assert list(model.coefficients) == ["m"]
        assert model.coefficients["m"] == pytest.approx(-4.0, rel=1e-6)


class TestTermReport:
    def test_sign_classes_and_mechanisms(self):
        model = SymbolicModel(coefficients=dict(REFERENCE_COEFFS), lam=1.0,
                              fit_rmse=0.0, domain=(0.0, 1.0))
        rows = {r.term: r for r in term_report(model)}
        assert rows["m/(1+m)"].sign_class == "suppressing"
        assert rows["m/(1+m)"].mechanism == "network saturation"
        assert rows["log(1+m)"].mechanism == "address-space exhaustion"
        assert rows["m"].mechanism == "security response"
        assert rows["m^2"].sign_class == "amplifying"
        assert rows["m^2"].mechanism == "peer-to-peer propagation"
        assert rows["m*log(1+m)"].mechanism == "variant evolution"

    def test_unmapped_terms_labeled(self):
        model = SymbolicModel(coefficients={"sqrt(m)": -1.0}, lam=1.0,
                              fit_rmse=0.0)
        (row,) = term_report(model)
        assert row.mechanism == "unmapped"

    def test_zero_coefficients_omitted(self):
        model = SymbolicModel(coefficients={"m": 0.0, "m^2": 1.0}, lam=1.0,
                              fit_rmse=0.0)
        assert [r.term for r in term_report(model)] == ["m^2"]

    def test_empty_model_raises(self):
        model = SymbolicModel(coefficients={}, lam=1.0, fit_rmse=0.0)
        with pytest.raises(ValueError):
            term_report(model)

    def test_mechanism_table_is_the_published_one(self):
        assert MECHANISM_LABELS == {
            "m/(1+m)": "network saturation",
            "log(1+m)": "address-space exhaustion",
            "m": "security response",
            "m^2": "peer-to-peer propagation",
            "m*log(1+m)": "variant evolution",
        }


class TestRenderExpression:
    def test_signs_and_precision(self):
        model = SymbolicModel(
            coefficients={"m": -2113.3055, "m^2": 1366.5024}, lam=1.0,
            fit_rmse=0.0)
        assert render_expression(model) == "g(m) = -2113.31*m + 1366.5*m^2"

    def test_leading_positive_has_no_sign(self):
        model = SymbolicModel(coefficients={"m": 2.0, "sqrt(m)": -3.0},
                              lam=1.0, fit_rmse=0.0)
        assert render_expression(model) == "g(m) = 2*m - 3*sqrt(m)"

    def test_empty_and_all_zero_render_as_zero(self):
        assert render_expression(
            SymbolicModel(coefficients={}, lam=1.0, fit_rmse=0.0)) == "g(m) = 0"
        assert render_expression(
            SymbolicModel(coefficients={"m": 0.0}, lam=1.0,
                          fit_rmse=0.0)) == "g(m) = 0"

    def test_variable_renaming(self):
        model = SymbolicModel(coefficients={"m*log(1+m)": 1.0}, lam=1.0,
                              fit_rmse=0.0)
        assert render_expression(model, var="u") == "g(u) = 1*u*log(1+u)"
