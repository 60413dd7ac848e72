import numpy as np
import pytest

from propagate import FitFailureError, TrainConfig, fit, loss_and_grad, mse_loss, simulate_trajectory
from propagate import autodiff as ad
from propagate import train
from propagate.dynamics import context_from_series
from propagate._kernels import SENTINEL_LOSS


class TestLbfgs:
    def test_quadratic_converges_in_few_iterations(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=50)
        res = train.lbfgs_minimize(lambda x: (0.5 * np.sum((x - a) ** 2), x - a),
                                   np.zeros(50), max_iters=10)
        assert np.linalg.norm(res.x - a) < 1e-8
        assert res.made_progress

    def test_rosenbrock(self):
        def rosen(x):
            f = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
            g = np.array([
                -2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
                200 * (x[1] - x[0] ** 2),
            ])
            return f, g

        res = train.lbfgs_minimize(rosen, np.array([-1.2, 1.0]), max_iters=200)
        assert res.f < 1e-6

    def test_moderately_ill_conditioned_quadratic(self):
        # condition number 1e2; at 1e4 even scipy's L-BFGS-B is only at
        # ~6e-4 after 200 iterations, so that is no correctness bar
        scales = np.logspace(0, 2, 20)
        f_and_g = lambda x: (0.5 * np.sum(scales * x**2), scales * x)
        res = train.lbfgs_minimize(f_and_g, np.ones(20), max_iters=200)
        assert res.f < 1e-9

    def test_returns_best_ever_not_last(self):
        # a function optimizers can wander on: track that the reported f is
        # the minimum of everything the callback saw
        seen = []

        def f_and_g(x):
            return float(np.sum(x**4 - 2 * x**2)), 4 * x**3 - 4 * x

        res = train.lbfgs_minimize(f_and_g, np.array([2.0, -1.7]), max_iters=50,
                                   callback=lambda it, f, x: seen.append(f))
        assert res.f <= min(seen) + 1e-15

    def test_gradient_norm_stop(self):
        calls = []

        def f_and_g(x):
            calls.append(1)
            return 0.0, np.zeros(3)  # already optimal

        res = train.lbfgs_minimize(f_and_g, np.ones(3), max_iters=100)
        assert res.n_iters == 0
        assert not res.made_progress

    def test_callback_sees_initial_point_then_accepted(self):
        its = []
        train.lbfgs_minimize(lambda x: (float(x @ x), 2 * x), np.ones(4),
                             max_iters=5, callback=lambda it, f, x: its.append(it))
        assert its[0] == 0
        assert its[1:] == list(range(1, len(its)))

    def test_sentinel_start_fails_gracefully(self):
        def f_and_g(x):
            return SENTINEL_LOSS, np.full(2, np.nan)

        res = train.lbfgs_minimize(f_and_g, np.zeros(2), max_iters=10)
        assert not res.made_progress
        assert res.f == SENTINEL_LOSS


class TestAdam:
    def test_first_step_reference_value(self):
        state = train.AdamState.zeros(1)
        x, accepted = train.adam_step(np.array([1.0]), np.array([1.0]), state, lr=5e-4)
        assert accepted
        assert abs(x[0] - 0.9995) < 1e-6

    def test_converges_on_quadratic(self):
        x = np.array([3.0])
        state = train.AdamState.zeros(1)
        for _ in range(4000):
            x, _ = train.adam_step(x, x.copy(), state, lr=0.01)
        assert abs(x[0]) < 1e-3

    def test_nan_gradient_rejected_and_counted(self):
        state = train.AdamState.zeros(2)
        x0 = np.array([1.0, 2.0])
        x, accepted = train.adam_step(x0, np.array([np.nan, 0.0]), state, lr=0.1)
        assert not accepted
        assert state.rejections == 1
        np.testing.assert_array_equal(x, x0)
        # moment state must not absorb the rejected gradient
        assert state.t == 0
        np.testing.assert_array_equal(state.m, 0.0)

    def test_bias_correction_scales_early_steps(self):
        # with bias correction the first two steps have near-equal size for a
        # constant gradient; without it the first would be 10x smaller
        state = train.AdamState.zeros(1)
        x0 = np.array([0.0])
        x1, _ = train.adam_step(x0, np.array([1.0]), state, lr=1e-3)
        x2, _ = train.adam_step(x1, np.array([1.0]), state, lr=1e-3)
        s1 = abs(x1[0] - x0[0])
        s2 = abs(x2[0] - x1[0])
        assert 0.5 < s1 / s2 < 2.0


class TestLossApi:
    def test_loss_includes_first_grid_point(self, small_series, quick_cfg):
        x = train.initial_params("ode", quick_cfg)
        loss = mse_loss("ode", x, small_series, quick_cfg)
        traj = simulate_trajectory("ode", x, small_series.t,
                                   context_from_series(small_series), quick_cfg)
        resid = traj.M - small_series.smoothed
        assert loss == pytest.approx(np.mean(resid**2), rel=1e-12)
        assert len(traj.M) == len(small_series.t)  # i = 0 included

    def test_zero_prediction_closed_form(self, small_series):
        # a constant-zero trajectory scores mean of the squared signal
        target = np.asarray(small_series.smoothed)
        resid = np.zeros_like(target) - target
        assert np.mean(resid**2) == pytest.approx(np.mean(target**2))

    def test_loss_and_grad_matches_mse_loss(self, small_series, quick_cfg):
        x = train.initial_params("ude", quick_cfg)
        f, g = loss_and_grad("ude", x, small_series, quick_cfg)
        assert f == pytest.approx(mse_loss("ude", x, small_series, quick_cfg), rel=1e-15)
        assert g.shape == x.shape

    def test_var_path_runs_adjoint_through_tape(self, small_series, quick_cfg):
        x = train.initial_params("ude", quick_cfg)
        _, g_direct = loss_and_grad("ude", x, small_series, quick_cfg)
        v = ad.Var(x)
        out = mse_loss("ude", v, small_series, quick_cfg)
        ad.backward(out)
        np.testing.assert_allclose(v.grad, g_direct, rtol=1e-13)
        assert float(ad.value_of(out)) == pytest.approx(
            mse_loss("ude", x, small_series, quick_cfg), rel=1e-15)

    def test_sentinel_on_divergence(self, small_series, quick_cfg):
        x = np.array([1e120, 0.0, 0.0, 1e5, 0.0])
        assert mse_loss("ode", x, small_series, quick_cfg) == SENTINEL_LOSS

    def test_wrong_length_rejected(self, small_series, quick_cfg):
        with pytest.raises(ValueError):
            mse_loss("ude", np.zeros(5), small_series, quick_cfg)


class TestSimulate:
    def test_matches_fit_trajectory(self, small_series, quick_cfg):
        res = fit("ode", small_series, quick_cfg)
        traj = simulate_trajectory("ode", res.params, small_series.t,
                                   context_from_series(small_series), quick_cfg)
        np.testing.assert_array_equal(traj.M, res.trajectory.M)

    def test_extends_beyond_training_grid(self, series, small_series, quick_cfg):
        ctx = context_from_series(small_series)
        x = train.initial_params("ode", quick_cfg)
        traj = simulate_trajectory("ode", x, series.t, ctx, quick_cfg)
        assert len(traj.M) == len(series.t)
        assert np.all(np.isfinite(traj.M))


class TestFit:
    def test_initial_params_layout(self, quick_cfg):
        mech = train.initial_params("ode", quick_cfg)
        np.testing.assert_array_equal(mech, [0.0501, 1e-4, 0.005, 1e5, 0.48])
        ude = train.initial_params("ude", quick_cfg)
        assert ude.shape == (35,)
        np.testing.assert_array_equal(ude[:4], [0.0501, 1e-4, 1e5, 0.48])
        assert train.initial_params("node", quick_cfg).shape == (337,)

    def test_two_phase_trace_layout(self, small_series):
        cfg = TrainConfig(adam_iters=4, lbfgs_iters=3)
        res = fit("ude", small_series, cfg)
        adam_rows = [r for r in res.loss_trace if r[1] == "adam"]
        lbfgs_rows = [r for r in res.loss_trace if r[1] == "lbfgs"]
        assert [r[0] for r in adam_rows] == [0, 1, 2, 3]
        assert all(r[0] >= 4 for r in lbfgs_rows)
        idx = [r[0] for r in res.loss_trace]
        assert idx == sorted(idx)
        assert len(lbfgs_rows) <= 3

    def test_mechanistic_skips_adam(self, small_series):
        cfg = TrainConfig(adam_iters=50, lbfgs_iters=4)
        res = fit("ode", small_series, cfg)
        assert all(r[1] == "lbfgs" for r in res.loss_trace)
        assert res.loss_trace[0][0] == 0  # indices start at zero without Adam

    def test_final_loss_is_best_of_trace(self, small_series):
        cfg = TrainConfig(adam_iters=10, lbfgs_iters=10)
        res = fit("ude", small_series, cfg)
        assert res.final_loss <= min(r[2] for r in res.loss_trace) + 1e-15
        assert res.final_loss == pytest.approx(
            mse_loss("ude", res.params, small_series, cfg), rel=1e-12)

    def test_deterministic(self, small_series):
        cfg = TrainConfig(adam_iters=6, lbfgs_iters=6, seed=2)
        a = fit("ude", small_series, cfg)
        b = fit("ude", small_series, cfg)
        np.testing.assert_array_equal(a.params, b.params)
        assert a.loss_trace == b.loss_trace
        assert a.final_loss == b.final_loss

    def test_seed_changes_network_start(self, small_series):
        cfg_a = TrainConfig(adam_iters=2, lbfgs_iters=0, seed=0)
        cfg_b = TrainConfig(adam_iters=2, lbfgs_iters=0, seed=1)
        a = fit("ude", small_series, cfg_a)
        b = fit("ude", small_series, cfg_b)
        assert not np.array_equal(a.params, b.params)

    def test_improves_on_start(self, small_series):
        cfg = TrainConfig(adam_iters=30, lbfgs_iters=30)
        x0 = train.initial_params("ude", cfg)
        res = fit("ude", small_series, cfg)
        assert res.final_loss < mse_loss("ude", x0, small_series, cfg)

    def test_mechanistic_positivity_preserved(self, small_series):
        res = fit("ode", small_series, TrainConfig(lbfgs_iters=40))
        alpha0, beta, _, K, _ = res.params
        assert alpha0 > 0 and beta > 0 and K > 0

    def test_no_feedback_kappa_stays_zero(self, small_series):
        res = fit("ode_no_feedback", small_series, TrainConfig(lbfgs_iters=10))
        assert res.params[2] == 0.0

    def test_explicit_x0_respected(self, small_series, quick_cfg):
        x0 = train.initial_params("ude", quick_cfg)
        x0[4:] = 0.0  # silence the network at the start
        res = fit("ude", small_series, TrainConfig(adam_iters=0, lbfgs_iters=0), x0=x0)
        np.testing.assert_array_equal(res.params, x0)

    def test_failure_carries_trace(self, small_series):
        # a start whose trajectory overflows, with no budget to escape it
        x0 = np.array([1e120, 1e-4, 0.005, 1e5, 0.48])
        with pytest.raises(FitFailureError) as err:
            fit("ode", small_series, TrainConfig(adam_iters=0, lbfgs_iters=0), x0=x0)
        assert err.value.loss_trace is not None

    def test_failure_even_with_lbfgs_budget(self, small_series):
        # sentinel loss plus NaN gradient: the line search can never accept
        x0 = np.array([1e120, 1e-4, 0.005, 1e5, 0.48])
        with pytest.raises(FitFailureError):
            fit("ode", small_series, TrainConfig(adam_iters=0, lbfgs_iters=5), x0=x0)

    def test_rejects_unknown_kind(self, small_series, quick_cfg):
        with pytest.raises(ValueError):
            fit("sir", small_series, quick_cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(adam_iters=-1)
        with pytest.raises(ValueError):
            TrainConfig(adam_lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(lbfgs_memory=0)
        with pytest.raises(ValueError):
            TrainConfig(substeps_per_interval=0)
