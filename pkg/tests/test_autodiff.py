import numpy as np
import pytest

from propagate import GradientError
from propagate import autodiff as ad


def fd_grad(f, x, h=1e-6):
    """Central-difference gradient of a scalar function of one array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        step = h * max(1.0, abs(flat[i]))
        xp = flat.copy(); xp[i] += step
        xm = flat.copy(); xm[i] -= step
        gf[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * step)
    return g


def check_grad(build, x0, rtol=1e-6, atol=1e-9):
    """build(Var) -> scalar Var; compares backward() against central FD."""
    v = ad.Var(np.asarray(x0, dtype=np.float64))
    out = build(v)
    ad.backward(out)
    numeric = fd_grad(lambda x: float(ad.value_of(build(ad.Var(x)))), x0)
    np.testing.assert_allclose(v.grad, numeric, rtol=rtol, atol=atol)


class TestElementwiseGradients:
    x = np.array([0.3, -1.7, 2.2, 0.9])

    def test_add_mul_chain(self):
        check_grad(lambda v: ad.sum_(ad.mul(ad.add(v, 2.0), v)), self.x)

    def test_sub_div(self):
        check_grad(lambda v: ad.sum_(ad.div(ad.sub(v, 0.5), ad.add(ad.square(v), 1.0))), self.x)

    def test_neg(self):
        check_grad(lambda v: ad.sum_(ad.neg(v)), self.x)

    def test_exp_log_on_positive(self):
        x = np.array([0.5, 1.5, 3.0])
        check_grad(lambda v: ad.sum_(ad.exp(ad.log(v))), x)

    def test_log1p_sqrt_square(self):
        x = np.array([0.25, 1.0, 4.0])
        check_grad(lambda v: ad.sum_(ad.add(ad.log1p(v), ad.mul(ad.sqrt(v), ad.square(v)))), x)

    def test_relu_away_from_kink(self):
        check_grad(lambda v: ad.sum_(ad.relu(v)), self.x)

    def test_abs_away_from_origin(self):
        check_grad(lambda v: ad.sum_(ad.abs_(v)), self.x)

    def test_clamp_interior_and_exterior(self):
        x = np.array([-5.0, -0.4, 0.2, 7.0])
        check_grad(lambda v: ad.sum_(ad.clamp(v, -1.0, 1.0)), x)

    def test_dot(self):
        w = np.array([2.0, -3.0, 0.5, 1.0])
        check_grad(lambda v: ad.dot(v, ad.Var(w)), self.x)

    def test_mean(self):
        check_grad(lambda v: ad.mean(ad.square(v)), self.x)


class TestSubgradientConventions:
    def test_relu_zero_at_kink(self):
        v = ad.Var(np.array([0.0, -1.0, 2.0]))
        out = ad.sum_(ad.relu(v))
        ad.backward(out)
        np.testing.assert_array_equal(v.grad, [0.0, 0.0, 1.0])

    def test_clamp_zero_at_edges_and_outside(self):
        v = ad.Var(np.array([-2.0, -1.0, 0.0, 1.0, 2.0]))
        out = ad.sum_(ad.clamp(v, -1.0, 1.0))
        ad.backward(out)
        np.testing.assert_array_equal(v.grad, [0.0, 0.0, 1.0, 0.0, 0.0])

    def test_abs_sign_convention_zero_at_origin(self):
        v = ad.Var(np.array([-3.0, 0.0, 3.0]))
        out = ad.sum_(ad.abs_(v))
        ad.backward(out)
        np.testing.assert_array_equal(v.grad, [-1.0, 0.0, 1.0])

    def test_floor_zero_matches_relu(self):
        v = ad.Var(np.array([-1.0, 0.0, 2.0]))
        out = ad.sum_(ad.floor_zero(v))
        ad.backward(out)
        np.testing.assert_array_equal(v.grad, [0.0, 0.0, 1.0])


class TestStructuralOps:
    def test_matvec_gradients(self):
        A0 = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        x0 = np.array([0.7, -1.3])
        w = np.array([1.0, -2.0, 0.5])

        A = ad.Var(A0)
        x = ad.Var(x0)
        out = ad.dot(ad.Var(w), ad.matvec(A, x))
        ad.backward(out)
        np.testing.assert_allclose(x.grad, A0.T @ w)
        np.testing.assert_allclose(A.grad, np.outer(w, x0))

    def test_getitem_scatter_accumulates(self):
        v = ad.Var(np.array([1.0, 2.0, 3.0]))
        # index 1 used twice; its gradient contributions must add
        out = ad.add(ad.getitem(v, 1), ad.add(ad.getitem(v, 1), ad.getitem(v, 0)))
        ad.backward(out)
        np.testing.assert_array_equal(v.grad, [1.0, 2.0, 0.0])

    def test_slice_getitem(self):
        v = ad.Var(np.arange(5, dtype=np.float64))
        out = ad.sum_(ad.square(v[1:4]))
        ad.backward(out)
        np.testing.assert_array_equal(v.grad, [0.0, 2.0, 4.0, 6.0, 0.0])

    def test_reshape_round_trip(self):
        v = ad.Var(np.arange(6, dtype=np.float64))
        out = ad.sum_(ad.square(ad.reshape(v, (2, 3))))
        ad.backward(out)
        np.testing.assert_array_equal(v.grad, 2.0 * np.arange(6))

    def test_concat_splits_gradient(self):
        a = ad.Var(np.array([1.0, 2.0]))
        b = ad.Var(np.array([3.0]))
        out = ad.dot(ad.concat([a, b]), ad.Var(np.array([1.0, 10.0, 100.0])))
        ad.backward(out)
        np.testing.assert_array_equal(a.grad, [1.0, 10.0])
        np.testing.assert_array_equal(b.grad, [100.0])

    def test_broadcast_unbroadcast(self):
        a = ad.Var(np.array([[1.0, 2.0], [3.0, 4.0]]))
        b = ad.Var(np.array([10.0, 20.0]))  # broadcast across rows
        out = ad.sum_(ad.mul(a, b))
        ad.backward(out)
        np.testing.assert_array_equal(a.grad, [[10.0, 20.0], [10.0, 20.0]])
        np.testing.assert_array_equal(b.grad, [4.0, 6.0])

    def test_scalar_constant_operands(self):
        v = ad.Var(np.array([1.0, 2.0]))
        out = ad.sum_(ad.mul(3.0, ad.add(v, 1.0)))
        ad.backward(out)
        np.testing.assert_array_equal(v.grad, [3.0, 3.0])


class TestTapeMechanics:
    def test_diamond_reuse_accumulates_once_per_path(self):
        v = ad.Var(np.array(2.0))
        a = ad.mul(v, v)        # v^2
        out = ad.add(a, a)      # 2 v^2 -> d/dv = 4v = 8
        ad.backward(out)
        assert float(v.grad) == 8.0

    def test_deep_chain_no_recursion_limit(self):
        v = ad.Var(np.array(1.0))
        cur = v
        for _ in range(5000):
            cur = ad.add(cur, 1.0)
        ad.backward(cur)
        assert float(v.grad) == 1.0

    def test_backward_requires_scalar(self):
        v = ad.Var(np.array([1.0, 2.0]))
        with pytest.raises(GradientError):
            ad.backward(ad.square(v))

    def test_nonfinite_value_rejected_at_construction(self):
        with pytest.raises(GradientError):
            ad.Var(np.array([1.0, np.nan]))

    def test_nonfinite_gradient_contribution_rejected(self):
        v = ad.Var(np.array(0.0))
        out = ad.log(ad.abs_(ad.add(v, 1e-320)))
        with pytest.raises(GradientError):
            ad.backward(out)

    def test_grad_resets_between_backwards(self):
        v = ad.Var(np.array(3.0))
        out = ad.mul(v, v)
        ad.backward(out)
        first = float(v.grad)
        out2 = ad.mul(v, v)
        ad.backward(out2)
        assert float(v.grad) == first  # fresh pass, not accumulated across tapes

    def test_operator_sugar_matches_functions(self):
        v = ad.Var(np.array([1.0, 4.0]))
        out = ad.sum_((v * 2.0 + 1.0 - v) / 3.0)
        ad.backward(out)
        np.testing.assert_allclose(v.grad, [1.0 / 3.0, 1.0 / 3.0])


class TestCustomOp:
    def test_custom_vjp_invoked(self):
        x = ad.Var(np.array([1.0, 2.0]))
        y = x.value * 3.0
        out = ad.custom(y.sum(), [x], [lambda g: 3.0 * np.ones(2) * g], name="triplesum")
        ad.backward(out)
        np.testing.assert_array_equal(x.grad, [3.0, 3.0])

    def test_custom_validates_arity(self):
        x = ad.Var(np.array(1.0))
        with pytest.raises(ValueError):
            ad.custom(np.array(1.0), [x], [])

    def test_custom_requires_var_parents(self):
        with pytest.raises(ValueError):
            ad.custom(np.array(1.0), [np.array(1.0)], [lambda g: g])
