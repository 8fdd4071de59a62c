import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levymalliavin.canonical_path import add_jump
from levymalliavin.catalog import cylindrical_functionals, functionals
from levymalliavin.functionals import (Constant, UnsupportedOperation, brownian_at,
                                       brownian_derivative, cos_jump_sum, jump_sum, jump_sum_sq,
                                       left_limit_eval, malliavin_D, malliavin_D2,
                                       product_rule_ulps, psi, psi_product_check, sin_WT)

from .conftest import make_block


def test_psi_of_jump_sum_is_one(block):
    assert np.array_equal(psi(jump_sum(1.0), block, 0.4, 0.5), np.ones(block.n))
    assert np.array_equal(psi(jump_sum(0.3), block, 0.4, 0.5), np.zeros(block.n))


def test_psi_of_square_jump_sum(block):
    S = jump_sum(1.0).evaluate(block)
    got = psi(jump_sum_sq(1.0), block, 0.2, -0.5)
    np.testing.assert_allclose(got, ((S - 0.5) ** 2 - S ** 2) / -0.5, rtol=0, atol=1e-13)


def test_psi_is_blind_to_brownian_only_functionals(block):
    assert np.array_equal(psi(sin_WT(1.0), block, 0.5, 0.5), np.zeros(block.n))


def test_diffusion_slice_is_scaled_gradient(block):
    from levymalliavin.levy_model import DiscreteMeasure, LevyModel
    model = LevyModel(0.0, 2.0, DiscreteMeasure(()), 1.0)
    d = malliavin_D(sin_WT(1.0), block, 0.3, 0.0, model)
    np.testing.assert_allclose(d, np.cos(block.brownian[:, -1]) / 2.0)


def test_sigma_zero_refuses_slice(block):
    from levymalliavin.levy_model import DiscreteMeasure, LevyModel
    model = LevyModel(0.0, 0.0, DiscreteMeasure(((0.5, 1.0),)), 1.0)
    with pytest.raises(ValueError):
        malliavin_D(sin_WT(1.0), block, 0.3, 0.0, model)


def test_analytic_and_finite_difference_gradients_agree(two_atom):
    model, part = two_atom
    p = make_block(model, part, n=50, M=128)
    for name, F in cylindrical_functionals(model).items():
        for t in (0.1, 0.33, 0.8, 1.0):
            a = np.asarray(brownian_derivative(F, p, t, "analytic"))
            f = np.asarray(brownian_derivative(F, p, t, "fd"))
            np.testing.assert_allclose(a, f, rtol=1e-6, atol=1e-9, err_msg=name)


def test_adapted_functional_has_no_future_derivative(two_atom):
    model, part = two_atom
    p = make_block(model, part, n=50)
    F = brownian_at(0.5) * jump_sum(0.5)
    for t in (0.51, 0.75, 1.0):
        assert np.array_equal(psi(F, p, t, 0.5), np.zeros(p.n))
        assert np.array_equal(brownian_derivative(F, p, t), np.zeros(p.n))


def test_missing_gradient_raises(block):
    from levymalliavin.functionals import LambdaFunctional
    F = LambdaFunctional(lambda p: p.brownian[:, -1] ** 3)
    with pytest.raises(UnsupportedOperation):
        F.gradient(block, 0.5)
    fd = brownian_derivative(F, block, 0.5, mode="auto")
    np.testing.assert_allclose(fd, 3 * block.brownian[:, -1] ** 2, rtol=1e-6, atol=1e-8)


def test_second_jump_derivative_of_square(two_atom, block):
    model, _ = two_atom
    d2 = malliavin_D2(jump_sum_sq(1.0), block, (0.2, 0.5), (0.7, -0.5), model)
    np.testing.assert_allclose(d2, 2.0, atol=1e-12)


def test_mixed_second_derivative(two_atom, block):
    model, _ = two_atom
    F = sin_WT(1.0) * cos_jump_sum(1.0)
    got = malliavin_D2(F, block, (0.3, 0.0), (0.6, 0.5), model)
    S = jump_sum(1.0).evaluate(block)
    want = np.cos(block.brownian[:, -1]) * (np.cos(S + 0.5) - np.cos(S)) / 0.5
    np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-8)


def test_left_limit_excludes_jump_at_time(block):
    p = add_jump(block, 0.45, 0.5)
    right = p.jump_sum(0.45)
    left = left_limit_eval(jump_sum(1.0), p, 0.45)
    np.testing.assert_allclose(right - np.asarray(left), 0.5)


@given(st.integers(0, 9), st.integers(0, 9), st.integers(0, 39), st.floats(1e-6, 1.0),
       st.sampled_from([0.5, -0.5, 1.25, -3.0]))
@settings(max_examples=150, deadline=None)
def test_product_rule_within_four_ulps(i, j, row, t, x):
    from levymalliavin.levy_model import DiscreteMeasure, LevyModel, shell_partition
    model = LevyModel(0.0, 1.0, DiscreteMeasure(((0.5, 1.0), (-0.5, 1.0))), 1.0)
    part = shell_partition(model, 3)
    cat = functionals(model, part)
    names = sorted(cat)
    p = make_block(model, part, n=40, M=32, seed=5).row(row).batch()
    F, G = cat[names[i]], cat[names[j]]
    assert float(np.max(product_rule_ulps(F, G, p, t, x))) <= 4.0
    lhs, rhs = psi_product_check(F, G, p, t, x)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_constant_has_zero_derivatives(block):
    c = Constant(3.0)
    assert np.array_equal(psi(c, block, 0.5, 0.5), np.zeros(block.n))
    assert np.array_equal(c.gradient(block, 0.5), np.zeros(block.n))
