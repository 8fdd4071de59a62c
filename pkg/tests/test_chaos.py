import numpy as np
import pytest

from levymalliavin.anticipating import SimpleRandomField, box_indicator, skorohod_simple
from levymalliavin.catalog import kernels
from levymalliavin.chaos import (ChaosField, ChaosFunctional, ElementaryKernel, isometry_check,
                                 isometry_value, multiple_integral, skorohod_chaos)
from levymalliavin.functionals import Constant
from levymalliavin.levy_model import Box, ValueSet

from .conftest import assert_mc, make_block


def test_first_order_slice_integral_is_scaled_brownian(block, two_atom):
    model, part = two_atom
    k = ElementaryKernel.indicator(Box(0.0, 0.5, ValueSet.origin()))
    got = multiple_integral(block, k, model, part)
    np.testing.assert_allclose(got, model.sigma * block.brownian_at(0.5), atol=1e-14)


def test_first_order_jump_integral_is_compensated_sum(block, two_atom):
    model, part = two_atom
    box = Box(0.25, 0.875, ValueSet.abs_between(0.25))
    got = multiple_integral(block, ElementaryKernel.indicator(box), model, part)
    t, x = block.jump_times, block.jump_sizes
    inside = np.isfinite(t) & (t > 0.25) & (t <= 0.875)
    # symmetric atoms: the compensator vanishes
    np.testing.assert_allclose(got, np.where(inside, x, 0.0).sum(axis=1), atol=1e-14)


def test_isometry_closed_forms(two_atom):
    model, part = two_atom
    ks = kernels(model, part)
    assert isometry_value(ks["const"], ks["const"], model, part) == pytest.approx(2.25)
    assert isometry_value(ks["o1_slice"], ks["o1_slice"], model, part) == pytest.approx(0.5)
    # 0.625 in time, x^2 lambda = 0.25 + 0.25
    assert isometry_value(ks["o1_jump"], ks["o1_jump"], model, part) == pytest.approx(0.3125)
    # 2! * (1/2) * mu(A) mu(B) for disjoint A, B
    assert isometry_value(ks["o2_pair"], ks["o2_pair"], model, part) == pytest.approx(0.125)
    assert isometry_value(ks["o1_slice"], ks["o2_pair"], model, part) == 0.0


def test_isometry_monte_carlo(two_atom):
    from levymalliavin.canonical_path import PathEnsemble, uniform_grid
    model, part = two_atom
    ens = PathEnsemble(model, part, uniform_grid(1.0, 64), 4000, seed=3)
    ks = kernels(model, part)
    for a, b in [("o1_mixed", "o1_mixed"), ("o2_mixed", "o2_mixed"), ("o1_jump", "o2_pair")]:
        est, exact, se = isometry_check(model, part, ks[a], ks[b], ens)
        assert_mc(est, se, exact, k=4.5)


def test_kernel_validation():
    with pytest.raises(ValueError):
        ElementaryKernel((Box(0.0, 0.5, ValueSet.origin()),), {(0, 1): 1.0})


def test_chaos_functional_gradient_matches_finite_difference(two_atom):
    from levymalliavin.functionals import brownian_derivative
    model, part = two_atom
    p = make_block(model, part, n=30, M=128)
    F = ChaosFunctional([kernels(model, part)["o2_mixed"]], model, part)
    for t in (0.125, 0.5, 0.875):
        np.testing.assert_allclose(brownian_derivative(F, p, t, "analytic"),
                                   brownian_derivative(F, p, t, "fd"), rtol=1e-6, atol=1e-8)


def test_chaos_delta_agrees_with_factorization(two_atom, block):
    model, part = two_atom
    ks = kernels(model, part)
    F = ChaosFunctional([ks["o1_slice"]], model, part)
    u = SimpleRandomField([(F, box_indicator(0.5, 1.0, ValueSet.everything()))])
    cmp = skorohod_simple(u, block, None, model, part, strategy="both")
    assert np.max(np.abs(cmp.difference)) < 1e-12


def test_skorohod_of_constant_field_is_first_order_integral(two_atom, block):
    model, part = two_atom
    box = Box(0.0, 1.0, ValueSet.everything())
    d = skorohod_chaos(block, ChaosField([(1.0, box, ElementaryKernel.constant(1.0))]), model, part)
    u = SimpleRandomField([(Constant(1.0), box_indicator(0.0, 1.0, ValueSet.everything()))])
    np.testing.assert_allclose(d, skorohod_simple(u, block, None, model, part), atol=1e-13)
