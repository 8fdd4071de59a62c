import numpy as np
import pytest

from levymalliavin.anticipating import (AdaptedField, SimpleRandomField, box_indicator, d_minus,
                                        energy_bound_check, pathwise_skorohod_bridge, seminorms,
                                        skorohod_simple, slice_indicator)
from levymalliavin.canonical_path import PathEnsemble, uniform_grid
from levymalliavin.catalog import bridge_fields, fields
from levymalliavin.chaos import mc_mean
from levymalliavin.functionals import (Constant, JumpSumProcess, UnsupportedOperation,
                                       brownian_at, cos_jump_sum)
from levymalliavin.levy_model import ValueSet

from .conftest import assert_mc


@pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
def test_delta_of_terminal_brownian_closed_form(two_atom, block, t):
    model, part = two_atom
    u = SimpleRandomField([(brownian_at(1.0), slice_indicator(0.0, t))])
    d = skorohod_simple(u, block, t, model, part)
    closed = block.brownian[:, -1] * block.brownian_at(t) - t
    np.testing.assert_allclose(d, closed, atol=1e-13)


def test_factorization_depth_does_not_change_exact_cases(two_atom, block):
    model, part = two_atom
    u = fields(model, part)["cosS_jump"]
    a = skorohod_simple(u, block, None, model, part, depth=2)
    b = skorohod_simple(u, block, None, model, part, depth=4)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_delta_has_mean_zero(two_atom):
    model, part = two_atom
    ens = PathEnsemble(model, part, uniform_grid(1.0, 64), 4000, seed=21)
    for u in fields(model, part).values():
        vals = ens.map(lambda p: skorohod_simple(u, p, None, model, part))
        m, se = mc_mean(vals)
        assert_mc(m, se, 0.0, k=4.5, floor=1e-12)


def test_second_moment_of_terminal_brownian_field(two_atom):
    model, part = two_atom
    ens = PathEnsemble(model, part, uniform_grid(1.0, 64), 4000, seed=22)
    u = SimpleRandomField([(brownian_at(1.0), slice_indicator(0.0, 0.5))])
    vals = ens.map(lambda p: np.asarray(skorohod_simple(u, p, 0.5, model, part)) ** 2)
    m, se = mc_mean(vals)
    assert_mc(m, se, 0.5 + 0.25)


def test_energy_bound_holds(two_atom):
    model, part = two_atom
    ens = PathEnsemble(model, part, uniform_grid(1.0, 32), 1000, seed=23)
    rep = energy_bound_check(fields(model, part)["WT_slice"], model, part, ens)
    assert rep.holds
    # E int u^2 dmu = E[W_T^2] * T
    assert_mc(rep.seminorms.l2_mu, rep.seminorms.se_l2, 1.0, k=4.5)


def test_seminorms_of_deterministic_field_have_no_derivative_part(two_atom):
    model, part = two_atom
    ens = PathEnsemble(model, part, uniform_grid(1.0, 32), 50, seed=24)
    u = SimpleRandomField([(Constant(2.0), slice_indicator(0.0, 0.5))])
    rep = seminorms(u, model, part, ens)
    assert rep.l2_mu == pytest.approx(2.0)
    assert rep.delta1 == 0.0 and rep.delta2 == 0.0


def test_future_derivative_of_terminal_brownian_field(two_atom, block):
    model, part = two_atom
    u = SimpleRandomField([(brownian_at(1.0), slice_indicator(0.0, 1.0))])
    np.testing.assert_allclose(d_minus(u, block, 0.5, 0.0, model), 1.0)


def test_adapted_field_future_derivative_vanishes(two_atom, block):
    model, part = two_atom
    u = AdaptedField(np.cos, JumpSumProcess(), box_indicator(0.0, 1.0, ValueSet.everything()), 1.0)
    assert np.array_equal(d_minus(u, block, 0.5, 0.5, model, mode="adapted-zero"),
                          np.zeros(block.n))
    field = SimpleRandomField([(cos_jump_sum(1.0), slice_indicator(0.0, 1.0))])
    with pytest.raises(UnsupportedOperation):
        d_minus(field, block, 0.5, 0.5, model, mode="adapted-zero")


@pytest.mark.parametrize("name", ["deterministic", "jump_blind", "jump_anticipating"])
def test_bridge_is_pathwise_exact_for_simple_fields(two_atom, name):
    model, part = two_atom
    ens = PathEnsemble(model, part, uniform_grid(1.0, 32), 300, seed=25)
    rep = pathwise_skorohod_bridge(bridge_fields(model, part)[name], ens, model, part,
                                   ValueSet.abs_between(0.25, 1.0))
    assert np.max(np.abs(rep.residual)) < 1e-12
