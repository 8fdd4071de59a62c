import numpy as np
import pytest

from levymalliavin.canonical_path import PathEnsemble, uniform_grid
from levymalliavin.functionals import UnsupportedOperation
from levymalliavin.ito import (TEST_FUNCTIONS, YPath, build_Y_epsilon, coarsen, d_minus_Y,
                               epsilon_convergence_study, ito_ledger_finite_variation,
                               ito_ledger_general, refinement_study, spec_catalog)
from levymalliavin.levy_model import LevyModel, shell_partition, stable_like

from .conftest import make_block


def test_brownian_spec_reproduces_brownian_motion(brownian_only):
    model, part = brownian_only
    p = make_block(model, part, n=20)
    Y = YPath(spec_catalog("brownian", model), p, model, part).on_grid()
    np.testing.assert_allclose(Y[0], p.brownian, atol=1e-13)


@pytest.mark.parametrize("eps", [0.25, 0.5, 1.0])
def test_small_jump_process_is_compensated_sum(pure_jump, eps):
    model, part = pure_jump
    p = make_block(model, part, n=200)
    spec = spec_catalog("small-jump", model)
    for t in (0.3, 1.0):
        Y = build_Y_epsilon(spec, p, model, part, eps, t)[0]
        if eps >= 0.5:
            expected = np.zeros(p.n)
        else:
            # atoms +0.5 (rate 2) and -0.5 (rate 1): compensator 0.5 t
            live = np.isfinite(p.jump_times) & (p.jump_times <= t)
            expected = np.where(live, p.jump_sizes, 0.0).sum(axis=1) - 0.5 * t
        np.testing.assert_allclose(Y, expected, atol=1e-12)


def test_eps_below_floor_is_refused(pure_jump):
    model, part = pure_jump
    p = make_block(model, part, n=5)
    with pytest.raises(ValueError):
        YPath(spec_catalog("small-jump", model), p, model, part, eps=part.floor / 2)
    with pytest.raises(ValueError):
        YPath(spec_catalog("small-jump", model), p, model, part, eps=1.5)


def test_anticipating_process_matches_closed_form(two_atom, block):
    model, part = two_atom
    spec = spec_catalog("anticipating-wt", model)
    Yp = YPath(spec, block, model, part)
    closed = spec.closed_form(block, block.grid)
    np.testing.assert_allclose(Yp.on_grid(), closed, atol=1e-12)


@pytest.mark.parametrize("name", ["anticipating-wt", "anticipating-sin-wt"])
def test_future_derivative_hook_generic_and_numeric_agree(two_atom, name):
    model, part = two_atom
    p = make_block(model, part, n=40, M=64)
    spec = spec_catalog(name, model)
    generic = spec_catalog(name, model)
    generic.d_minus_hook = None
    for s in (0.25, 0.5, 0.75):
        hook = d_minus_Y(spec, p, model, part, s)
        np.testing.assert_allclose(d_minus_Y(generic, p, model, part, s), hook, atol=1e-10)
        np.testing.assert_allclose(d_minus_Y(spec, p, model, part, s, mode="numeric"), hook,
                                   rtol=1e-6, atol=1e-8)


def test_adapted_spec_has_zero_future_derivative(brownian_only):
    model, part = brownian_only
    p = make_block(model, part, n=10)
    assert np.array_equal(d_minus_Y(spec_catalog("brownian", model), p, model, part, 0.5),
                          np.zeros((1, p.n)))


def test_ledger_bookkeeping(two_atom):
    model, part = two_atom
    ens = PathEnsemble(model, part, uniform_grid(1.0, 64), 200, seed=5)
    led = ito_ledger_general(spec_catalog("anticipating-jump", model), TEST_FUNCTIONS["sin"],
                             ens, model, part)
    assert set(led.terms) == {"delta_diffusion", "delta_jump", "second_order", "drift",
                              "dminus_diffusion", "dminus_jump", "small_jumps", "big_jumps"}
    np.testing.assert_allclose(led.residual, led.lhs - sum(led.terms.values()), atol=0)
    assert led.lhs.shape == (200,)


def test_empirical_mode_warnings(two_atom):
    model, part = two_atom
    ens = PathEnsemble(model, part, uniform_grid(1.0, 32), 20, seed=6)
    led = ito_ledger_general(spec_catalog("anticipating-wt", model), TEST_FUNCTIONS["square"],
                             ens, model, part)
    assert any("empirical" in w for w in led.warnings)


def test_small_jump_ledger_is_exact_for_symmetric_atoms(two_atom):
    model, part = two_atom
    ens = PathEnsemble(model, part, uniform_grid(1.0, 64), 300, seed=7)
    led = ito_ledger_general(spec_catalog("small-jump", model), TEST_FUNCTIONS["square"],
                             ens, model, part)
    assert np.max(np.abs(led.residual)) < 1e-12


def test_finite_variation_ledger_within_bound(pure_jump):
    model, part = pure_jump
    ens = PathEnsemble(model, part, uniform_grid(1.0, 128), 500, seed=8)
    spec = spec_catalog("small-jump", model)
    led = ito_ledger_finite_variation(spec, TEST_FUNCTIONS["square"], ens, model, part)
    assert np.all(np.abs(led.residual) <= led.bound)
    general = ito_ledger_general(spec, TEST_FUNCTIONS["square"], ens, model, part)
    np.testing.assert_allclose(led.rhs, general.rhs, atol=1e-12)


def test_finite_variation_refuses_infinite_first_moment():
    model = LevyModel(0.0, 0.0, stable_like(1.5), 1.0)
    part = shell_partition(model, 4)
    ens = PathEnsemble(model, part, uniform_grid(1.0, 16), 4, seed=0)
    with pytest.raises(UnsupportedOperation):
        ito_ledger_finite_variation(spec_catalog("small-jump", model), TEST_FUNCTIONS["square"],
                                    ens, model, part)


def test_coarsen_keeps_nested_nodes(block):
    c = coarsen(block, 4)
    assert c.grid.size == 17
    np.testing.assert_array_equal(c.brownian, block.brownian[:, ::4])
    with pytest.raises(ValueError):
        coarsen(block, 3)


def test_refinement_order_is_near_one_half(brownian_only):
    model, part = brownian_only
    ens = PathEnsemble(model, part, uniform_grid(1.0, 256), 400, seed=9)
    st = refinement_study(spec_catalog("brownian", model), TEST_FUNCTIONS["square"], ens,
                          model, part, [32, 64, 128, 256])
    assert all(a > b for a, b in zip(st.rms_residual, st.rms_residual[1:]))
    assert 0.35 <= st.order <= 0.65


def test_epsilon_gap_vanishes_below_smallest_atom():
    from levymalliavin.levy_model import DiscreteMeasure
    model = LevyModel(0.0, 0.0, DiscreteMeasure(((0.5, 1.0), (0.05, 5.0))), 1.0)
    part = shell_partition(model, 6)
    ens = PathEnsemble(model, part, uniform_grid(1.0, 32), 500, seed=10)
    st = epsilon_convergence_study(spec_catalog("small-jump", model), ens, model, part,
                                   [1.0, 0.25, 0.04])
    assert st.monotone
    assert st.gap[-1] == 0.0 and st.gap[0] > 0.0
