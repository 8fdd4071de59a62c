import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levymalliavin.levy_model import (Box, DiscreteMeasure, DivergentIntegral, Interval,
                                      LevyModel, ValueSet, classify_abs, first_moment_finite,
                                      mu_measure, nu_moment, shell_partition, stable_like,
                                      two_sided_exponential)


def test_shell_schedule_is_geometric():
    model = LevyModel(0.0, 1.0, DiscreteMeasure(((2.0, 1.0), (0.3, 2.0), (0.5, 1.0))), 1.0)
    part = shell_partition(model, 4)
    assert part.epsilons == (1.0, 0.5, 0.25, 0.125)
    assert part.floor == 0.125
    # 0.5 sits on the upper edge of (0.25, 0.5]
    assert part.classify([2.0, 0.5, 0.3, 0.2, 0.1]).tolist() == [1, 3, 3, 4, 0]
    assert math.isclose(part.total_intensity, 4.0)


def test_half_atom_needs_three_shells():
    model = LevyModel(0.0, 1.0, DiscreteMeasure(((0.5, 1.0),)), 1.0)
    assert shell_partition(model, 2).total_intensity == 0.0
    assert shell_partition(model, 3).total_intensity == 1.0


def test_discrete_measure_validation():
    with pytest.raises(ValueError):
        DiscreteMeasure(((0.0, 1.0),))
    with pytest.raises(ValueError):
        DiscreteMeasure(((0.5, -1.0),))
    with pytest.raises(ValueError):
        DiscreteMeasure(((0.5, 1.0), (0.5, 2.0)))


def test_mu_measure_of_boxes(two_atom):
    model, part = two_atom
    assert math.isclose(mu_measure(model, Box(0.0, 0.5, ValueSet.origin())), 0.5)
    jump = Box(0.2, 0.9, ValueSet.abs_between(0.25))
    assert math.isclose(mu_measure(model, jump, part), 0.7 * 0.5)
    both = Box(0.0, 1.0, ValueSet.everything())
    assert math.isclose(mu_measure(model, both, part), 1.0 + 0.5)


def test_first_moment_detection():
    finite = LevyModel(0.0, 1.0, two_sided_exponential(), 1.0)
    assert first_moment_finite(finite)
    rough = LevyModel(0.0, 1.0, stable_like(1.5), 1.0)
    assert not first_moment_finite(rough)
    with pytest.raises(DivergentIntegral):
        nu_moment(rough, None, 1)
    assert math.isfinite(nu_moment(rough, None, 2))


def test_density_mass_matches_closed_form():
    nu = two_sided_exponential(rate=2.0, scale=1.0, upper=50.0)
    assert math.isclose(nu.mass(), 2.0, rel_tol=1e-3)
    assert math.isclose(nu.mass(ValueSet.abs_between(1.0)), 2.0 * math.exp(-1.0), rel_tol=1e-3)


@given(st.floats(-3, 3), st.floats(0.01, 2), st.floats(-3, 3), st.floats(0.01, 2),
       st.lists(st.floats(-6, 6), min_size=1, max_size=20))
def test_interval_minus_partitions(a, la, b, lb, xs):
    A, B = Interval(a, a + la), Interval(b, b + lb)
    x = np.array(xs)
    pieces = A.minus(B)
    inside = np.zeros(x.shape, dtype=int)
    for p in pieces:
        inside += p.contains(x)
    expected = A.contains(x) & ~B.contains(x)
    assert np.array_equal(inside, expected.astype(int))


@given(st.lists(st.floats(1e-3, 10), min_size=1, max_size=30))
@settings(max_examples=50)
def test_classification_agrees_with_shell_bounds(mods):
    eps = (1.0, 0.5, 0.25, 0.125)
    k = classify_abs(np.array(mods), eps)
    for m, idx in zip(mods, k):
        if idx == 0:
            assert m <= eps[-1]
        else:
            hi = math.inf if idx == 1 else eps[idx - 2]
            assert eps[idx - 1] < m <= hi
