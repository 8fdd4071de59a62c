import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levymalliavin.canonical_path import (CanonicalPath, PathEnsemble, add_jump, dump_paths,
                                          evaluate_X, load_paths, remove_jump, uniform_grid)
from levymalliavin.chaos import mc_mean

from .conftest import assert_mc


def _path():
    grid = uniform_grid(1.0, 4)
    return CanonicalPath.from_jumps(grid, [0.0, 0.1, -0.2, 0.3, 0.1],
                                    [(0.3, 2.0), (0.6, -0.4)], epsilons=(1.0, 0.5, 0.25))


def test_evaluate_x_and_left_limits(two_atom):
    model, part = two_atom
    p = _path()
    # W(0.3) interpolates 0.1 and -0.2; symmetric atoms leave no compensator drift
    assert evaluate_X(p, model, part, 0.3) == pytest.approx(0.04 + 2.0, abs=1e-12)
    right = evaluate_X(p, model, part, 0.3)
    left = evaluate_X(p, model, part, 0.3, left=True)
    assert right - left == pytest.approx(2.0)


def test_add_then_remove_is_identity(block):
    edited = remove_jump(add_jump(block, 0.37, 0.5), 0.37)
    assert np.array_equal(np.sort(edited.jump_times[np.isfinite(edited.jump_times)]),
                          np.sort(block.jump_times[np.isfinite(block.jump_times)]))
    assert np.array_equal(edited.brownian, block.brownian)


def test_add_jump_rejects_zero_and_bad_time(block):
    with pytest.raises(ValueError):
        add_jump(block, 0.5, 0.0)
    with pytest.raises(ValueError):
        add_jump(block, 0.0, 0.5)


def test_jump_counts_match_intensity(two_atom):
    model, part = two_atom
    ens = PathEnsemble(model, part, uniform_grid(1.0, 16), 4000, seed=3)
    counts = ens.map(lambda p: np.asarray(p.jump_count(), float))
    assert_mc(*mc_mean(counts), target=2.0)


def test_ensemble_is_reproducible_and_worker_independent(two_atom):
    model, part = two_atom
    ens = PathEnsemble(model, part, uniform_grid(1.0, 32), 900, seed=9, block_size=200)
    a = ens.map(lambda p: p.brownian[:, -1] + p.jump_sum(), workers=1)
    b = ens.map(lambda p: p.brownian[:, -1] + p.jump_sum(), workers=4)
    assert np.array_equal(a, b)
    single = ens[450]
    assert single.brownian[0, -1] + single.jump_sum()[0] == a[450]


def test_dump_round_trip(block):
    buf = io.StringIO()
    dump_paths(block.row(3).batch(), buf)
    back = load_paths(io.StringIO(buf.getvalue()), block.grid)
    assert np.array_equal(back.brownian[0], block.brownian[3])
    assert back.jumps(0) == block.jumps(3)


@given(st.floats(0.01, 1.0), st.sampled_from([0.5, -0.5, 1.5]))
@settings(max_examples=40, deadline=None)
def test_inserted_jump_shifts_sum_exactly(t, x):
    p = _path()
    edited = add_jump(p, t, x)
    assert edited.jump_sum()[0] - p.jump_sum()[0] == pytest.approx(x, abs=1e-15)
    assert edited.jump_sum(t, left=True)[0] == p.jump_sum(t, left=True)[0]
