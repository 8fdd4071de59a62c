"""Named kernels, functionals and fields referenced by experiment configs.

Every factory takes the model (and partition where needed) so that times
scale with the horizon ``T`` and jump regions stay inside the simulated
shells.
"""

from __future__ import annotations

import numpy as np

from .anticipating import (AdaptedField, SimpleRandomField, TimePolynomialKernel, box_indicator,
                           slice_indicator)
from .chaos import ChaosFunctional, ElementaryKernel
from .functionals import (Constant, JumpSumProcess, X_at, brownian_at,
                          cos_jump_sum, cylindrical, jump_sum, jump_sum_sq, sin_WT)
from .levy_model import Box, LevyModel, ShellPartition, ValueSet

__all__ = ["kernels", "functionals", "cylindrical_functionals", "fields", "bridge_fields",
           "resolve"]


def _slice(a, b):
    return Box(a, b, ValueSet.origin())


def _jumps(a, b, lo=0.25):
    return Box(a, b, ValueSet.abs_between(lo))


def kernels(model: LevyModel, partition: ShellPartition) -> dict:
    """Elementary kernels of orders 0 to 3 mixing the Wiener slice and jump shells.

    Slice edges are multiples of ``T/8`` so that they fall on every dyadic grid.
    """
    T = model.T
    out = {
        "const": ElementaryKernel.constant(1.5),
        "o1_slice": ElementaryKernel.indicator(_slice(0.0, 0.5 * T)),
        "o1_jump": ElementaryKernel.indicator(_jumps(0.25 * T, 0.875 * T)),
        "o1_mixed": ElementaryKernel((_slice(0.125 * T, 0.75 * T), _jumps(0.0, T)),
                                     {(0,): 1.0, (1,): -2.0}),
        "o2_pair": ElementaryKernel.indicator(_slice(0.0, 0.5 * T), _jumps(0.5 * T, T)),
        "o2_mixed": ElementaryKernel(
            (_slice(0.0, 0.375 * T), _jumps(0.0, 0.625 * T), _slice(0.375 * T, T)),
            {(0, 1): 1.0, (1, 0): 1.0, (1, 2): 0.5, (2, 0): -1.0}),
        "o3": ElementaryKernel.indicator(_slice(0.0, 0.25 * T), _jumps(0.25 * T, 0.625 * T),
                                         _slice(0.625 * T, T)),
    }
    if model.sigma == 0:
        out = {k: v for k, v in out.items()
               if all(r.values.jump_intervals() for r in v.regions)}
    return out


def functionals(model: LevyModel, partition: ShellPartition) -> dict:
    """Test variables for duality and product-rule checks."""
    T = model.T
    chaos2 = ChaosFunctional([kernels(model, partition)["o2_pair"]], model, partition,
                             name="I2(o2_pair)")
    return {
        "one": Constant(1.0),
        "W_T": brownian_at(T),
        "sin_WT": sin_WT(T),
        "W_half_sq": cylindrical(lambda a: a * a, [lambda a: 2 * a], [0.5 * T], name="W_{T/2}^2"),
        "S_T": jump_sum(T),
        "S_T_sq": jump_sum_sq(T),
        "cos_S_T": cos_jump_sum(T),
        "X_T": X_at(model, partition, T),
        "sinW_cosS": sin_WT(T) * cos_jump_sum(T),
        "I2": chaos2,
    }


def cylindrical_functionals(model: LevyModel) -> dict:
    """Smooth cylindrical variables with analytic Brownian gradients."""
    T = model.T
    return {
        "W_T": brownian_at(T),
        "sin_WT": sin_WT(T),
        "W_half_sq": cylindrical(lambda a: a * a, [lambda a: 2 * a], [0.5 * T], name="W_{T/2}^2"),
        "sin_cos": cylindrical(lambda a, b: np.sin(a) * np.cos(b),
                               [lambda a, b: np.cos(a) * np.cos(b),
                                lambda a, b: -np.sin(a) * np.sin(b)],
                               [0.25 * T, 0.5 * T], name="sin(W_{T/4})cos(W_{T/2})", bound=1.0),
        "exp_poly": cylindrical(lambda a, b: np.exp(-a * a) * b,
                                [lambda a, b: -2 * a * np.exp(-a * a) * b,
                                 lambda a, b: np.exp(-a * a)],
                                [0.25 * T, 0.75 * T], name="exp(-W_{T/4}^2)W_{3T/4}"),
        "sinW_times_S": cylindrical(np.sin, [np.cos], [0.5 * T], Z=jump_sum(T),
                                    name="sin(W_{T/2})S_T"),
    }


def fields(model: LevyModel, partition: ShellPartition) -> dict:
    """Simple random fields for duality and energy checks."""
    T = model.T
    every = ValueSet.everything()
    return {
        "det_slice": SimpleRandomField([(Constant(1.0), slice_indicator(0.0, T))], name="1_slice"),
        "det_jump": SimpleRandomField([(Constant(1.0), box_indicator(0.0, T,
                                                                     ValueSet.abs_between(0.25)))],
                                      name="1_jump"),
        "WT_slice": SimpleRandomField([(brownian_at(T), slice_indicator(0.0, T))], name="W_T"),
        "sinWT_mixed": SimpleRandomField([(sin_WT(T), box_indicator(0.25 * T, 0.75 * T, every))],
                                         name="sin(W_T)1_box"),
        "cosS_jump": SimpleRandomField(
            [(cos_jump_sum(T), box_indicator(0.125 * T, 0.75 * T, every))], name="cos(S_T)1_box"),
        "mixed_sum": SimpleRandomField(
            [(sin_WT(T) * cos_jump_sum(T), box_indicator(0.0, T, every)),
             (Constant(0.5), slice_indicator(0.0, 0.5 * T))], name="sin(W_T)cos(S_T)+0.5"),
    }


def bridge_fields(model: LevyModel, partition: ShellPartition) -> dict:
    """Deterministic, adapted and jump-blind anticipating fields for the bridge identity."""
    T = model.T
    every = ValueSet.everything()
    poly = TimePolynomialKernel((1.0, -0.5), 0.0, T, every)
    return {
        "deterministic": SimpleRandomField([(Constant(1.0), poly)], name="1 - t/2"),
        "adapted": AdaptedField(np.cos, JumpSumProcess(), box_indicator(0.0, T, every), 1.0,
                                name="cos(S_t)"),
        "jump_blind": SimpleRandomField([(sin_WT(T), box_indicator(0.0, T, every))],
                                        name="sin(W_T)"),
        "jump_anticipating": SimpleRandomField([(cos_jump_sum(T), box_indicator(0.0, T, every))],
                                               name="cos(S_T)"),
    }


def resolve(table: dict, names, what: str) -> dict:
    """Pick ``names`` from ``table`` (all entries when ``names`` is empty)."""
    if not names:
        return dict(table)
    missing = [n for n in names if n not in table]
    if missing:
        raise KeyError(f"unknown {what} id(s): {', '.join(missing)}")
    return {n: table[n] for n in names}
