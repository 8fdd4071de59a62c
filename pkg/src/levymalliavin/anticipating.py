"""Simple anticipating fields, their seminorms, the future derivative ``D^-``,
Skorohod integrals of simple fields and the jump-sum/Skorohod bridge.

Skorohod integrals of ``F h`` are evaluated with the factorization rule

    delta(F h) = F delta(h) - delta(h x D F) - int h D F dmu

where ``delta(h)`` of a deterministic kernel is a first-chaos integral.  On
the Brownian slice this is the usual ``F int h dW - int h D^W F ds``.  On the
jump slices the middle term is handled by freezing ``x D_z F`` on cells
``(time piece) x (jump node)`` and recursing; the bottom level uses the
jump-removal form

    delta(w) = sum over jumps z of w(z, omega without z) x - int int w x dnu ds,

which is exact for fields that depend on the configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .canonical_path import CanonicalPath, add_jump, remove_jump
from .chaos import ChaosField, ChaosFunctional, mc_mean, skorohod_chaos
from .functionals import (Constant, LambdaFunctional, Process, RandomFunctional,
                          UnsupportedOperation, brownian_derivative, malliavin_D,
                          malliavin_D2)
from .levy_model import Box, Interval, LevyModel, ShellPartition, ValueSet

__all__ = [
    "Kernel",
    "BoxKernel",
    "FunctionKernel",
    "TimePolynomialKernel",
    "RestrictedKernel",
    "box_indicator",
    "slice_indicator",
    "shell_indicator",
    "SimpleRandomField",
    "AdaptedField",
    "FrozenDifference",
    "d_minus",
    "d_minus_sweep",
    "SeminormReport",
    "seminorms",
    "SkorohodReport",
    "StrategyComparison",
    "skorohod_simple",
    "skorohod_dW",
    "jump_removal_delta",
    "mu_pairing",
    "BridgeReport",
    "bridge_terms",
    "pathwise_skorohod_bridge",
    "EnergyReport",
    "energy_bound_check",
]


# --------------------------------------------------------------------------
# deterministic kernels h(t, x)
# --------------------------------------------------------------------------


class Kernel:
    """Bounded deterministic ``h(t, x)``, left-continuous in ``t``.

    ``breakpoints`` are the times where ``h`` may change (``None``: unknown,
    integrate on the grid); ``h(t, .) = 0`` for ``t <= t_min``; ``values``
    is a value set outside of which ``h`` vanishes.
    """

    bound: float = math.inf
    breakpoints: tuple | None = None
    t_min: float = 0.0
    values: ValueSet = ValueSet.everything()
    name: str = "h"

    def __call__(self, t, x) -> np.ndarray:
        raise NotImplementedError

    def boxes(self):
        """``[(coeff, Box), ...]`` when ``h`` is a finite box combination."""
        return None

    def restrict(self, t0: float, t1: float, values: ValueSet | None = None) -> "Kernel":
        return RestrictedKernel(self, t0, t1, values)

    @property
    def touches_slice(self) -> bool:
        return self.values.zero

    @property
    def touches_jumps(self) -> bool:
        return bool(self.values.jump_intervals())


class BoxKernel(Kernel):
    """``sum_b c_b 1_{B_b}(t, x)``."""

    def __init__(self, terms: Sequence[tuple[float, Box]], name: str = "box"):
        self.terms = tuple((float(c), b) for c, b in terms if not b.is_empty)
        self.name = name
        self.bound = sum(abs(c) for c, _ in self.terms)
        self.breakpoints = tuple(sorted({e for _, b in self.terms for e in (b.t0, b.t1)}))
        self.t_min = min((b.t0 for _, b in self.terms), default=0.0)
        vs = ValueSet()
        for _, b in self.terms:
            vs = vs.union(b.values)
        self.values = vs

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        out = np.zeros(np.broadcast(t, x).shape)
        for c, b in self.terms:
            out = out + c * b.contains(t, x)
        return out

    def boxes(self):
        return list(self.terms)

    def restrict(self, t0, t1, values=None):
        cut = Box(t0, t1, ValueSet.everything() if values is None else values)
        return BoxKernel([(c, b.intersect(cut)) for c, b in self.terms], name=self.name)


class FunctionKernel(Kernel):
    """Kernel from a vectorized callable ``fn(t, x)``."""

    def __init__(self, fn: Callable, bound: float, breakpoints=None, t_min: float = 0.0,
                 values: ValueSet | None = None, name: str = "h"):
        self.fn = fn
        self.bound = float(bound)
        self.breakpoints = None if breakpoints is None else tuple(sorted(breakpoints))
        self.t_min = float(t_min)
        self.values = ValueSet.everything() if values is None else values
        self.name = name

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        val = np.asarray(self.fn(t, x), dtype=float)
        return np.where(self.values.contains(x), val, 0.0) * np.ones(np.broadcast(t, x).shape)


class TimePolynomialKernel(Kernel):
    """``p(t) 1_{(t0, t1]}(t) 1_values(x)`` with ``p`` given by coefficients."""

    def __init__(self, coeffs: Sequence[float], t0: float, t1: float, values: ValueSet,
                 name: str = "poly"):
        self.coeffs = tuple(float(c) for c in coeffs)
        self.t0, self.t1 = float(t0), float(t1)
        self.values = values
        self.t_min = self.t0
        grid = np.linspace(self.t0, self.t1, 257)
        self.bound = float(np.max(np.abs(np.polynomial.polynomial.polyval(grid, self.coeffs))))
        self.breakpoints = None if len(self.coeffs) > 1 else (self.t0, self.t1)
        self.name = name

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        val = np.polynomial.polynomial.polyval(t, self.coeffs)
        return np.where((t > self.t0) & (t <= self.t1) & self.values.contains(x), val, 0.0)


class RestrictedKernel(Kernel):
    """``h 1_{(t0, t1]} 1_values``."""

    def __init__(self, base: Kernel, t0: float, t1: float, values: ValueSet | None = None):
        self.base, self.t0, self.t1 = base, float(t0), float(t1)
        self.cut = values
        self.values = base.values if values is None else _intersect_keep_zero(base.values, values)
        self.bound = base.bound
        self.t_min = max(base.t_min, self.t0)
        self.breakpoints = None if base.breakpoints is None else \
            tuple(sorted(set(base.breakpoints) | {self.t0, self.t1}))
        self.name = f"{base.name}|({self.t0:g},{self.t1:g}]"

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        inside = (t > self.t0) & (t <= self.t1)
        if self.cut is not None:
            inside = inside & self.cut.contains(x)
        return np.where(inside, self.base(t, x), 0.0)

    def boxes(self):
        inner = self.base.boxes()
        if inner is None:
            return None
        cut = Box(self.t0, self.t1, ValueSet.everything() if self.cut is None else self.cut)
        return [(c, b.intersect(cut)) for c, b in inner if not b.intersect(cut).is_empty]


def _intersect_keep_zero(a: ValueSet, b: ValueSet) -> ValueSet:
    out = a.intersect(b)
    return ValueSet(out.intervals, a.zero and b.zero)


def box_indicator(t0: float, t1: float, values: ValueSet, coeff: float = 1.0) -> BoxKernel:
    return BoxKernel([(coeff, Box(t0, t1, values))])


def slice_indicator(t0: float, t1: float, coeff: float = 1.0) -> BoxKernel:
    """``coeff 1_{(t0, t1]}(t) 1_{x = 0}``."""
    return box_indicator(t0, t1, ValueSet.origin(), coeff)


def shell_indicator(partition: ShellPartition, index: int, t0: float, t1: float,
                    coeff: float = 1.0) -> BoxKernel:
    return box_indicator(t0, t1, partition.shell(index).values, coeff)


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------


class FrozenDifference(RandomFunctional):
    """``F(omega + (s, y)) - F(omega)``: the variable ``y D_{s,y} F``."""

    def __init__(self, F: RandomFunctional, s: float, y: float):
        if y == 0:
            raise ValueError("frozen differences need a jump coordinate y != 0")
        self.F, self.s, self.y = F, float(s), float(y)
        self.name = f"dF({self.s:g},{self.y:g})"
        self.adapted_up_to = F.adapted_up_to
        self.jump_blind = F.jump_blind
        self.breakpoints = None if F.breakpoints is None else \
            tuple(sorted(set(F.breakpoints) | {self.s}))
        self.bound = None if F.bound is None else 2 * F.bound

    def evaluate(self, path):
        return self.F.evaluate(add_jump(path.batch(), self.s, self.y)) - self.F.evaluate(path)

    @property
    def has_gradient(self) -> bool:
        return self.F.has_gradient

    def _gradient(self, path, t):
        return (self.F.gradient(add_jump(path.batch(), self.s, self.y), t)
                - self.F.gradient(path, t))


@dataclass
class SimpleRandomField:
    """``u(t, x) = sum_j F_j h_j(t, x)`` with catalog coefficients.

    ``d_minus_hook(path, s, y)`` may supply ``D^- u`` in closed form.
    Kernels are left-continuous in time, so ``u(s-, y)`` uses the same
    kernel values and leaves the ``F_j`` untouched.
    """

    terms: list
    d_minus_hook: Callable | None = None
    left_limit_safe: bool = True
    name: str = "u"

    def __post_init__(self):
        self.terms = [(F if isinstance(F, RandomFunctional) else Constant(F), h)
                      for F, h in self.terms]

    @property
    def is_adapted(self) -> bool:
        return all(F.adapted_up_to is not None and F.adapted_up_to <= h.t_min
                   for F, h in self.terms)

    @property
    def bound(self) -> float | None:
        total = 0.0
        for F, h in self.terms:
            if F.bound is None:
                return None
            total += F.bound * h.bound
        return total

    @property
    def breakpoints(self):
        out = set()
        for F, h in self.terms:
            if F.breakpoints is None or h.breakpoints is None:
                return None
            out |= set(F.breakpoints) | set(h.breakpoints)
        return tuple(sorted(out))

    def value(self, path: CanonicalPath, t, x) -> np.ndarray:
        """``u(t, x)`` per row.

        ``t`` and ``x`` are scalars or arrays whose leading axis is the batch.
        """
        out = np.zeros(path.n)
        for F, h in self.terms:
            hv = np.asarray(h(t, x), dtype=float)
            f = F.evaluate(path)
            out = out[..., None] if out.ndim < hv.ndim else out
            out = out + f.reshape((path.n,) + (1,) * max(hv.ndim - 1, 0)) * hv
        return out

    def left(self, path: CanonicalPath, s, y) -> np.ndarray:
        return self.value(path, s, y)

    def restrict(self, t0: float, t1: float, values: ValueSet | None = None) -> "SimpleRandomField":
        return SimpleRandomField([(F, h.restrict(t0, t1, values)) for F, h in self.terms],
                                 self.d_minus_hook, self.left_limit_safe, self.name)

    def derivative(self, path, s, y, t, x, model) -> np.ndarray:
        """``D_{s,y} u(t, x)`` per row (scalar ``s, y, t, x``)."""
        out = np.zeros(path.n)
        for F, h in self.terms:
            hv = float(h(t, x))
            if hv == 0:
                continue
            out += np.asarray(malliavin_D(F, path.batch(), s, y, model)) * hv
        return out


class AdaptedField:
    """``u(s, y) = g(Z_s) k(s, y)`` for a process ``Z``; ``u(s-, y) = g(Z_{s-}) k(s, y)``."""

    left_limit_safe = True
    is_adapted = True

    def __init__(self, g: Callable, process: Process, kernel: Kernel, g_bound: float,
                 name: str = "g(Z)k"):
        self.g, self.process, self.kernel = g, process, kernel
        self.g_bound = float(g_bound)
        self.name = name

    @property
    def bound(self) -> float:
        return self.g_bound * self.kernel.bound

    def value(self, path, t, x):
        z = self.process.value(path, t)
        return np.asarray(self.g(z)) * self.kernel(t, x)

    def left(self, path, s, y):
        z = self.process.value(path, s, left=True)
        return np.asarray(self.g(z)) * self.kernel(s, y)

    def coefficient_at(self, t: float) -> RandomFunctional:
        """``g(Z_t)`` as a functional measurable up to ``t``."""
        proc, g = self.process, self.g
        return LambdaFunctional(lambda p: g(proc.value(p, t)), name=f"g(Z_{t:g})",
                                adapted_up_to=t, bound=self.g_bound, breakpoints=(t,))


# --------------------------------------------------------------------------
# D^-
# --------------------------------------------------------------------------


def d_minus(u, path: CanonicalPath, s: float, y: float, model: LevyModel,
            mode: str = "numeric", delta: float | None = None, x_offset: float = 0.0):
    """Future derivative ``D^- u(s, y)``.

    ``analytic`` uses the field's hook, ``adapted-zero`` returns 0 for
    adapted fields, ``numeric`` evaluates ``D_{s,y} u(r, x)`` at
    ``r = s - delta`` and ``x = y + x_offset`` (default ``delta``: one grid
    cell).
    """
    if mode == "analytic":
        hook = getattr(u, "d_minus_hook", None)
        if hook is None:
            raise UnsupportedOperation(f"{u.name} has no analytic D^- hook")
        return path.out(np.broadcast_to(np.asarray(hook(path.batch(), s, y), dtype=float),
                                        (path.n,)))
    if mode == "adapted-zero":
        if not getattr(u, "is_adapted", False):
            raise UnsupportedOperation(f"{u.name} is not adapted; D^- need not vanish")
        return path.out(np.zeros(path.n))
    if mode != "numeric":
        raise ValueError(f"unknown mode {mode!r}")
    if not isinstance(u, SimpleRandomField):
        if getattr(u, "is_adapted", False):
            return path.out(np.zeros(path.n))
        raise UnsupportedOperation("numeric D^- needs a simple field")
    if delta is None:
        delta = float(path.dt[0])
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = max(s - delta, 0.0)
    x = y + x_offset if y != 0 else 0.0
    return path.out(u.derivative(path, s, y, r, x, model))


def d_minus_sweep(u, path, s, y, model, deltas=None) -> dict:
    """``D^-`` at ``r = s - delta`` for the sweep ``{dt, dt/2, dt/4}``; no extrapolation."""
    if deltas is None:
        dt = float(path.dt[0])
        deltas = (dt, dt / 2, dt / 4)
    return {float(d): d_minus(u, path, s, y, model, "numeric", d) for d in deltas}


# --------------------------------------------------------------------------
# quadrature helpers
# --------------------------------------------------------------------------


def _time_pieces(grid: np.ndarray, t: float, breaks, with_grid: bool):
    """Midpoints and lengths of the pieces of ``[0, t]``."""
    edges = {0.0, float(t)}
    if breaks is None or with_grid:
        edges |= {float(g) for g in grid if 0 < g < t}
    if breaks is not None:
        edges |= {float(b) for b in breaks if 0 < b < t}
    e = np.array(sorted(edges))
    return 0.5 * (e[1:] + e[:-1]), np.diff(e), e


@dataclass(frozen=True)
class _JumpNodes:
    x: np.ndarray        # integration nodes
    w: np.ndarray        # nu weights
    rep: np.ndarray      # cell representatives for frozen differences
    cells: tuple         # ValueSet per node


def _jump_nodes(model: LevyModel, partition: ShellPartition, values: ValueSet) -> _JumpNodes:
    covered = values.without_zero().intersect(partition.coverage)
    if not covered.jump_intervals():
        return _JumpNodes(np.empty(0), np.empty(0), np.empty(0), ())
    nu = model.nu
    if hasattr(nu, "panels_of"):
        lo, hi, w = nu.panels_of(covered)
        x = 0.5 * (lo + hi)
        cells = tuple(ValueSet((Interval(a, b, False, True),)) for a, b in zip(lo, hi))
        return _JumpNodes(x, w, hi, cells)
    x, w = nu.nodes(covered)
    return _JumpNodes(x, w, x, tuple(ValueSet.point(a) for a in x))


def _deterministic_wiener(h: Kernel, path: CanonicalPath, t: float) -> np.ndarray:
    """``int_0^t h(s, 0) dW_s`` on pieces refined by the grid."""
    mids, lens, edges = _time_pieces(path.grid, t, h.breakpoints, with_grid=True)
    hv = np.asarray(h(mids, 0.0), dtype=float) * np.ones_like(mids)
    W = path.brownian_at(edges[None, :] * np.ones((path.n, 1)))
    return np.sum(hv[None, :] * np.diff(W, axis=1), axis=1)


def _deterministic_jump(h: Kernel, path: CanonicalPath, t: float, model: LevyModel,
                        partition: ShellPartition) -> np.ndarray:
    """``int_0^t int h x dJtilde`` over the simulated coverage."""
    nodes = _jump_nodes(model, partition, h.values)
    if nodes.x.size == 0:
        return np.zeros(path.n)
    covered = h.values.without_zero().intersect(partition.coverage)
    times, sizes = path.jump_times, path.jump_sizes
    mask = np.isfinite(times) & (times <= t) & covered.contains(sizes)
    hv = np.where(mask, h(np.where(mask, times, t), sizes), 0.0)
    jumps = np.sum(hv * sizes, axis=1)
    mids, lens, _ = _time_pieces(path.grid, t, h.breakpoints, with_grid=False)
    H = np.asarray(h(mids[:, None], nodes.x[None, :]), dtype=float)
    comp = float(np.sum(lens[:, None] * H * (nodes.w * nodes.x)[None, :]))
    return jumps - comp


def skorohod_dW(u: SimpleRandomField, path: CanonicalPath, t: float) -> np.ndarray:
    """Wiener Skorohod integral ``int_0^t u(s, 0) delta W_s`` per row.

    Equals ``sigma^-1 delta(u 1_{x=0} 1_[0,t])`` when ``sigma > 0``.
    """
    total = np.zeros(path.n)
    for F, h in u.terms:
        if not h.touches_slice:
            continue
        total += _wiener_term(F, h, path, t)
    return total


def _wiener_term(F: RandomFunctional, h: Kernel, path, t) -> np.ndarray:
    f = F.evaluate(path)
    out = f * _deterministic_wiener(h, path, t)
    if _derivative_vanishes_on(F, h, brownian=True):
        return out
    breaks = None if F.breakpoints is None or h.breakpoints is None else \
        tuple(set(F.breakpoints) | set(h.breakpoints))
    mids, lens, _ = _time_pieces(path.grid, t, breaks, with_grid=breaks is None)
    for m, ds in zip(mids, lens):
        hv = float(h(m, 0.0))
        if hv == 0:
            continue
        out = out - hv * ds * np.asarray(brownian_derivative(F, path, m, mode="auto"))
    return out


def _derivative_vanishes_on(F: RandomFunctional, h: Kernel, brownian: bool) -> bool:
    if F.breakpoints == () and F.jump_blind:
        return True  # constants
    if F.adapted_up_to is not None and F.adapted_up_to <= h.t_min:
        return True
    if not brownian and F.jump_blind:
        return True
    return False


# --------------------------------------------------------------------------
# Skorohod integral of simple fields
# --------------------------------------------------------------------------


@dataclass
class SkorohodReport:
    value: np.ndarray
    remainder: np.ndarray      # size of the exact bottom-level terms
    depth: int
    strategy: str = "factorization"


@dataclass
class StrategyComparison:
    factorization: np.ndarray
    chaos: np.ndarray
    difference: np.ndarray


def jump_removal_delta(weight: Callable, path: CanonicalPath, t: float, model: LevyModel,
                       partition: ShellPartition, values: ValueSet, breakpoints=None):
    """``delta(w 1_[0,t] 1_values)`` on the jump slices for ``w(s, x, omega)``.

    ``weight(path, s, x)`` returns per-row values; ``s`` and ``x`` are
    scalars or per-row arrays.  The
    jump sum evaluates ``w`` at each jump on the path with that jump removed;
    the compensator uses pieces from ``breakpoints`` (grid cells if
    ``None``) times the nu nodes.
    """
    nodes = _jump_nodes(model, partition, values)
    covered = values.without_zero().intersect(partition.coverage)
    out = np.zeros(path.n)
    times, sizes = path.jump_times, path.jump_sizes
    mask = np.isfinite(times) & (times <= t) & covered.contains(sizes)
    for col in range(times.shape[1]):
        rows = mask[:, col]
        if not rows.any():
            continue
        s_col = np.where(rows, times[:, col], path.T)
        x_col = np.where(rows, sizes[:, col], 1.0)
        without = remove_jump(path, np.where(rows, times[:, col], np.inf))
        val = np.asarray(weight(without, s_col, x_col), dtype=float)
        out += np.where(rows, val * x_col, 0.0)
    if nodes.x.size:
        mids, lens, _ = _time_pieces(path.grid, t, breakpoints, with_grid=False)
        for m, ds in zip(mids, lens):
            for x, w in zip(nodes.x, nodes.w):
                out -= ds * w * x * np.broadcast_to(
                    np.asarray(weight(path, float(m), float(x)), dtype=float), (path.n,))
    return out


class _Factorizer:
    """Depth-limited factorization of ``delta(F h)`` for one path batch."""

    def __init__(self, path, t, model, partition, depth):
        self.path, self.t, self.model, self.partition = path, t, model, partition
        self.depth = depth
        self.remainder = np.zeros(path.n)

    def jump_part(self, F: RandomFunctional, h: Kernel, depth: int) -> np.ndarray:
        path, t = self.path, self.t
        base = _deterministic_jump(h, path, t, self.model, self.partition)
        f = F.evaluate(path)
        if _derivative_vanishes_on(F, h, brownian=False):
            return f * base
        nodes = _jump_nodes(self.model, self.partition, h.values)
        breaks = None if F.breakpoints is None or h.breakpoints is None else \
            tuple(set(F.breakpoints) | set(h.breakpoints))
        mids, lens, edges = _time_pieces(path.grid, t, breaks, with_grid=False)
        dmu = np.zeros(path.n)
        cells = []
        for m, ds, a, b in zip(mids, lens, edges[:-1], edges[1:]):
            for x, w, rep, cell in zip(nodes.x, nodes.w, nodes.rep, nodes.cells):
                hv = float(h(m, x))
                if hv == 0:
                    continue
                G = FrozenDifference(F, m, rep)
                g = G.evaluate(path)
                # int h D F dmu with D_z F = G / rep on this cell
                dmu += ds * w * x * x * hv * g / rep
                cells.append((G, h.restrict(a, b, cell)))
        if depth <= 0:
            middle = self._bottom(F, h, mids, lens, nodes, breaks)
        else:
            middle = np.zeros(path.n)
            for G, hc in cells:
                middle += self.jump_part(G, hc, depth - 1)
        return f * base - middle - dmu

    def _bottom(self, F, h, mids, lens, nodes, breaks):
        """Exact ``delta(h(z) (F(omega_z) - F(omega)))`` by jump removal."""
        path = self.path

        def weight(p, s, x):
            return h(s, x) * (F.evaluate(add_jump(p, s, x)) - F.evaluate(p))

        val = jump_removal_delta(weight, path, self.t, self.model, self.partition,
                                 h.values, breaks)
        self.remainder += np.abs(val)
        return val


def _check_bounded(u: SimpleRandomField):
    for F, _ in u.terms:
        if F.bound is None and not isinstance(F, ChaosFunctional) and F.breakpoints != ():
            return False
    return True


def skorohod_simple(u: SimpleRandomField, path: CanonicalPath, t: float | None = None,
                    model: LevyModel | None = None, partition: ShellPartition | None = None,
                    strategy: str = "factorization", depth: int = 2, report: bool = False,
                    strict: bool = False):
    """``delta(u 1_[0,t])`` per row.

    ``strategy`` is ``factorization``, ``chaos`` or ``both`` (returns a
    :class:`StrategyComparison`).  ``strict=True`` refuses coefficients that
    are neither bounded nor finitely chaotic.
    """
    if model is None or partition is None:
        raise ValueError("model and partition are required")
    t = path.T if t is None else float(t)
    if strategy == "both":
        a = np.asarray(skorohod_simple(u, path.batch(), t, model, partition, "factorization", depth))
        b = np.asarray(skorohod_simple(u, path.batch(), t, model, partition, "chaos"))
        return StrategyComparison(path.out(a), path.out(b), path.out(a - b))
    if strategy == "chaos":
        return path.out(_chaos_strategy(u, path.batch(), t, model, partition))
    if strategy != "factorization":
        raise ValueError(f"unknown strategy {strategy!r}")
    if strict and not _check_bounded(u):
        raise UnsupportedOperation("unbounded coefficient that is not finitely chaotic")
    raw = path.batch()
    fac = _Factorizer(raw, t, model, partition, depth)
    total = np.zeros(raw.n)
    for F, h in u.terms:
        if h.touches_slice and model.sigma > 0:
            total += model.sigma * _wiener_term(F, h, raw, t)
        if h.touches_jumps:
            total += fac.jump_part(F, h, depth - 1)
    if report:
        return SkorohodReport(path.out(total), path.out(fac.remainder), depth)
    return path.out(total)


def _chaos_strategy(u, path, t, model, partition):
    terms = []
    for F, h in u.terms:
        boxes = h.boxes()
        if boxes is None:
            raise UnsupportedOperation(f"kernel {h.name} is not a box combination")
        if isinstance(F, ChaosFunctional):
            kernels = F.expansion.kernels
        elif isinstance(F, Constant):
            from .chaos import ElementaryKernel
            kernels = (ElementaryKernel.constant(F.c),)
        else:
            raise UnsupportedOperation(f"{F.name} is not finitely chaotic")
        for c, box in boxes:
            cut = box.intersect(Box(0.0, t, ValueSet.everything()))
            if cut.is_empty:
                continue
            for k in kernels:
                terms.append((c, cut, k))
    return np.asarray(skorohod_chaos(path, ChaosField(tuple(terms)), model, partition))


# --------------------------------------------------------------------------
# mu-pairings and seminorms
# --------------------------------------------------------------------------


def _merge(*groups):
    out = set()
    for g in groups:
        if g is None:
            return None
        out |= set(g)
    return tuple(sorted(out))


def mu_pairing(u: SimpleRandomField, G: RandomFunctional, path: CanonicalPath,
               model: LevyModel, partition: ShellPartition, t: float | None = None):
    """``int_0^t int u(z) D_z G dmu(z)`` per row (the duality right-hand side)."""
    raw = path.batch()
    t = raw.T if t is None else float(t)
    breaks = _merge(u.breakpoints, G.breakpoints)
    total = np.zeros(raw.n)
    if model.sigma > 0 and any(h.touches_slice for _, h in u.terms):
        mids, lens, _ = _time_pieces(raw.grid, t, breaks, with_grid=breaks is None)
        for m, ds in zip(mids, lens):
            uv = u.value(raw, m, 0.0)
            if np.all(uv == 0):
                continue
            dg = np.asarray(brownian_derivative(G, raw, m, mode="auto"))
            total += model.sigma * ds * uv * dg  # sigma^2 * sigma^-1 D^W
    vals = ValueSet()
    for _, h in u.terms:
        vals = vals.union(h.values.without_zero())
    nodes = _jump_nodes(model, partition, vals)
    if nodes.x.size:
        mids, lens, _ = _time_pieces(raw.grid, t, breaks, with_grid=False)
        g0 = G.evaluate(raw)
        for m, ds in zip(mids, lens):
            for x, w in zip(nodes.x, nodes.w):
                uv = u.value(raw, m, x)
                if np.all(uv == 0):
                    continue
                dg = G.evaluate(add_jump(raw, m, x)) - g0
                total += ds * w * x * uv * dg  # x^2 * (difference / x)
    return path.out(total)


@dataclass
class SeminormReport:
    """Monte Carlo estimates of the pieces of the two seminorms."""

    l2_mu: float
    delta1: float
    delta2: float
    se_l2: float
    se_delta1: float
    se_delta2: float
    quadrature: dict = field(default_factory=dict)

    @property
    def norm_12f(self) -> float:
        return self.l2_mu + self.delta1

    @property
    def norm_F(self) -> float:
        return self.l2_mu + self.delta1 + self.delta2

    @property
    def se_12f(self) -> float:
        return self.se_l2 + self.se_delta1

    @property
    def se_F(self) -> float:
        return self.se_l2 + self.se_delta1 + self.se_delta2


def _mu_nodes(model, partition, u, n_time, breaks):
    """Product nodes ``(time piece, x node)`` with their mu weights."""
    T = model.T
    edges = set(np.linspace(0.0, T, n_time + 1).tolist())
    if breaks is not None:
        edges |= {b for b in breaks if 0 < b < T}
    e = np.array(sorted(edges))
    mids, lens = 0.5 * (e[1:] + e[:-1]), np.diff(e)
    vals = ValueSet()
    for _, h in u.terms:
        vals = vals.union(h.values.without_zero())
    jn = _jump_nodes(model, partition, vals)
    xs = ([0.0] if model.sigma > 0 else []) + jn.x.tolist()
    xw = ([model.sigma ** 2] if model.sigma > 0 else []) + (jn.x ** 2 * jn.w).tolist()
    nodes = [(i, m, x, ds * w) for i, (m, ds) in enumerate(zip(mids, lens))
             for x, w in zip(xs, xw)]
    return nodes, mids.size


def seminorms(u: SimpleRandomField, model: LevyModel, partition: ShellPartition, ensemble,
              n_time: int = 8, second_order: bool = True, workers: int = 1) -> SeminormReport:
    """Estimate ``E int u^2 dmu`` and the derivative integrals over the two regions.

    Time pieces are the uniform ``n_time`` cells refined by the field's
    breakpoints; on each piece the integrands are evaluated at the
    midpoint, and the region indicators are integrated exactly on the
    product of pieces (``1/2`` on a diagonal pair, ``2/3`` or ``1/2`` on
    diagonal triples).
    """
    nodes, n_pieces = _mu_nodes(model, partition, u, n_time, u.breakpoints)
    K = len(nodes)

    def weight1(i_s, i_t):
        return 1.0 if i_s > i_t else 0.5 if i_s == i_t else 0.0

    def weight2(i_r, i_s, i_t):
        top = max(i_r, i_s)
        if top < i_t:
            return 0.0
        if top > i_t:
            return 1.0
        return 2.0 / 3.0 if i_r == i_s == i_t else 0.5

    def per_block(path):
        U = np.stack([u.value(path, m, x) for (_, m, x, _) in nodes])         # (K, n)
        l2 = np.einsum("k,kn->n", np.array([w for *_, w in nodes]), U ** 2)
        # D_{s,y} F_j per node and kernel tables h_j(t, x)
        Ds = []
        H = []
        for F, h in u.terms:
            Ds.append(np.stack([np.asarray(malliavin_D(F, path, m, x, model), dtype=float)
                                for (_, m, x, _) in nodes]))
            H.append(np.array([float(h(m, x)) for (_, m, x, _) in nodes]))
        Ds = np.stack(Ds)          # (J, K, n)
        H = np.stack(H)            # (J, K)
        A = np.einsum("jsn,jt->stn", Ds, H)   # D_s u(t)
        w = np.array([wt for *_, wt in nodes])
        idx = [i for (i, *_rest) in nodes]
        W1 = np.array([[weight1(idx[s], idx[t_]) for t_ in range(K)] for s in range(K)])
        d1 = np.einsum("st,s,t,stn->n", W1, w, w, A ** 2)
        d2 = np.zeros(path.n)
        if second_order:
            D2 = np.zeros((len(u.terms), K, K, path.n))
            for j, (F, _) in enumerate(u.terms):
                if F.breakpoints == () and F.jump_blind:
                    continue
                for a in range(K):
                    for b in range(a, K):
                        za = (nodes[a][1], nodes[a][2])
                        zb = (nodes[b][1], nodes[b][2])
                        val = np.asarray(malliavin_D2(F, path, za, zb, model), dtype=float)
                        D2[j, a, b] = val
                        D2[j, b, a] = val
            B = np.einsum("jrsn,jt->rstn", D2, H)
            W2 = np.array([[[weight2(idx[r], idx[s], idx[t_]) for t_ in range(K)]
                            for s in range(K)] for r in range(K)])
            d2 = np.einsum("rst,r,s,t,rstn->n", W2, w, w, w, B ** 2)
        return np.stack([l2, d1, d2], axis=1)

    vals = ensemble.map(per_block, workers)
    (l2, s0), (d1, s1), (d2, s2) = (mc_mean(vals[:, k]) for k in range(3))
    return SeminormReport(l2, d1, d2, s0, s1, s2,
                          {"time_pieces": n_pieces, "nodes": K, "second_order": second_order})


# --------------------------------------------------------------------------
# bridge between jump sums and Skorohod integrals
# --------------------------------------------------------------------------


@dataclass
class BridgeReport:
    lhs: np.ndarray
    skorohod: np.ndarray
    drift: np.ndarray
    dminus: np.ndarray
    residual: np.ndarray
    mean_residual: float
    se: float
    warnings: list = field(default_factory=list)


def bridge_terms(u, path: CanonicalPath, model: LevyModel, partition: ShellPartition,
                 region: ValueSet, t: float | None = None, warnings: list | None = None):
    """Per-row ``(lhs, delta term, dnu drift term, D^- dmu term)``.

    ``lhs`` is the uncompensated sum of ``u(s-, x) x`` over jumps in the
    region.  The integrand ``u(s-, y) + y D^- u(s-, y)`` of the Skorohod
    term is frozen on cells (time piece x nu node) and integrated with
    :func:`skorohod_simple`.
    """
    raw = path.batch()
    t = raw.T if t is None else float(t)
    region = region.without_zero()
    if warnings is not None:
        below = region.intersect(ValueSet.abs_between(0.0, partition.floor))
        if model.nu.mass(below) > 0:
            warnings.append(f"region reaches below the truncation floor {partition.floor:g}")
    covered = region.intersect(partition.coverage)
    times, sizes = raw.jump_times, raw.jump_sizes
    mask = np.isfinite(times) & (times <= t) & covered.contains(sizes)
    ul = np.where(mask, u.left(raw, np.where(mask, times, t), sizes), 0.0)
    lhs = np.sum(ul * sizes, axis=1)
    nodes = _jump_nodes(model, partition, covered)
    if isinstance(u, SimpleRandomField):
        frozen, drift, dmu = _frozen_simple(u, raw, t, model, partition, covered, nodes)
    elif isinstance(u, AdaptedField):
        frozen, drift, dmu = _frozen_adapted(u, raw, t, covered, nodes)
    else:
        raise UnsupportedOperation("bridge needs a simple or adapted field")
    delta = np.asarray(skorohod_simple(frozen, raw, t, model, partition))
    return lhs, delta, drift, dmu


def _frozen_simple(u, path, t, model, partition, covered, nodes):
    terms = []
    drift = np.zeros(path.n)
    dmu = np.zeros(path.n)
    breaks = u.breakpoints
    mids, lens, edges = _time_pieces(path.grid, t, breaks, with_grid=False)
    for F, h in u.terms:
        hr = h.restrict(0.0, t, covered)
        terms.append((F, hr))
        f = F.evaluate(path)
        anticipating = not _derivative_vanishes_on(F, h, brownian=False)
        for m, ds, a, b in zip(mids, lens, edges[:-1], edges[1:]):
            for x, w, rep, cell in zip(nodes.x, nodes.w, nodes.rep, nodes.cells):
                hv = float(h(m, x))
                if hv == 0:
                    continue
                drift += ds * w * x * hv * f
                if anticipating:
                    G = FrozenDifference(F, m, rep)
                    g = G.evaluate(path)
                    dmu += ds * w * x * x * hv * g / rep
                    terms.append((G, h.restrict(a, b, cell)))
    return SimpleRandomField(terms, name=f"frozen({u.name})"), drift, dmu


def _frozen_adapted(u: AdaptedField, path, t, covered, nodes):
    terms = []
    drift = np.zeros(path.n)
    grid = path.grid
    for a, b in zip(grid[:-1], grid[1:]):
        if a >= t:
            break
        b = min(b, t)
        coef = u.coefficient_at(float(a))
        c = coef.evaluate(path)
        m = 0.5 * (a + b)
        for x, w, cell in zip(nodes.x, nodes.w, nodes.cells):
            kv = float(u.kernel(m, x))
            if kv == 0:
                continue
            drift += (b - a) * w * x * kv * c
        terms.append((coef, u.kernel.restrict(a, b, covered)))
    return SimpleRandomField(terms, name=f"frozen({u.name})"), drift, np.zeros(path.n)


def pathwise_skorohod_bridge(u, ensemble, model: LevyModel, partition: ShellPartition,
                             region: ValueSet, t: float | None = None,
                             workers: int = 1) -> BridgeReport:
    """Residual ``lhs - (delta + drift + D^- term)`` over an ensemble."""
    warnings: list = []
    if not getattr(u, "left_limit_safe", False):
        raise UnsupportedOperation("field is not flagged left-limit safe")

    def per_block(path):
        return np.stack(bridge_terms(u, path, model, partition, region, t, warnings), axis=1)

    vals = ensemble.map(per_block, workers)
    lhs, sk, dr, dm = vals.T
    res = lhs - sk - dr - dm
    mean, se = mc_mean(res)
    return BridgeReport(lhs, sk, dr, dm, res, mean, se, sorted(set(warnings)))


# --------------------------------------------------------------------------
# energy bound
# --------------------------------------------------------------------------


@dataclass
class EnergyReport:
    second_moment: float
    se_moment: float
    bound: float              # 2 ||u||_F^2
    se_bound: float
    margin: float
    seminorms: SeminormReport

    @property
    def holds(self) -> bool:
        return self.margin >= -3.0 * (self.se_moment + self.se_bound)


def energy_bound_check(u: SimpleRandomField, model: LevyModel, partition: ShellPartition,
                       ensemble, n_time: int = 8, workers: int = 1,
                       seminorm_ensemble=None) -> EnergyReport:
    """Compare ``E[delta(u)^2]`` with ``2 ||u||_F^2``.

    The seminorms are costlier per path, so they may use a separate
    (smaller) ``seminorm_ensemble``.
    """
    sq = ensemble.map(lambda p: np.asarray(skorohod_simple(u, p, None, model, partition)) ** 2,
                      workers)
    m, se = mc_mean(sq)
    semi = ensemble if seminorm_ensemble is None else seminorm_ensemble
    rep = seminorms(u, model, partition, semi, n_time=n_time, workers=workers)
    bound = 2.0 * rep.norm_F
    return EnergyReport(m, se, bound, 2.0 * rep.se_F, bound - m, rep)
