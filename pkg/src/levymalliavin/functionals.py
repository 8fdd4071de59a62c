"""Random variables on the canonical Lévy space and their derivatives.

A :class:`RandomFunctional` maps a (batched) path to one value per row.  It
may carry an analytic Brownian gradient ``t -> D^W_t F``, an adaptedness
horizon and a tuple of *breakpoints*: times such that ``s -> D^W_s F`` and
``s -> Psi_{s,x} F`` are constant between consecutive breakpoints.  The
Skorohod machinery uses breakpoints to integrate over time exactly with a
handful of evaluations; ``None`` means "unknown", and callers fall back to
the time grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .canonical_path import CanonicalPath, add_jump, evaluate_X
from .levy_model import LevyModel, ShellPartition, ValueSet

__all__ = [
    "UnsupportedOperation",
    "RandomFunctional",
    "Constant",
    "FunctionOf",
    "LambdaFunctional",
    "Process",
    "BrownianProcess",
    "JumpSumProcess",
    "XProcess",
    "ProcessAt",
    "DerivativeFunctional",
    "constant",
    "brownian_at",
    "cylindrical",
    "sin_WT",
    "jump_sum",
    "jump_sum_sq",
    "cos_jump_sum",
    "X_at",
    "bump",
    "mollified",
    "psi",
    "brownian_derivative",
    "malliavin_D",
    "malliavin_D2",
    "psi_product_check",
    "product_rule_ulps",
    "left_limit_eval",
]


class UnsupportedOperation(RuntimeError):
    """The requested operation is outside what the catalog can do exactly."""


def _merge_breaks(*groups):
    out = set()
    for g in groups:
        if g is None:
            return None
        out.update(float(b) for b in g)
    return tuple(sorted(out))


def _max_or_none(values):
    values = list(values)
    if any(v is None for v in values):
        return None
    return max(values, default=0.0)


class RandomFunctional:
    """Evaluable map ``path -> R`` with optional calculus metadata."""

    name: str = "F"
    adapted_up_to: float | None = None
    bound: float | None = None
    jump_blind: bool = False
    breakpoints: tuple | None = None

    def evaluate(self, path: CanonicalPath) -> np.ndarray:
        raise NotImplementedError

    def _gradient(self, path: CanonicalPath, t):
        return None

    @property
    def has_gradient(self) -> bool:
        return type(self)._gradient is not RandomFunctional._gradient

    def gradient(self, path: CanonicalPath, t) -> np.ndarray:
        """Analytic ``D^W_t F`` per row."""
        g = self._gradient(path, t)
        if g is None:
            raise UnsupportedOperation(f"{self.name} has no analytic Brownian gradient")
        return np.broadcast_to(np.asarray(g, dtype=float), (path.n,))

    def __call__(self, path: CanonicalPath):
        return path.out(self.evaluate(path))

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"

    # -- algebra -----------------------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        return FunctionOf(lambda a, b: a + b, [lambda a, b: 1.0, lambda a, b: 1.0],
                          [self, other], name=f"({self.name}+{other.name})",
                          bound=_add_bounds(self.bound, other.bound))

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other)
        return FunctionOf(lambda a, b: a - b, [lambda a, b: 1.0, lambda a, b: -1.0],
                          [self, other], name=f"({self.name}-{other.name})",
                          bound=_add_bounds(self.bound, other.bound))

    def __mul__(self, other):
        other = _lift(other)
        bound = None if self.bound is None or other.bound is None else self.bound * other.bound
        return FunctionOf(lambda a, b: a * b, [lambda a, b: b, lambda a, b: a],
                          [self, other], name=f"{self.name}*{other.name}", bound=bound)

    __rmul__ = __mul__

    def __neg__(self):
        return -1.0 * self


def _add_bounds(a, b):
    return None if a is None or b is None else a + b


def _lift(x) -> RandomFunctional:
    if isinstance(x, RandomFunctional):
        return x
    return Constant(float(x))


class Constant(RandomFunctional):
    jump_blind = True
    breakpoints = ()

    def __init__(self, c: float):
        self.c = float(c)
        self.name = repr(self.c)
        self.bound = abs(self.c)
        self.adapted_up_to = 0.0

    def evaluate(self, path):
        return np.full(path.n, self.c)

    def _gradient(self, path, t):
        return 0.0


class FunctionOf(RandomFunctional):
    """``g(F_1, ..., F_k)`` with the partial derivatives of ``g`` supplied."""

    def __init__(self, g: Callable, partials: Sequence[Callable], args: Sequence[RandomFunctional],
                 name: str | None = None, bound: float | None = None):
        if len(partials) != len(args):
            raise ValueError("one partial derivative per argument is required")
        self.g = g
        self.partials = list(partials)
        self.args = list(args)
        self.name = name or f"g({', '.join(a.name for a in args)})"
        self.bound = bound
        self.adapted_up_to = _max_or_none(a.adapted_up_to for a in args)
        self.jump_blind = all(a.jump_blind for a in args)
        self.breakpoints = _merge_breaks(*(a.breakpoints for a in args))
        self._analytic = all(a.has_gradient for a in args)

    def evaluate(self, path):
        vals = [a.evaluate(path) for a in self.args]
        return np.broadcast_to(np.asarray(self.g(*vals), dtype=float), (path.n,)).copy()

    @property
    def has_gradient(self) -> bool:
        return self._analytic

    def _gradient(self, path, t):
        if not self._analytic:
            return None
        vals = [a.evaluate(path) for a in self.args]
        total = np.zeros(path.n)
        for dg, a in zip(self.partials, self.args):
            if a.jump_blind and a.breakpoints == ():
                continue  # constants
            total = total + np.asarray(dg(*vals), dtype=float) * a.gradient(path, t)
        return total


class LambdaFunctional(RandomFunctional):
    """Wrap user code; without ``gradient`` only finite differences apply."""

    def __init__(self, fn: Callable[[CanonicalPath], np.ndarray], gradient: Callable | None = None,
                 name: str = "lambda", adapted_up_to=None, bound=None, jump_blind=False,
                 breakpoints=None):
        self.fn = fn
        self._grad = gradient
        self.name = name
        self.adapted_up_to = adapted_up_to
        self.bound = bound
        self.jump_blind = jump_blind
        self.breakpoints = breakpoints

    def evaluate(self, path):
        return np.broadcast_to(np.asarray(self.fn(path), dtype=float), (path.n,)).copy()

    @property
    def has_gradient(self) -> bool:
        return self._grad is not None

    def _gradient(self, path, t):
        return None if self._grad is None else self._grad(path, t)


# --------------------------------------------------------------------------
# processes and their values at fixed times
# --------------------------------------------------------------------------


class Process:
    """Càdlàg process ``t -> Z_t(omega)`` with left limits by strict jump sums."""

    name = "Z"
    jump_blind = False

    def value(self, path: CanonicalPath, t, left: bool = False) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, path: CanonicalPath, t, s) -> np.ndarray:
        """``D^W_s Z_t``."""
        raise UnsupportedOperation(f"{self.name} has no analytic gradient")

    def at(self, t: float) -> "ProcessAt":
        return ProcessAt(self, t)


class BrownianProcess(Process):
    name = "W"
    jump_blind = True

    def value(self, path, t, left=False):
        return path.brownian_at(t)

    def gradient(self, path, t, s):
        return np.where(np.asarray(s) <= np.asarray(t), 1.0, 0.0) * np.ones(path.n)


class JumpSumProcess(Process):
    """``S_t = sum of jump sizes up to t`` (optionally restricted to ``values``)."""

    def __init__(self, values: ValueSet | None = None):
        self.values = values
        self.name = "S" if values is None else "S[values]"

    def value(self, path, t, left=False):
        return path.jump_sum(t, left=left, values=self.values)

    def gradient(self, path, t, s):
        return np.zeros(path.n)


class XProcess(Process):
    name = "X"

    def __init__(self, model: LevyModel, partition: ShellPartition):
        self.model = model
        self.partition = partition

    def value(self, path, t, left=False):
        return np.asarray(evaluate_X(path.batch(),
                                     self.model, self.partition, t, left=left))

    def gradient(self, path, t, s):
        return self.model.sigma * np.where(np.asarray(s) <= np.asarray(t), 1.0, 0.0) * np.ones(path.n)


class ProcessAt(RandomFunctional):
    """The random variable ``Z_t`` for a fixed time ``t``."""

    def __init__(self, process: Process, t: float):
        self.process = process
        self.t = float(t)
        self.name = f"{process.name}_{self.t:g}"
        self.adapted_up_to = self.t
        self.jump_blind = process.jump_blind
        self.breakpoints = (self.t,)

    def evaluate(self, path):
        return np.asarray(self.process.value(path, self.t), dtype=float)

    def _gradient(self, path, t):
        return self.process.gradient(path, self.t, t)


# --------------------------------------------------------------------------
# catalog
# --------------------------------------------------------------------------


def constant(c: float) -> Constant:
    return Constant(c)


def brownian_at(t: float) -> ProcessAt:
    return ProcessAt(BrownianProcess(), t)


def cylindrical(f: Callable, grads: Sequence[Callable], times: Sequence[float],
                Z: RandomFunctional | None = None, name: str = "f(W)",
                bound: float | None = None) -> RandomFunctional:
    """Smooth cylindrical variable ``f(W_{t_1}, ..., W_{t_n}) Z``.

    ``Z`` must not depend on the Brownian path; its gradient is taken as 0.
    """
    head = FunctionOf(f, grads, [brownian_at(t) for t in times], name=name, bound=bound)
    if Z is None:
        return head
    if Z.jump_blind and Z.breakpoints != ():
        raise ValueError("Z must be a functional of the jump part only")
    return head * Z


def sin_WT(T: float) -> RandomFunctional:
    return cylindrical(np.sin, [np.cos], [T], name="sin(W_T)", bound=1.0)


def jump_sum(t: float, values: ValueSet | None = None) -> ProcessAt:
    return ProcessAt(JumpSumProcess(values), t)


def jump_sum_sq(t: float) -> RandomFunctional:
    S = jump_sum(t)
    return FunctionOf(lambda a: a * a, [lambda a: 2 * a], [S], name="S_T^2")


def cos_jump_sum(t: float) -> RandomFunctional:
    S = jump_sum(t)
    return FunctionOf(np.cos, [lambda a: -np.sin(a)], [S], name="cos(S_T)", bound=1.0)


def X_at(model: LevyModel, partition: ShellPartition, t: float) -> ProcessAt:
    return ProcessAt(XProcess(model, partition), t)


def bump(x):
    """Smooth cut-off: 1 on ``|x| <= 1``, 0 on ``|x| >= 2``."""
    x = np.abs(np.asarray(x, dtype=float))
    u = np.clip(x - 1.0, 0.0, 1.0)

    def psi(v):
        return np.where(v > 0, np.exp(-1.0 / np.where(v > 0, v, 1.0)), 0.0)

    return psi(1.0 - u) / (psi(1.0 - u) + psi(u))


def _bump_prime(x):
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    u = np.clip(a - 1.0, 0.0, 1.0)
    inside = (u > 0) & (u < 1)
    us = np.where(inside, u, 0.5)
    p = np.exp(-1.0 / (1.0 - us))
    q = np.exp(-1.0 / us)
    dp = -p / (1.0 - us) ** 2      # d/du psi(1-u)
    dq = q / us ** 2               # d/du psi(u)
    d = (dp * (p + q) - p * (dp + dq)) / (p + q) ** 2
    return np.where(inside, d * np.sign(x), 0.0)


def mollified(F: RandomFunctional, n: float) -> RandomFunctional:
    """``rho_n(F) = F * bump(F / n)``: bounded by ``2n`` and equal to F on ``|F| <= n``."""

    def rho(a):
        return a * bump(a / n)

    def drho(a):
        return bump(a / n) + a / n * _bump_prime(a / n)

    return FunctionOf(rho, [drho], [F], name=f"rho_{n:g}({F.name})", bound=2.0 * n)


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------


def psi(F: RandomFunctional, path: CanonicalPath, t, x):
    """``(F(omega_(t,x)) - F(omega)) / x``, computed by editing the path."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr == 0):
        raise ValueError("Psi_{t,x} is undefined for x = 0")
    edited = add_jump(path, t, x)
    return path.out((F.evaluate(edited) - F.evaluate(path)) / x_arr)


def _step(path: CanonicalPath, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("derivative time must lie in (0, T]")
    if t.ndim == 0:
        return np.broadcast_to((path.grid >= t).astype(float), path.brownian.shape)
    return (path.grid[None, :] >= t[:, None]).astype(float)


def fd_step_size(path: CanonicalPath) -> np.ndarray:
    return 1e-5 * (1.0 + np.max(np.abs(path.brownian), axis=1))


def brownian_derivative(F: RandomFunctional, path: CanonicalPath, t, mode: str = "analytic",
                        h: float | np.ndarray | None = None):
    """``D^W_t F`` per row.

    ``mode="fd"`` shifts every Brownian node at or after ``t`` by ``+-h``
    (a step at ``t``, i.e. the increment of the cell ending at or
    containing ``t``) and takes a central difference.
    """
    if mode == "analytic":
        return path.out(F.gradient(path, t))
    if mode not in ("fd", "auto"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "auto" and F.has_gradient:
        return path.out(F.gradient(path, t))
    return path.out(_fd_gradient(F.evaluate, path, t, h))


def _fd_gradient(fn, path, t, h=None):
    if h is None:
        h = fd_step_size(path)
    h = np.broadcast_to(np.asarray(h, dtype=float), (path.n,))
    if np.any(h == 0):
        raise ValueError("finite-difference step must be non-zero")
    step = _step(path, t) * h[:, None]
    up = fn(path.with_brownian(path.brownian + step))
    down = fn(path.with_brownian(path.brownian - step))
    return (up - down) / (2.0 * h)


def malliavin_D(F: RandomFunctional, path: CanonicalPath, t, x, model: LevyModel,
                mode: str = "auto"):
    """``D_{t,x} F``: ``sigma^-1 D^W_t F`` on ``x = 0``, ``Psi_{t,x} F`` elsewhere."""
    x_arr = np.asarray(x, dtype=float)
    if x_arr.ndim == 0 and x_arr == 0:
        if model.sigma == 0:
            raise ValueError("D_{t,0} needs sigma > 0")
        raw = np.asarray(brownian_derivative(F, path.batch(), t, mode=mode))
        return path.out(raw / model.sigma)
    if np.any(x_arr == 0):
        raise ValueError("mixed zero/non-zero x arrays are not supported")
    return psi(F, path, t, x)


class DerivativeFunctional(RandomFunctional):
    """The random variable ``D_{t,x} F`` for fixed ``(t, x)``.

    Its own Brownian gradient is a finite difference of the (analytic when
    available) inner derivative.
    """

    def __init__(self, F: RandomFunctional, t: float, x: float, model: LevyModel):
        self.F, self.t, self.x, self.model = F, float(t), float(x), model
        self.name = f"D_({self.t:g},{self.x:g}){F.name}"
        self.adapted_up_to = F.adapted_up_to
        self.jump_blind = F.jump_blind
        self.breakpoints = _merge_breaks(F.breakpoints, (self.t,))

    def evaluate(self, path):
        raw = path.batch()
        return np.asarray(malliavin_D(self.F, raw, self.t, self.x, self.model), dtype=float)

    @property
    def has_gradient(self) -> bool:
        return True

    def _gradient(self, path, t):
        raw = path.batch()
        return _fd_gradient(self.evaluate, raw, t)


def malliavin_D2(F: RandomFunctional, path: CanonicalPath, z1, z2, model: LevyModel):
    """``D_{z1} D_{z2} F``; jump-jump pairs are exact double path edits."""
    (t1, x1), (t2, x2) = z1, z2
    if x1 != 0 and x2 != 0:
        w1 = add_jump(path, t1, x1)
        w2 = add_jump(path, t2, x2)
        w12 = add_jump(w1, t2, x2)
        val = (F.evaluate(w12) - F.evaluate(w1) - F.evaluate(w2) + F.evaluate(path)) / (x1 * x2)
        return path.out(val)
    # put the jump derivative outside so the inner one stays analytic
    if x2 != 0 and x1 == 0:
        (t1, x1), (t2, x2) = (t2, x2), (t1, x1)
    inner = DerivativeFunctional(F, t2, x2, model)
    return malliavin_D(inner, path, t1, x1, model)


def psi_product_check(F: RandomFunctional, G: RandomFunctional, path: CanonicalPath, t, x):
    """Both sides of ``Psi(FG) = Psi(F) G + F Psi(G) + (F(omega_z) - F) Psi(G)``."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr == 0):
        raise ValueError("Psi_{t,x} is undefined for x = 0")
    edited = add_jump(path, t, x)
    f0, g0 = F.evaluate(path), G.evaluate(path)
    f1, g1 = F.evaluate(edited), G.evaluate(edited)
    lhs = (f1 * g1 - f0 * g0) / x_arr
    psi_f = (f1 - f0) / x_arr
    psi_g = (g1 - g0) / x_arr
    rhs = psi_f * g0 + f0 * psi_g + (f1 - f0) * psi_g
    return path.out(lhs), path.out(rhs)


def product_rule_ulps(F, G, path, t, x) -> np.ndarray:
    """Product-rule residual in units of ``eps * scale``.

    ``scale`` sums the magnitudes of every term entering either side, which
    is the size the floating-point error is proportional to.
    """
    x_arr = np.asarray(x, dtype=float)
    edited = add_jump(path, t, x)
    f0, g0 = F.evaluate(path), G.evaluate(path)
    f1, g1 = F.evaluate(edited), G.evaluate(edited)
    lhs = (f1 * g1 - f0 * g0) / x_arr
    psi_f = (f1 - f0) / x_arr
    psi_g = (g1 - g0) / x_arr
    terms = (psi_f * g0, f0 * psi_g, (f1 - f0) * psi_g)
    rhs = terms[0] + terms[1] + terms[2]
    scale = (np.abs(f1 * g1) + np.abs(f0 * g0)) / np.abs(x_arr) + sum(np.abs(v) for v in terms)
    scale = np.where(scale == 0, 1.0, scale)
    return np.abs(lhs - rhs) / (np.finfo(float).eps * scale)


def left_limit_eval(obj, path: CanonicalPath, s, y=None):
    """Value just before ``s``.

    Processes drop the jumps at exactly ``s`` from their own jump sums;
    jump-blind variables are continuous in time; random fields use their
    left-continuous kernels (``y`` required).  Anything else is refused.
    """
    if isinstance(obj, Process):
        return path.out(obj.value(path, s, left=True))
    if isinstance(obj, ProcessAt):
        return path.out(obj.process.value(path, s, left=True))
    if hasattr(obj, "left") and callable(obj.left):
        if y is None:
            raise ValueError("random fields need the jump coordinate y")
        return path.out(obj.left(path, s, y))
    if isinstance(obj, RandomFunctional) and obj.jump_blind:
        return path.out(obj.evaluate(path))
    raise UnsupportedOperation(f"{getattr(obj, 'name', obj)!r} has no catalogued left limit")
