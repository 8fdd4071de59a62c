"""Processes ``Y`` built from coefficient fields and term-by-term ledgers of the
anticipating change-of-variable formulas.

``Y^(i)_t = Y0 + int_0^t u_i dW (Skorohod) + int_0^t sigma_i ds
           + sum of v_i1(s-, x) x over jumps with |x| > 1
           + compensated integral of v_i2(s-, x) x over eps < |x| <= 1``

Conventions used throughout:

* Continuous parts are accumulated on grid cells (kernels at cell
  midpoints) and interpolated linearly between nodes, like ``W`` itself.
* ``ds`` integrands that involve ``Y`` use the left grid point of each cell.
* The Wiener-slice Skorohod term is written as ``int ... delta W`` and the
  diffusion ``D^-`` term carries a factor ``sigma``, so both match
  ``D_{s,0} = sigma^-1 D^W``; for ``sigma = 1`` this is the textbook form.
* ``D^- Y(s_k, 0)`` is the Brownian derivative of ``Y_{s_k}`` in the
  direction of the next cell's increment (scaled by ``sigma^-1``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .anticipating import SimpleRandomField, _jump_nodes, slice_indicator
from .canonical_path import CanonicalPath, add_jump
from .chaos import mc_mean
from .functionals import (Constant, DerivativeFunctional, RandomFunctional,
                          UnsupportedOperation, brownian_at, brownian_derivative, cos_jump_sum,
                          jump_sum)
from .levy_model import LevyModel, ShellPartition, ValueSet, first_moment_finite

__all__ = [
    "YComponent",
    "YSpec",
    "TestFunction",
    "TEST_FUNCTIONS",
    "YPath",
    "build_Y_epsilon",
    "derivative_spec",
    "d_minus_Y",
    "epsilon_convergence_study",
    "EpsilonStudy",
    "ItoLedger",
    "ito_ledger_general",
    "ito_ledger_finite_variation",
    "refinement_study",
    "RefinementStudy",
    "spec_catalog",
]


# --------------------------------------------------------------------------
# specifications
# --------------------------------------------------------------------------


@dataclass
class YComponent:
    """Coefficients of one component of ``Y``; missing fields are zero."""

    y0: RandomFunctional = field(default_factory=lambda: Constant(0.0))
    u: SimpleRandomField | None = None
    drift: SimpleRandomField | None = None
    v1: SimpleRandomField | None = None
    v2: SimpleRandomField | None = None

    def fields(self):
        return [f for f in (self.u, self.drift, self.v1, self.v2) if f is not None]


@dataclass
class YSpec:
    """A process ``Y`` with optional closed forms.

    ``closed_form(path, t)`` returns ``Y_t`` as ``(dim, n, q)`` for grid
    times ``t`` of shape ``(q,)``.  ``d_minus_hook(path, s)`` returns
    ``D^- Y(s, 0)`` as ``(dim, n, q)`` for times ``s`` of shape ``(q,)``.
    ``bounds`` holds hypothesis tags; a ``None`` entry marks a violated or
    unverifiable bound and puts the run in empirical mode.
    """

    components: list
    name: str = "Y"
    closed_form: Callable | None = None
    d_minus_hook: Callable | None = None
    bounds: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.components)

    def _functionals(self):
        for c in self.components:
            yield c.y0, None
            for fld in c.fields():
                for F, h in fld.terms:
                    yield F, h

    @property
    def is_adapted(self) -> bool:
        """Every coefficient is measurable before its kernel switches on."""
        for F, h in self._functionals():
            if h is None:
                continue
            if F.breakpoints == () and F.jump_blind:
                continue
            if F.adapted_up_to is None or F.adapted_up_to > h.t_min:
                return False
        return True

    @property
    def jump_insensitive(self) -> bool:
        """Adding a future jump leaves every coefficient unchanged."""
        for F, h in self._functionals():
            if F.jump_blind:
                continue
            if h is not None and F.adapted_up_to is not None and F.adapted_up_to <= h.t_min:
                continue
            return False
        return True

    @property
    def empirical_mode(self) -> bool:
        return any(v is None for v in self.bounds.values())


@dataclass(frozen=True)
class TestFunction:
    """``F: R^dim -> R`` with analytic gradient and Hessian.

    Arrays carry the component axis first: ``f(y)`` maps ``(dim, ...)`` to
    ``(...)``, ``grad`` to ``(dim, ...)`` and ``hess`` to ``(dim, dim, ...)``.
    """

    __test__ = False  # keep pytest from collecting this class

    name: str
    dim: int
    f: Callable
    grad: Callable
    hess: Callable
    bounded: bool = True


def _one_dim(name, f, df, d2f, bounded):
    return TestFunction(name, 1, lambda y: f(y[0]), lambda y: df(y[0])[None],
                        lambda y: d2f(y[0])[None, None], bounded)


TEST_FUNCTIONS = {
    "square": _one_dim("square", lambda y: y * y, lambda y: 2 * y,
                       lambda y: 2 * np.ones_like(y), False),
    "sin": _one_dim("sin", np.sin, np.cos, lambda y: -np.sin(y), True),
    "cos": _one_dim("cos", np.cos, lambda y: -np.sin(y), lambda y: -np.cos(y), True),
    "sin_sum": TestFunction(
        "sin_sum", 2, lambda y: np.sin(y[0] + y[1]),
        lambda y: np.stack([np.cos(y[0] + y[1])] * 2),
        lambda y: np.stack([np.stack([-np.sin(y[0] + y[1])] * 2)] * 2), True),
    "sin_cos": TestFunction(
        "sin_cos", 2, lambda y: np.sin(y[0]) * np.cos(y[1]),
        lambda y: np.stack([np.cos(y[0]) * np.cos(y[1]), -np.sin(y[0]) * np.sin(y[1])]),
        lambda y: np.stack([
            np.stack([-np.sin(y[0]) * np.cos(y[1]), -np.cos(y[0]) * np.sin(y[1])]),
            np.stack([-np.cos(y[0]) * np.sin(y[1]), -np.sin(y[0]) * np.cos(y[1])])]), True),
}


# --------------------------------------------------------------------------
# evaluating Y on a batch
# --------------------------------------------------------------------------


def _field_on_cells(fld: SimpleRandomField | None, path: CanonicalPath, mids: np.ndarray,
                    x) -> np.ndarray:
    """``u(mid_k, x)`` as ``(n, M)``; ``x`` scalar."""
    out = np.zeros((path.n, mids.size))
    if fld is None:
        return out
    for F, h in fld.terms:
        hk = np.asarray(h(mids, x), dtype=float) * np.ones(mids.size)
        if not hk.any():
            continue
        out += F.evaluate(path)[:, None] * hk[None, :]
    return out


def _gradient_on_cells(fld: SimpleRandomField | None, path: CanonicalPath,
                       mids: np.ndarray) -> np.ndarray:
    """``D^W_{mid_k} u(mid_k, 0)`` as ``(n, M)``, one gradient per breakpoint piece."""
    out = np.zeros((path.n, mids.size))
    if fld is None:
        return out
    for F, h in fld.terms:
        hk = np.asarray(h(mids, 0.0), dtype=float) * np.ones(mids.size)
        if not hk.any() or (F.breakpoints == () and F.jump_blind):
            continue
        if F.adapted_up_to is not None and F.adapted_up_to <= h.t_min:
            continue
        if F.breakpoints is None:
            keys = np.arange(mids.size)
        else:
            keys = np.searchsorted(np.asarray(F.breakpoints, dtype=float), mids, side="left")
        cache = {}
        for k in np.flatnonzero(hk):
            key = int(keys[k])
            if key not in cache:
                cache[key] = np.asarray(brownian_derivative(F, path, mids[k], mode="auto"))
            out[:, k] += hk[k] * cache[key]
    return out


def _jump_table(fld: SimpleRandomField | None, path: CanonicalPath, mask: np.ndarray):
    """``v(s-, x) x`` at every jump selected by ``mask`` as ``(n, J)``."""
    if fld is None or not mask.any():
        return np.zeros(path.jump_times.shape)
    s = np.where(mask, path.jump_times, path.T)
    x = np.where(mask, path.jump_sizes, 1.0)
    vals = np.asarray(fld.left(path, s, x), dtype=float)
    return np.where(mask, vals * path.jump_sizes, 0.0)


class YPath:
    """``Y^eps`` on one batch: continuous part on the grid plus jump contributions."""

    def __init__(self, spec: YSpec, path: CanonicalPath, model: LevyModel,
                 partition: ShellPartition, eps: float | None = None):
        path = path.batch()
        eps = partition.floor if eps is None else float(eps)
        if not 0 < eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        if eps < partition.floor * (1 - 1e-12):
            raise ValueError(f"eps={eps:g} is below the truncation floor {partition.floor:g}")
        self.spec, self.path, self.model, self.partition, self.eps = \
            spec, path, model, partition, eps
        grid = path.grid
        self.mids = 0.5 * (grid[1:] + grid[:-1])
        self.ds = np.diff(grid)
        n, M = path.n, grid.size - 1
        dW = np.diff(path.brownian, axis=1)
        self.small_values = ValueSet.abs_between(eps, 1.0)
        nodes = _jump_nodes(model, partition, self.small_values)
        sizes, times = path.jump_sizes, path.jump_times
        live = np.isfinite(times)
        self.big_mask = live & (np.abs(sizes) > 1.0)
        self.small_mask = live & (np.abs(sizes) > eps) & (np.abs(sizes) <= 1.0)
        cont, jumps, y0 = [], [], []
        self.U, self.dU, self.drift = [], [], []
        for comp in spec.components:
            U = _field_on_cells(comp.u, path, self.mids, 0.0)
            dU = _gradient_on_cells(comp.u, path, self.mids)
            Dr = _field_on_cells(comp.drift, path, self.mids, 0.0)
            comp_rate = np.zeros((n, M))
            if comp.v2 is not None and nodes.x.size:
                for F, h in comp.v2.terms:
                    H = np.asarray(h(self.mids[:, None], nodes.x[None, :]), dtype=float)
                    rate = H @ (nodes.w * nodes.x)
                    if rate.any():
                        comp_rate += F.evaluate(path)[:, None] * rate[None, :]
            incr = U * dW - dU * self.ds + (Dr - comp_rate) * self.ds
            cont.append(np.concatenate([np.zeros((n, 1)), np.cumsum(incr, axis=1)], axis=1))
            jumps.append(_jump_table(comp.v1, path, self.big_mask)
                         + _jump_table(comp.v2, path, self.small_mask))
            y0.append(comp.y0.evaluate(path))
            self.U.append(U)
            self.dU.append(dU)
            self.drift.append(Dr)
        self.cont = np.stack(cont)          # (dim, n, M + 1)
        self.jumps = np.stack(jumps)        # (dim, n, J)
        self.y0 = np.stack(y0)              # (dim, n)
        self.U = np.stack(self.U)
        self.dU = np.stack(self.dU)
        self.drift = np.stack(self.drift)
        self.nodes = nodes

    def at(self, t, left: bool = False) -> np.ndarray:
        """``Y_t`` (or ``Y_{t-}``) as ``(dim, n, ...)`` for ``t`` shaped like path times."""
        path = self.path
        t = np.asarray(t, dtype=float)
        grid = path.grid
        M = grid.size - 1
        idx = np.clip(np.searchsorted(grid, t, side="right") - 1, 0, M - 1)
        frac = (t - grid[idx]) / (grid[idx + 1] - grid[idx])
        if t.ndim == 0:
            c0, c1 = self.cont[:, :, idx], self.cont[:, :, idx + 1]
        else:
            if t.ndim == 1:
                t = np.broadcast_to(t, (path.n, t.size))
                idx = np.broadcast_to(idx, t.shape)
                frac = np.broadcast_to(frac, t.shape)
            rows = np.arange(path.n).reshape((path.n,) + (1,) * (t.ndim - 1))
            c0, c1 = self.cont[:, rows, idx], self.cont[:, rows, idx + 1]
        cont = c0 + (c1 - c0) * frac
        times = path.jump_times
        if t.ndim == 0:
            sel = times < t if left else times <= t
            jump = np.sum(np.where(sel[None], self.jumps, 0.0), axis=-1)
        else:
            tt = t[..., None]
            tm = times.reshape((path.n,) + (1,) * (t.ndim - 1) + (-1,))
            sel = tm < tt if left else tm <= tt
            jm = self.jumps.reshape((self.jumps.shape[0], path.n) + (1,) * (t.ndim - 1) + (-1,))
            jump = np.sum(np.where(sel[None], jm, 0.0), axis=-1)
        y0 = self.y0.reshape(self.y0.shape + (1,) * (cont.ndim - 2))
        return y0 + cont + jump

    def on_grid(self) -> np.ndarray:
        """``Y`` at every grid node, ``(dim, n, M + 1)``."""
        sel = self.path.jump_times[:, None, :] <= self.path.grid[None, :, None]
        jump = np.einsum("dnj,nmj->dnm", self.jumps, sel.astype(float))
        return self.y0[:, :, None] + self.cont + jump


def build_Y_epsilon(spec: YSpec, path: CanonicalPath, model: LevyModel,
                    partition: ShellPartition, eps: float, t: float):
    """``Y^eps_t`` per component (``(dim,)`` for single paths, ``(dim, n)`` otherwise)."""
    Y = YPath(spec, path, model, partition, eps).at(float(t))
    return Y[:, 0] if path.single else Y


def derivative_spec(spec: YSpec, s: float, x: float, model: LevyModel) -> YSpec:
    """The spec of ``D_{s,x} Y_r`` for ``r < s``: every coefficient differentiated."""

    def d(F):
        if F.breakpoints == () and F.jump_blind:
            return Constant(0.0)
        return DerivativeFunctional(F, s, x, model)

    def dfield(fld):
        if fld is None:
            return None
        return SimpleRandomField([(d(F), h) for F, h in fld.terms], name=f"D{fld.name}")

    comps = [YComponent(d(c.y0), dfield(c.u), dfield(c.drift), dfield(c.v1), dfield(c.v2))
             for c in spec.components]
    return YSpec(comps, name=f"D({spec.name})")


def _cell_start(grid: np.ndarray, s: float) -> int:
    """Index of the grid node at or just below ``s``."""
    M = grid.size - 1
    return int(np.clip(np.searchsorted(grid, s, side="right") - 1, 0, M - 1))


def d_minus_Y(spec: YSpec, path: CanonicalPath, model: LevyModel, partition: ShellPartition,
              s: float, mode: str = "analytic", eps: float | None = None):
    """``D^- Y(s, 0)`` per component.

    ``s`` is mapped to the grid node ``r`` at or below it and the value is
    ``sigma^-1`` times the Brownian derivative of ``Y_r`` in the direction
    of the increment of the cell after ``r``.  ``analytic`` uses the spec's
    hook or, failing that, the differentiated spec; ``numeric`` perturbs
    that increment and differences the whole evaluation of ``Y``.
    """
    if model.sigma <= 0:
        raise ValueError("D^- Y(s, 0) needs sigma > 0")
    raw = path.batch()
    k = _cell_start(raw.grid, s)
    r = float(raw.grid[k])
    mid = 0.5 * (raw.grid[k] + raw.grid[k + 1])
    if spec.is_adapted:
        out = np.zeros((spec.dim, raw.n))
    elif mode == "analytic" and spec.d_minus_hook is not None:
        out = np.asarray(spec.d_minus_hook(raw, np.array([r])), dtype=float)[..., 0]
    elif mode == "analytic":
        out = YPath(derivative_spec(spec, mid, 0.0, model), raw, model, partition, eps).at(r)
    elif mode == "numeric":
        h = 1e-5 * (1.0 + np.max(np.abs(raw.brownian), axis=1))
        step = (raw.grid >= raw.grid[k + 1]).astype(float)[None, :] * h[:, None]
        up = YPath(spec, raw.with_brownian(raw.brownian + step), model, partition, eps).at(r)
        down = YPath(spec, raw.with_brownian(raw.brownian - step), model, partition, eps).at(r)
        out = (up - down) / (2 * h) / model.sigma
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return out[:, 0] if path.single else out


def _d_minus_Y_cells(spec, Yp: YPath, model, partition, upto: int) -> np.ndarray:
    """``D^- Y(s_k, 0)`` for cells ``k < upto`` as ``(dim, n, upto)``."""
    path = Yp.path
    if spec.is_adapted or model.sigma == 0:
        return np.zeros((spec.dim, path.n, upto))
    if spec.d_minus_hook is not None:
        return np.asarray(spec.d_minus_hook(path, path.grid[:upto]), dtype=float)
    out = np.zeros((spec.dim, path.n, upto))
    for k in range(upto):
        dspec = derivative_spec(spec, float(Yp.mids[k]), 0.0, model)
        out[:, :, k] = YPath(dspec, path, model, partition, Yp.eps).at(float(path.grid[k]))
    return out


def _d_minus_Y_jump_cells(spec, Yp: YPath, model, partition, upto: int, ys) -> np.ndarray:
    """``D^- Y(s_k, y)`` for ``y != 0`` as ``(dim, n, upto, len(ys))``.

    A jump ``(mid_k, y)`` is added to the path and ``Y`` is read at ``s_k``,
    before the jump, so only the coefficients see it.
    """
    path = Yp.path
    out = np.zeros((spec.dim, path.n, upto, len(ys)))
    if spec.jump_insensitive:
        return out
    for k in range(upto):
        r = float(path.grid[k])
        base = Yp.at(r)
        for j, y in enumerate(ys):
            edited = add_jump(path, float(Yp.mids[k]), float(y))
            out[:, :, k, j] = (YPath(spec, edited, model, partition, Yp.eps).at(r) - base) / y
    return out


# --------------------------------------------------------------------------
# epsilon study
# --------------------------------------------------------------------------


@dataclass
class EpsilonStudy:
    eps: list
    gap: list          # E[(Y^eps_t - Y_t)^2] summed over components
    se: list
    monotone: bool
    floor: float
    sup_gap: list = field(default_factory=list)   # E[max over grid nodes of |Y^eps - Y|^2]
    sup_se: list = field(default_factory=list)


def epsilon_convergence_study(spec: YSpec, ensemble, model: LevyModel,
                              partition: ShellPartition, schedule: Sequence[float],
                              t: float | None = None, workers: int = 1) -> EpsilonStudy:
    """Squared L2 gap between ``Y^eps_t`` and the finest ``Y`` (``eps`` = floor).

    A uniform-in-time diagnostic (squared maximum over grid nodes) is
    reported alongside; no rate is asserted for it.
    """
    schedule = sorted((float(e) for e in schedule), reverse=True)
    t = model.T if t is None else float(t)
    n = len(schedule)

    def per_block(path):
        ref = YPath(spec, path, model, partition, partition.floor)
        ref_t, ref_grid = ref.at(t), ref.on_grid()
        cols, sups = [], []
        for e in schedule:
            Yp = YPath(spec, path, model, partition, e)
            cols.append(np.sum((Yp.at(t) - ref_t) ** 2, axis=0))
            sups.append(np.max(np.sum((Yp.on_grid() - ref_grid) ** 2, axis=0), axis=-1))
        return np.stack(cols + sups, axis=1)

    vals = ensemble.map(per_block, workers)
    gaps, ses = zip(*(mc_mean(vals[:, k]) for k in range(n)))
    sups, sup_ses = zip(*(mc_mean(vals[:, n + k]) for k in range(n)))
    monotone = all(gaps[k + 1] <= gaps[k] + 3 * (ses[k] + ses[k + 1])
                   for k in range(n - 1))
    return EpsilonStudy(list(schedule), list(gaps), list(ses), monotone, partition.floor,
                        list(sups), list(sup_ses))


# --------------------------------------------------------------------------
# ledgers
# --------------------------------------------------------------------------


@dataclass
class ItoLedger:
    """Per-path terms of one change-of-variable identity.

    ``terms`` maps term names to per-path arrays; ``residual`` is
    ``lhs - sum(terms)``.  ``bound`` holds per-path quadrature bounds when
    the ledger can provide them.
    """

    kind: str
    lhs: np.ndarray
    terms: dict
    dt: float
    t: float
    bound: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    @property
    def rhs(self) -> np.ndarray:
        return sum(self.terms.values())

    @property
    def residual(self) -> np.ndarray:
        return self.lhs - self.rhs

    def summary(self) -> dict:
        out = {"lhs": mc_mean(self.lhs)}
        for k, v in self.terms.items():
            out[k] = mc_mean(v)
        out["residual"] = mc_mean(self.residual)
        return out

    def rms_residual(self) -> float:
        return float(np.sqrt(np.mean(self.residual ** 2)))

    def rms_lhs(self) -> float:
        return float(np.sqrt(np.mean(self.lhs ** 2)))

    @classmethod
    def concat(cls, parts: list["ItoLedger"]) -> "ItoLedger":
        first = parts[0]
        terms = {k: np.concatenate([p.terms[k] for p in parts]) for k in first.terms}
        bound = None if first.bound is None else np.concatenate([p.bound for p in parts])
        warnings = sorted({w for p in parts for w in p.warnings})
        return cls(first.kind, np.concatenate([p.lhs for p in parts]), terms, first.dt,
                   first.t, bound, warnings)


def _grid_index(grid: np.ndarray, t: float) -> int:
    k = int(np.argmin(np.abs(grid - t)))
    if not math.isclose(grid[k], t, rel_tol=0, abs_tol=1e-12):
        raise ValueError("ledgers are evaluated at grid nodes only")
    return k


def _contract(a, b):
    """``sum_i a_i b_i`` over the leading component axis."""
    return np.sum(a * b, axis=0)


def _common(spec, F: TestFunction, path, model, partition, eps, t):
    if F.dim != spec.dim:
        raise ValueError("test function and Y have different dimensions")
    Yp = YPath(spec, path, model, partition, eps)
    path = Yp.path
    m = _grid_index(path.grid, t)
    Yg = Yp.on_grid()
    Yk = Yg[:, :, :m]                                  # left points of cells < m
    ds = Yp.ds[:m]
    dW = np.diff(path.brownian, axis=1)[:, :m]
    U = Yp.U[:, :, :m]
    g = F.grad(Yk)                                     # (dim, n, m)
    H = F.hess(Yk)                                     # (dim, dim, n, m)
    return Yp, path, m, Yg, Yk, ds, dW, U, g, H


def _diffusion_terms(spec, Yp, model, partition, m, Yk, ds, dW, U, g, H):
    """Skorohod diffusion term, second-order term and the ``D^-`` diffusion term."""
    if not np.any(U):
        z = np.zeros(Yp.path.n)
        return z, z, z
    sig = model.sigma
    L = _d_minus_Y_cells(spec, Yp, model, partition, m)          # D^- Y(s_k, 0)
    future = sig * L                                            # D^W over the next cell
    G = _contract(g, U)
    DG = np.einsum("ijnk,jnk,ink->nk", H, future, U) + _contract(g, Yp.dU[:, :, :m])
    skorohod = np.sum(G * dW - DG * ds, axis=1)
    second = 0.5 * np.sum(np.einsum("ijnk,ink,jnk->nk", H, U, U) * ds, axis=1)
    dminus = np.sum(np.einsum("ijnk,jnk,ink->nk", H, future, U) * ds, axis=1)
    return skorohod, second, dminus


def _jump_sums(spec, F, Yp, t):
    """``Y_{s-}``, ``Delta Y`` at jumps up to ``t`` and the masks of small/big jumps."""
    path = Yp.path
    times = path.jump_times
    upto = np.isfinite(times) & (times <= t)
    s = np.where(upto, times, t)
    Yl = Yp.at(s, left=True)                     # (dim, n, J)
    dY = np.where(upto[None], Yp.jumps, 0.0)
    return Yl, dY, upto & Yp.small_mask, upto & Yp.big_mask


def ito_ledger_general(spec: YSpec, F: TestFunction, ensemble, model: LevyModel,
                       partition: ShellPartition, eps: float | None = None,
                       t: float | None = None, workers: int = 1) -> ItoLedger:
    """Every term of the anticipating formula with truncated small jumps.

    Terms: ``delta_diffusion`` and ``delta_jump`` (the Skorohod term split
    by slice), ``second_order``, ``drift``, ``dminus_diffusion``,
    ``dminus_jump``, ``small_jumps`` and ``big_jumps``.
    """
    t = model.T if t is None else float(t)
    eps = partition.floor if eps is None else float(eps)
    warnings = []
    if spec.empirical_mode:
        warnings.append(f"{spec.name}: hypothesis bounds not certified; empirical mode")
    if not F.bounded:
        warnings.append(f"{F.name} is not bounded; empirical mode")

    def per_block(path):
        Yp, path, m, Yg, Yk, ds, dW, U, g, H = _common(spec, F, path, model, partition, eps, t)
        lhs = F.f(Yg[:, :, m]) - F.f(Yg[:, :, 0])
        skor, second, dmin = _diffusion_terms(spec, Yp, model, partition, m, Yk, ds, dW, U, g, H)
        drift = np.sum(_contract(g, Yp.drift[:, :, :m]) * ds, axis=1)
        d_jump, dmin_jump = _small_jump_delta(spec, F, Yp, model, partition, m, Yk, ds, g, t)
        Yl, dY, small, big = _jump_sums(spec, F, Yp, t)
        f_jump = F.f(Yl + dY) - F.f(Yl)
        lin = _contract(F.grad(Yl), dY)
        small_sum = np.sum(np.where(small, f_jump - lin, 0.0), axis=1)
        big_sum = np.sum(np.where(big, f_jump, 0.0), axis=1)
        terms = {"delta_diffusion": skor, "delta_jump": d_jump, "second_order": second,
                 "drift": drift, "dminus_diffusion": dmin, "dminus_jump": dmin_jump,
                 "small_jumps": small_sum, "big_jumps": big_sum}
        return ItoLedger("general", lhs, terms, float(Yp.ds[0]), t)

    parts = [per_block(b) for b in _blocks(ensemble, workers)]
    led = ItoLedger.concat(parts)
    led.warnings = warnings
    return led


def _blocks(ensemble, workers):
    if isinstance(ensemble, CanonicalPath):
        return [ensemble.batch()]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda ab: ensemble.block(*ab), ensemble.block_bounds()))
    return ensemble.blocks()


def _small_jump_delta(spec, F, Yp, model, partition, m, Yk, ds, g, t):
    """Jump-slice Skorohod term and the ``D^-`` jump term.

    Writing ``Phi(z) = d_iF(Y_{s-}) v_i2(s-, y) + y D^-(d_iF(Y_.-) v_i2)(s, y)``,
    the Skorohod integral is the sum of ``Phi(z, omega without z) x`` over
    small jumps minus the compensator of ``Phi y``.  Removing a jump and
    adding it back leaves the ``s-`` quantities untouched, so the sum uses
    ``d_iF(Y_{s-}) v_i2(s-, x) x`` on the path itself.
    """
    path = Yp.path
    n = path.n
    if not any(c.v2 is not None for c in spec.components):
        z = np.zeros(n)
        return z, z
    Yl, dY, small, _ = _jump_sums(spec, F, Yp, t)
    jump_part = np.sum(np.where(small, _contract(F.grad(Yl), dY), 0.0), axis=1)
    ys, ws = Yp.nodes.x, Yp.nodes.w
    if ys.size == 0:
        z = np.zeros(n)
        return jump_part, z
    # v_i2(mid_k, y) as (dim, n, m, Y) and its future derivative
    V = np.stack([np.stack([_field_on_cells(c.v2, path, Yp.mids[:m], y) for y in ys], axis=-1)
                  for c in spec.components])
    DV = np.stack([_psi_field_on_cells(c.v2, path, Yp.mids[:m], ys) for c in spec.components])
    DY = _d_minus_Y_jump_cells(spec, Yp, model, partition, m, ys)
    Yk_ = Yk[..., None]
    g_ = g[..., None]
    g_shift = F.grad(Yk_ + ys * DY)
    dg = g_shift - g_
    # y D^-(d_iF v_i2)(s_k, y), summed over i
    y_dminus = _contract(V, dg) + ys * _contract(g_, DV) + ys * _contract(dg, DV)
    base = _contract(g_, V)
    comp = np.sum(ds[None, :, None] * ws * ys * (base + y_dminus), axis=(1, 2))
    dminus_term = np.sum(ds[None, :, None] * ws * ys * y_dminus, axis=(1, 2))
    return jump_part - comp, dminus_term


def _psi_field_on_cells(fld, path, mids, ys) -> np.ndarray:
    """``D_{mid_k, y} v(mid_k, y)`` as ``(n, m, Y)``."""
    out = np.zeros((path.n, mids.size, len(ys)))
    if fld is None:
        return out
    for F, h in fld.terms:
        if F.jump_blind or (F.breakpoints == ()):
            continue
        if F.adapted_up_to is not None and F.adapted_up_to <= h.t_min:
            continue
        f0 = F.evaluate(path)
        for j, y in enumerate(ys):
            hk = np.asarray(h(mids, y), dtype=float) * np.ones(mids.size)
            keys = np.arange(mids.size) if F.breakpoints is None else \
                np.searchsorted(np.asarray(F.breakpoints, dtype=float), mids, side="left")
            cache = {}
            for k in np.flatnonzero(hk):
                key = int(keys[k])
                if key not in cache:
                    cache[key] = (F.evaluate(add_jump(path, mids[k], y)) - f0) / y
                out[:, k, j] += hk[k] * cache[key]
    return out


def ito_ledger_finite_variation(spec: YSpec, F: TestFunction, ensemble, model: LevyModel,
                                partition: ShellPartition, t: float | None = None,
                                workers: int = 1) -> ItoLedger:
    """The form with uncompensated jump sums, valid when ``int |x| dnu < inf``.

    Each path also gets a drift-quadrature bound: the cell length times the
    oscillation of the ``ds`` integrand over the cell ends and the jump
    points inside the cell (both sides).
    """
    if not first_moment_finite(model):
        raise UnsupportedOperation("int |x| dnu(x) is not finite at the available resolution")
    t = model.T if t is None else float(t)
    eps = partition.floor

    def per_block(path):
        Yp, path, m, Yg, Yk, ds, dW, U, g, H = _common(spec, F, path, model, partition, eps, t)
        lhs = F.f(Yg[:, :, m]) - F.f(Yg[:, :, 0])
        skor, second, dmin = _diffusion_terms(spec, Yp, model, partition, m, Yk, ds, dW, U, g, H)
        rate = _drift_rate(spec, Yp, path, m)                 # (dim, n, m)
        drift = np.sum(_contract(g, rate) * ds, axis=1)
        Yl, dY, small, big = _jump_sums(spec, F, Yp, t)
        jumps = np.sum(np.where(small | big, F.f(Yl + dY) - F.f(Yl), 0.0), axis=1)
        terms = {"delta_diffusion": skor, "drift_compensated": drift,
                 "second_order": second, "dminus_diffusion": dmin, "jumps": jumps}
        bound = _drift_bound(F, Yp, rate, m, t, lhs, terms)
        return ItoLedger("finite-variation", lhs, terms, float(Yp.ds[0]), t, bound)

    parts = [per_block(b) for b in _blocks(ensemble, workers)]
    return ItoLedger.concat(parts)


def _drift_rate(spec, Yp, path, m):
    """``sigma_i(s) - int v_i2(s, y) y dnu`` per cell, ``(dim, n, m)``."""
    ys, ws = Yp.nodes.x, Yp.nodes.w
    out = Yp.drift[:, :, :m].copy()
    for i, c in enumerate(spec.components):
        if c.v2 is None or ys.size == 0:
            continue
        for y, w in zip(ys, ws):
            out[i] -= w * y * _field_on_cells(c.v2, path, Yp.mids[:m], y)
    return out


def _drift_bound(F, Yp, rate, m, t, lhs, terms):
    path = Yp.path
    grid = path.grid
    n = path.n
    lo = np.full((n, m), np.inf)
    hi = np.full((n, m), -np.inf)

    def absorb(times, k, left):
        Y = Yp.at(times, left=left)
        r = np.take_along_axis(rate, np.broadcast_to(k[None], rate.shape[:1] + k.shape), axis=2)
        val = _contract(F.grad(Y), r)
        np.minimum.at(lo, (np.arange(n)[:, None].repeat(k.shape[1], 1), k), val)
        np.maximum.at(hi, (np.arange(n)[:, None].repeat(k.shape[1], 1), k), val)

    ks = np.broadcast_to(np.arange(m), (n, m))
    absorb(np.broadcast_to(grid[:m], (n, m)), ks, False)
    absorb(np.broadcast_to(grid[1:m + 1], (n, m)), ks, True)
    times = path.jump_times
    inside = np.isfinite(times) & (times <= t)
    if inside.any():
        k = np.clip(np.searchsorted(grid, np.where(inside, times, 0.0), side="left") - 1, 0, m - 1)
        s = np.where(inside, times, grid[k])
        absorb(s, k, True)
        absorb(s, k, False)
    osc = np.where(np.isfinite(hi - lo), hi - lo, 0.0)
    scale = np.abs(lhs) + sum(np.abs(v) for v in terms.values())
    return np.sum(osc * Yp.ds[:m], axis=1) + 64 * np.finfo(float).eps * (1.0 + scale)


# --------------------------------------------------------------------------
# grid refinement
# --------------------------------------------------------------------------


@dataclass
class RefinementStudy:
    cells: list
    rms_residual: list
    rms_lhs: list
    order: float


def coarsen(path: CanonicalPath, factor: int) -> CanonicalPath:
    """Keep every ``factor``-th grid node; jumps are unchanged."""
    from dataclasses import replace
    if (path.grid.size - 1) % factor:
        raise ValueError("factor must divide the number of cells")
    return replace(path, grid=path.grid[::factor], brownian=path.brownian[:, ::factor])


def refinement_study(spec: YSpec, F: TestFunction, ensemble, model: LevyModel,
                     partition: ShellPartition, cells: Sequence[int], t: float | None = None,
                     workers: int = 1) -> RefinementStudy:
    """RMS ledger residual on nested grids obtained by coarsening the ensemble's grid.

    ``order`` is the least-squares slope of ``log RMS`` against ``log dt``.
    """
    fine = ensemble.grid.size - 1
    cells = sorted(int(c) for c in cells)
    sq = {c: [] for c in cells}
    lhs_sq = {c: [] for c in cells}
    for block in _blocks(ensemble, workers):
        for c in cells:
            led = ito_ledger_general(spec, F, coarsen(block, fine // c), model, partition, t=t)
            sq[c].append(led.residual ** 2)
            lhs_sq[c].append(led.lhs ** 2)
    rms = [float(np.sqrt(np.mean(np.concatenate(sq[c])))) for c in cells]
    rms_l = [float(np.sqrt(np.mean(np.concatenate(lhs_sq[c])))) for c in cells]
    dts = [model.T / c for c in cells]
    order = float(np.polyfit(np.log(dts), np.log(rms), 1)[0])
    return RefinementStudy(cells, rms, rms_l, order)


# --------------------------------------------------------------------------
# catalog
# --------------------------------------------------------------------------


def spec_catalog(name: str, model: LevyModel) -> YSpec:
    """Named specifications used by the presets and the tests."""
    T = model.T
    slice_all = slice_indicator(0.0, T)
    small = ValueSet.abs_between(0.0, 1.0)
    from .anticipating import box_indicator
    small_box = box_indicator(0.0, T, small)
    if name == "brownian":
        comp = YComponent(u=SimpleRandomField([(Constant(1.0), slice_all)]))
        return YSpec([comp], "brownian", bounds={"H2": 1.0})
    if name == "small-jump":
        comp = YComponent(v2=SimpleRandomField([(Constant(1.0), small_box)]))
        return YSpec([comp], "small-jump", bounds={"H5": 1.0})
    if name == "anticipating-wt":
        WT = brownian_at(T)
        comp = YComponent(u=SimpleRandomField([(WT, slice_all)]))

        def closed(path, t):
            t = np.asarray(t, dtype=float)
            W = path.brownian_at(np.broadcast_to(t, (path.n, t.size)))
            return (path.brownian[:, -1:] * W - t)[None]

        def hook(path, s):
            s = np.asarray(s, dtype=float)
            return path.brownian_at(np.broadcast_to(s, (path.n, s.size)))[None] / model.sigma

        return YSpec([comp], "anticipating-wt", closed, hook, bounds={"H2": None})
    if name == "anticipating-sin-wt":
        from .functionals import sin_WT
        comp = YComponent(u=SimpleRandomField([(sin_WT(T), slice_all)]))

        def hook(path, s):
            s = np.asarray(s, dtype=float)
            WT = path.brownian[:, -1:]
            Ws = path.brownian_at(np.broadcast_to(s, (path.n, s.size)))
            return (np.cos(WT) * Ws + s * np.sin(WT))[None] / model.sigma

        return YSpec([comp], "anticipating-sin-wt", None, hook, bounds={"H2": T})
    if name == "anticipating-jump":
        comp = YComponent(u=SimpleRandomField([(Constant(0.5), slice_all)]),
                          v2=SimpleRandomField([(cos_jump_sum(T), small_box)]))
        return YSpec([comp], "anticipating-jump", bounds={"H2": 0.25 * T, "H5": 1.0})
    if name == "mixed-2d":
        c1 = YComponent(u=SimpleRandomField([(Constant(1.0), slice_all)]),
                        v2=SimpleRandomField([(Constant(1.0), small_box)]))
        c2 = YComponent(drift=SimpleRandomField([(Constant(0.3), slice_all)]),
                        v1=SimpleRandomField([(Constant(1.0), box_indicator(
                            0.0, T, ValueSet.abs_between(1.0)))]),
                        v2=SimpleRandomField([(jump_sum(0.5), box_indicator(0.5, T, small))]))
        return YSpec([c1, c2], "mixed-2d", bounds={"H2": T, "H5": None})
    raise KeyError(f"unknown Y specification {name!r}")
