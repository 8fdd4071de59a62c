"""Lévy triplets, Lévy measures, the shell partition of the jump axis and the
control measure ``mu = sigma^2 dt delta_0(dx) + x^2 dt nu(dx)``.

Value sets are finite unions of intervals of the real line plus an optional
``{0}`` slice; product regions are ``(t0, t1] x values`` boxes.  Every
integral against ``nu`` goes through :meth:`LevyMeasure.nodes`, so the
sampler, the compensators and the seminorm quadratures share one quadrature
stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Interval",
    "ValueSet",
    "Box",
    "LevyMeasure",
    "DiscreteMeasure",
    "DensityMeasure",
    "two_sided_exponential",
    "stable_like",
    "LevyModel",
    "Shell",
    "ShellPartition",
    "DivergentIntegral",
    "mu_measure",
    "shell_partition",
    "nu_moment",
    "first_moment_finite",
]


class DivergentIntegral(ArithmeticError):
    """A Lévy-measure integral did not settle at the available resolution."""


# --------------------------------------------------------------------------
# value sets and product regions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    """Interval of the real line with explicit endpoint closedness."""

    lo: float
    hi: float
    lo_closed: bool = False
    hi_closed: bool = True

    @property
    def is_empty(self) -> bool:
        if self.lo < self.hi:
            return False
        return not (self.lo == self.hi and self.lo_closed and self.hi_closed)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        left = x >= self.lo if self.lo_closed else x > self.lo
        right = x <= self.hi if self.hi_closed else x < self.hi
        return left & right

    def intersect(self, other: "Interval") -> "Interval | None":
        if self.lo > other.lo:
            lo, lo_closed = self.lo, self.lo_closed
        elif self.lo < other.lo:
            lo, lo_closed = other.lo, other.lo_closed
        else:
            lo, lo_closed = self.lo, self.lo_closed and other.lo_closed
        if self.hi < other.hi:
            hi, hi_closed = self.hi, self.hi_closed
        elif self.hi > other.hi:
            hi, hi_closed = other.hi, other.hi_closed
        else:
            hi, hi_closed = self.hi, self.hi_closed and other.hi_closed
        out = Interval(lo, hi, lo_closed, hi_closed)
        return None if out.is_empty else out

    def minus(self, other: "Interval") -> list["Interval"]:
        """``self`` without ``other``: at most two intervals."""
        if self.intersect(other) is None:
            return [self]
        out = []
        left = Interval(self.lo, other.lo, self.lo_closed, not other.lo_closed)
        right = Interval(other.hi, self.hi, not other.hi_closed, self.hi_closed)
        for piece in (left, right):
            clipped = piece.intersect(self)
            if clipped is not None:
                out.append(clipped)
        return out

    def split_at_zero(self) -> list["Interval"]:
        """Pieces of the interval with the origin removed."""
        pieces = []
        neg = self.intersect(Interval(-math.inf, 0.0, False, False))
        pos = self.intersect(Interval(0.0, math.inf, False, False))
        for piece in (neg, pos):
            if piece is not None:
                pieces.append(piece)
        return pieces


@dataclass(frozen=True)
class ValueSet:
    """Subset of the jump axis: a union of intervals in R_0 plus maybe {0}.

    The intervals only ever describe jump sizes; the origin belongs to the
    set exactly when ``zero`` is true.
    """

    intervals: tuple[Interval, ...] = ()
    zero: bool = False

    @classmethod
    def origin(cls) -> "ValueSet":
        return cls((), True)

    @classmethod
    def point(cls, x: float) -> "ValueSet":
        if x == 0:
            return cls.origin()
        return cls((Interval(x, x, True, True),), False)

    @classmethod
    def points(cls, xs: Sequence[float]) -> "ValueSet":
        out = cls()
        for x in xs:
            out = out.union(cls.point(x))
        return out

    @classmethod
    def abs_between(cls, a: float, b: float = math.inf, *, a_closed: bool = False,
                    b_closed: bool = True, zero: bool = False) -> "ValueSet":
        """The set ``{a < |x| <= b}`` (closedness configurable)."""
        b_closed = b_closed and math.isfinite(b)
        pos = Interval(a, b, a_closed, b_closed)
        neg = Interval(-b, -a, b_closed, a_closed)
        ivs = tuple(iv for iv in (neg, pos) if not iv.is_empty)
        return cls(ivs, zero)

    @classmethod
    def nonzero(cls) -> "ValueSet":
        return cls.abs_between(0.0)

    @classmethod
    def everything(cls) -> "ValueSet":
        return cls.abs_between(0.0, zero=True)

    @property
    def is_empty(self) -> bool:
        return not self.zero and not self.jump_intervals()

    def jump_intervals(self) -> list[Interval]:
        out = []
        for iv in self.intervals:
            out.extend(iv.split_at_zero())
        return out

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape, dtype=bool)
        for iv in self.intervals:
            inside |= iv.contains(x)
        inside &= x != 0
        if self.zero:
            inside |= x == 0
        return inside

    def intersect(self, other: "ValueSet") -> "ValueSet":
        ivs = []
        for a in self.jump_intervals():
            for b in other.jump_intervals():
                c = a.intersect(b)
                if c is not None:
                    ivs.append(c)
        return ValueSet(tuple(ivs), self.zero and other.zero)

    def union(self, other: "ValueSet") -> "ValueSet":
        """Union; callers keep the pieces disjoint when measures are summed."""
        return ValueSet(self.intervals + other.intervals, self.zero or other.zero)

    def without_zero(self) -> "ValueSet":
        return ValueSet(self.intervals, False)

    def minus(self, other: "ValueSet") -> "ValueSet":
        pieces = self.jump_intervals()
        for b in other.jump_intervals():
            pieces = [c for a in pieces for c in a.minus(b)]
        return ValueSet(tuple(pieces), self.zero and not other.zero)


@dataclass(frozen=True)
class Box:
    """Product region ``(t0, t1] x values`` of ``[0, T] x R``."""

    t0: float
    t1: float
    values: ValueSet

    @property
    def is_empty(self) -> bool:
        return self.t1 <= self.t0 or self.values.is_empty

    @property
    def length(self) -> float:
        return max(self.t1 - self.t0, 0.0)

    def contains(self, t, x):
        t = np.asarray(t, dtype=float)
        return (t > self.t0) & (t <= self.t1) & self.values.contains(x)

    def intersect(self, other: "Box") -> "Box":
        return Box(max(self.t0, other.t0), min(self.t1, other.t1),
                   self.values.intersect(other.values))

    def minus(self, other: "Box") -> list["Box"]:
        """``self`` without ``other`` as a list of disjoint boxes."""
        inter = self.intersect(other)
        if inter.is_empty:
            return [] if self.is_empty else [self]
        out = [Box(self.t0, min(self.t1, other.t0), self.values),
               Box(max(self.t0, other.t1), self.t1, self.values),
               Box(inter.t0, inter.t1, self.values.minus(other.values))]
        return [b for b in out if not b.is_empty]

    def is_disjoint(self, other: "Box") -> bool:
        inter = self.intersect(other)
        if inter.length <= 0:
            return True
        if inter.values.zero:
            return False
        return not inter.values.jump_intervals()


# --------------------------------------------------------------------------
# Lévy measures
# --------------------------------------------------------------------------


class LevyMeasure:
    """Common surface of discrete and density Lévy measures.

    Subclasses provide :meth:`nodes`, which turns a value set into
    quadrature nodes and weights; all integrals and samplers build on it.
    """

    def nodes(self, values: ValueSet | None = None) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def integrate(self, g: Callable[[np.ndarray], np.ndarray],
                  values: ValueSet | None = None) -> float:
        xs, ws = self.nodes(values)
        if xs.size == 0:
            return 0.0
        return float(np.sum(ws * np.asarray(g(xs), dtype=float)))

    def mass(self, values: ValueSet | None = None) -> float:
        return self.integrate(np.ones_like, values)

    def sample(self, rng: np.random.Generator, values: ValueSet, size: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def is_empty(self) -> bool:
        return self.nodes()[0].size == 0

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class DiscreteMeasure(LevyMeasure):
    """Finite sum of weighted atoms ``sum_j mass_j delta_{x_j}``."""

    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        atoms = tuple((float(x), float(m)) for x, m in self.atoms)
        for x, m in atoms:
            if x == 0:
                raise ValueError("Lévy measure cannot charge the origin")
            if not (m > 0 and math.isfinite(m)) or not math.isfinite(x):
                raise ValueError(f"invalid atom ({x}, {m})")
        if len({x for x, _ in atoms}) != len(atoms):
            raise ValueError("duplicate atom locations")
        object.__setattr__(self, "atoms", atoms)

    def nodes(self, values=None):
        if not self.atoms:
            return np.empty(0), np.empty(0)
        xs = np.array([x for x, _ in self.atoms])
        ws = np.array([m for _, m in self.atoms])
        if values is not None:
            keep = values.contains(xs)
            xs, ws = xs[keep], ws[keep]
        return xs, ws

    def sample(self, rng, values, size):
        xs, ws = self.nodes(values)
        if size == 0:
            return np.empty(0)
        idx = rng.choice(xs.size, size=size, p=ws / ws.sum())
        return xs[idx]

    def to_dict(self):
        return {"kind": "discrete", "atoms": [list(a) for a in self.atoms]}


def _panel_edges(lo: float, hi: float, panels: int, floor: float) -> np.ndarray:
    """Panel edges for [lo, hi] with lo, hi >= 0.

    Pieces touching the origin get geometric panels reaching down to
    ``floor * hi`` so that integrable singularities are resolved.
    """
    if lo > 0:
        return np.linspace(lo, hi, panels + 1)
    return np.concatenate([[0.0], np.geomspace(floor * hi, hi, panels)])


@dataclass(frozen=True)
class DensityMeasure(LevyMeasure):
    """Absolutely continuous Lévy measure ``f(x) dx``.

    ``support`` lists moduli ranges ``(lo, hi)`` with ``0 <= lo < hi``; both
    signs are covered and ``f`` is evaluated at the signed point, so
    asymmetric densities are allowed.  Integrals use a
    composite midpoint rule with ``panels`` panels per support piece; pieces
    touching the origin use geometric panels down to ``floor``.
    """

    density: Callable[[np.ndarray], np.ndarray]
    support: tuple[tuple[float, float], ...]
    panels: int = 400
    floor: float = 1e-15
    name: str = "density"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.panels < 1:
            raise ValueError("panels must be positive")
        for lo, hi in self.support:
            if not 0 <= lo < hi:
                raise ValueError("support pieces must satisfy 0 <= lo < hi (mirrored)")

    def _pieces(self, values: ValueSet | None) -> list[tuple[float, float, float]]:
        """(lo, hi, sign) pieces of |x|-support intersected with ``values``."""
        base = []
        for lo, hi in self.support:
            base.append(Interval(lo, hi, False, True))
            base.append(Interval(-hi, -lo, True, False))
        vs = values.jump_intervals() if values is not None else None
        out = []
        for iv in base:
            pieces = [iv] if vs is None else [c for v in vs if (c := iv.intersect(v))]
            for c in pieces:
                if c.hi <= c.lo:
                    continue
                if c.lo >= 0:
                    out.append((c.lo, c.hi, 1.0))
                else:
                    out.append((-c.hi, -c.lo, -1.0))
        return out

    def nodes(self, values=None):
        xs, ws = [], []
        for lo, hi, sign in self._pieces(values):
            edges = _panel_edges(lo, hi, self.panels, self.floor)
            mids = 0.5 * (edges[1:] + edges[:-1])
            width = np.diff(edges)
            pts = sign * mids
            xs.append(pts)
            ws.append(np.asarray(self.density(pts), dtype=float) * width)
        if not xs:
            return np.empty(0), np.empty(0)
        return np.concatenate(xs), np.concatenate(ws)

    def panels_of(self, values: ValueSet | None = None):
        """Panel edges (lower, upper) and weights, aligned with :meth:`nodes`."""
        lows, highs, ws = [], [], []
        for lo, hi, sign in self._pieces(values):
            edges = _panel_edges(lo, hi, self.panels, self.floor)
            a, b = edges[:-1], edges[1:]
            if sign < 0:
                a, b = -b, -a
            mids = 0.5 * (a + b)
            lows.append(a)
            highs.append(b)
            ws.append(np.asarray(self.density(mids), dtype=float) * (b - a))
        if not lows:
            return np.empty(0), np.empty(0), np.empty(0)
        return np.concatenate(lows), np.concatenate(highs), np.concatenate(ws)

    def sample(self, rng, values, size):
        # panel chosen by weight, then uniform inside the panel
        lo, hi, ws = self.panels_of(values)
        if size == 0:
            return np.empty(0)
        idx = rng.choice(ws.size, size=size, p=ws / ws.sum())
        return lo[idx] + (hi[idx] - lo[idx]) * rng.random(size)

    def to_dict(self):
        return {"kind": "density", "name": self.name, "params": dict(self.params),
                "panels": self.panels}


def two_sided_exponential(rate: float = 1.0, scale: float = 1.0, lower: float = 0.0,
                          upper: float = 5.0, panels: int = 400) -> DensityMeasure:
    """``rate / (2 scale) * exp(-|x| / scale)`` on ``lower < |x| <= upper``."""
    if rate <= 0 or scale <= 0 or not 0 <= lower < upper:
        raise ValueError("invalid two-sided exponential parameters")

    def f(x):
        return rate / (2 * scale) * np.exp(-np.abs(x) / scale)

    return DensityMeasure(f, ((lower, upper),), panels=panels, name="two_sided_exponential",
                          params={"rate": rate, "scale": scale, "lower": lower, "upper": upper})


def stable_like(alpha: float, c: float = 1.0, upper: float = 1.0,
                panels: int = 400) -> DensityMeasure:
    """Infinite-activity density ``c |x|^(-1-alpha)`` on ``0 < |x| <= upper``."""
    if not 0 < alpha < 2 or c <= 0 or upper <= 0:
        raise ValueError("stable_like needs 0 < alpha < 2, c > 0, upper > 0")

    def f(x):
        return c * np.abs(x) ** (-1.0 - alpha)

    return DensityMeasure(f, ((0.0, upper),), panels=panels, name="stable_like",
                          params={"alpha": alpha, "c": c, "upper": upper})


def _moment(nu: LevyMeasure, values: ValueSet | None, p: float, rtol: float = 1e-4) -> float:
    xs, ws = nu.nodes(values)
    if xs.size == 0:
        return 0.0
    terms = ws * np.abs(xs) ** p
    total = float(np.sum(terms))
    if not math.isfinite(total):
        raise DivergentIntegral(f"|x|^{p} integral is not finite")
    if isinstance(nu, DensityMeasure):
        # contribution of the innermost geometric decade near the origin
        ax = np.abs(xs)
        inner = ax < 10.0 * nu.floor * max(hi for _, hi in nu.support)
        tail = float(np.sum(terms[inner]))
        if total > 0 and tail > rtol * total:
            raise DivergentIntegral(
                f"|x|^{p} integral not finite at resolution (floor={nu.floor:g})")
    return total


# --------------------------------------------------------------------------
# model and partition
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LevyModel:
    """Lévy triplet ``(gamma, sigma^2, nu)`` on the horizon ``[0, T]``."""

    gamma: float
    sigma: float
    nu: LevyMeasure = field(default_factory=DiscreteMeasure)
    T: float = 1.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")
        try:
            _moment(self.nu, None, 2)
        except DivergentIntegral as exc:
            raise ValueError(f"nu must have a finite second moment: {exc}") from None

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "sigma": self.sigma, "T": self.T, "nu": self.nu.to_dict()}


@dataclass(frozen=True)
class Shell:
    """Retained annulus ``lo < |x| <= hi`` with its intensity and mean jump."""

    index: int
    lo: float
    hi: float
    intensity: float
    mean_jump: float  # integral of x over the shell against nu

    @property
    def values(self) -> ValueSet:
        return ValueSet.abs_between(self.lo, self.hi)


@dataclass(frozen=True)
class ShellPartition:
    """Shells ``S_1 = {|x| > 1}``, ``S_k = {eps_k < |x| <= eps_{k-1}}``.

    Only shells with positive mass are kept in :attr:`shells`; the full
    schedule stays in :attr:`epsilons` so that jump sizes can always be
    classified by modulus.
    """

    epsilons: tuple[float, ...]
    shells: tuple[Shell, ...]

    @property
    def depth(self) -> int:
        return len(self.epsilons)

    @property
    def floor(self) -> float:
        """Smallest simulated modulus ``eps_K``."""
        return self.epsilons[-1]

    @property
    def coverage(self) -> ValueSet:
        """Jump sizes that the sampler can produce."""
        return ValueSet.abs_between(self.floor)

    def shell(self, index: int) -> Shell:
        for s in self.shells:
            if s.index == index:
                return s
        raise KeyError(index)

    def classify(self, x) -> np.ndarray:
        """Shell index (1-based) of each jump size; 0 below the floor."""
        return classify_abs(np.abs(np.asarray(x, dtype=float)), self.epsilons)

    @property
    def total_intensity(self) -> float:
        return sum(s.intensity for s in self.shells)

    def to_dict(self) -> dict:
        return {"epsilons": list(self.epsilons),
                "shells": [[s.index, s.lo, s.hi, s.intensity] for s in self.shells]}


def classify_abs(a: np.ndarray, epsilons: Sequence[float]) -> np.ndarray:
    eps = np.asarray(epsilons, dtype=float)
    # k such that eps_k < a <= eps_{k-1}; eps_0 = inf
    k = np.searchsorted(-eps, -a, side="right") + 1
    return np.where(a > eps[-1], k, 0).astype(np.int64)


def shell_partition(model: LevyModel, K: int, ratio: float = 0.5) -> ShellPartition:
    """Geometric shell schedule ``eps_k = ratio**(k-1)``, empty shells dropped."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    eps = tuple(ratio ** k for k in range(K))
    shells = []
    for k in range(1, K + 1):
        hi = math.inf if k == 1 else eps[k - 2]
        lo = eps[k - 1]
        vals = ValueSet.abs_between(lo, hi)
        lam = model.nu.mass(vals)
        if lam > 0:
            mean = model.nu.integrate(lambda x: x, vals)
            shells.append(Shell(k, lo, hi, lam, mean))
    return ShellPartition(eps, tuple(shells))


def _as_boxes(region) -> list[Box]:
    if isinstance(region, Box):
        return [region]
    return list(region)


def mu_measure(model: LevyModel, region, partition: ShellPartition | None = None) -> float:
    """Control measure of a box (or of a list of disjoint boxes).

    With a partition the jump part is restricted to the simulated coverage
    ``{|x| > eps_K}``, which is the measure the sampled paths realize.
    """
    total = 0.0
    for box in _as_boxes(region):
        length = max(min(box.t1, model.T) - max(box.t0, 0.0), 0.0)
        if length == 0:
            continue
        if box.values.zero:
            total += model.sigma ** 2 * length
        vals = box.values.without_zero()
        if partition is not None:
            vals = vals.intersect(partition.coverage)
        if vals.jump_intervals():
            total += length * model.nu.integrate(lambda x: x * x, vals)
    return total


def nu_moment(model: LevyModel, values: ValueSet | None = None, p: int = 2) -> float:
    """``integral of |x|^p over values`` against nu (whole R_0 by default).

    Raises :class:`DivergentIntegral` when the integral has not settled at
    the quadrature resolution.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if values is not None:
        values = values.without_zero()
        if values.is_empty:
            return 0.0
    return _moment(model.nu, values, p)


def first_moment_finite(model: LevyModel) -> bool:
    try:
        nu_moment(model, None, 1)
    except DivergentIntegral:
        return False
    return True
