"""Elementary chaos kernels, multiple integrals and chaos-level Skorohod integrals.

The random measure ``M`` of a set ``E = (t0, t1] x V`` is
``sigma (W(t1) - W(t0)) [0 in V] + (compensated jump sum over E)``; only the
simulated coverage of the Lévy measure enters, so every identity holds for
the truncated model exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .canonical_path import CanonicalPath
from .functionals import RandomFunctional, UnsupportedOperation
from .levy_model import Box, LevyModel, ShellPartition, mu_measure

__all__ = [
    "M_of_set",
    "ElementaryKernel",
    "ChaosExpansion",
    "ChaosFunctional",
    "ChaosField",
    "multiple_integral",
    "isometry_value",
    "isometry_check",
    "skorohod_chaos",
    "mc_mean",
]


def mc_mean(values) -> tuple[float, float]:
    """Sample mean and its standard error."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        raise ValueError("empty sample")
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return float(values.mean()), se


def M_of_set(path: CanonicalPath, E: Box | Sequence[Box], model: LevyModel,
             partition: ShellPartition):
    """``M(E)`` per row for a box or a disjoint union of boxes."""
    boxes = [E] if isinstance(E, Box) else list(E)
    total = np.zeros(path.n)
    for box in boxes:
        total += _M_box(path, box, model, partition)
    return path.out(total)


def _M_box(path, box: Box, model, partition) -> np.ndarray:
    t0, t1 = max(box.t0, 0.0), min(box.t1, path.T)
    if t1 <= t0:
        return np.zeros(path.n)
    out = np.zeros(path.n)
    if box.values.zero and model.sigma > 0:
        out += model.sigma * (path.brownian_at(t1) - path.brownian_at(t0))
    covered = box.values.without_zero().intersect(partition.coverage)
    if covered.jump_intervals():
        sizes, times = path.jump_sizes, path.jump_times
        hit = np.isfinite(times) & (times > t0) & (times <= t1) & covered.contains(sizes)
        out += np.sum(np.where(hit, sizes, 0.0), axis=1)
        out -= (t1 - t0) * model.nu.integrate(lambda x: x, covered)
    return out


@dataclass(frozen=True)
class ElementaryKernel:
    """``f = sum_i a_i 1_{A_i1} x ... x 1_{A_in}`` over pairwise disjoint boxes.

    ``coeffs`` maps index tuples into ``regions`` to coefficients; tuples
    with a repeated index must carry no weight, which keeps ``f`` zero on
    the diagonals.
    """

    regions: tuple
    coeffs: Mapping

    def __post_init__(self):
        regions = tuple(self.regions)
        coeffs = {tuple(int(i) for i in k): float(v) for k, v in dict(self.coeffs).items()}
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "coeffs", coeffs)
        orders = {len(k) for k in coeffs}
        if len(orders) > 1:
            raise ValueError("all index tuples must have the same length")
        for a, b in itertools.combinations(regions, 2):
            if not a.is_disjoint(b):
                raise ValueError("kernel regions must be pairwise disjoint")
        for k, v in coeffs.items():
            if any(i < 0 or i >= len(regions) for i in k):
                raise ValueError(f"index tuple {k} refers to a missing region")
            if len(set(k)) != len(k) and v != 0:
                raise ValueError(f"repeated index {k} must have zero coefficient")
        for r in regions:
            if not math.isfinite(r.length) or r.t0 < 0:
                raise ValueError("regions must be bounded boxes in [0, T]")

    @property
    def order(self) -> int:
        return len(next(iter(self.coeffs))) if self.coeffs else 0

    @classmethod
    def constant(cls, c: float) -> "ElementaryKernel":
        return cls((), {(): c})

    @classmethod
    def indicator(cls, *boxes: Box, coeff: float = 1.0) -> "ElementaryKernel":
        """``coeff * 1_{B_1} x ... x 1_{B_n}``."""
        return cls(tuple(boxes), {tuple(range(len(boxes))): coeff})

    def symmetrized(self) -> "ElementaryKernel":
        n = self.order
        out: dict = {}
        norm = 1.0 / math.factorial(n)
        for k, v in self.coeffs.items():
            if v == 0:
                continue
            for perm in itertools.permutations(range(n)):
                key = tuple(k[p] for p in perm)
                out[key] = out.get(key, 0.0) + v * norm
        return ElementaryKernel(self.regions, out)

    @property
    def time_edges(self) -> tuple:
        return tuple(sorted({e for r in self.regions for e in (r.t0, r.t1)}))

    @property
    def horizon(self) -> float:
        return max((r.t1 for r in self.regions), default=0.0)


@dataclass(frozen=True)
class ChaosExpansion:
    """Finite sum ``sum_n I_n(f_n)``."""

    kernels: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))


def multiple_integral(path: CanonicalPath, kernel: ElementaryKernel, model: LevyModel,
                      partition: ShellPartition):
    """``I_n(f)`` of an elementary kernel: products of ``M`` over its boxes."""
    Ms = [_M_box(path, r, model, partition) for r in kernel.regions]
    total = np.zeros(path.n)
    for k, v in kernel.coeffs.items():
        if v == 0:
            continue
        term = np.full(path.n, v)
        for i in k:
            term = term * Ms[i]
        total += term
    return path.out(total)


class ChaosFunctional(RandomFunctional):
    """``F = sum_n I_n(f_n)`` as an evaluable functional with exact ``D^W``."""

    def __init__(self, expansion: ChaosExpansion | Sequence[ElementaryKernel], model: LevyModel,
                 partition: ShellPartition, name: str = "I(f)"):
        if not isinstance(expansion, ChaosExpansion):
            expansion = ChaosExpansion(tuple(expansion))
        self.expansion = expansion
        self.model = model
        self.partition = partition
        self.name = name
        self.adapted_up_to = max((k.horizon for k in expansion.kernels), default=0.0)
        self.breakpoints = tuple(sorted({e for k in expansion.kernels for e in k.time_edges}))
        self.jump_blind = all(not r.values.jump_intervals()
                              for k in expansion.kernels for r in k.regions)

    def evaluate(self, path):
        total = np.zeros(path.n)
        for k in self.expansion.kernels:
            total += multiple_integral(path.batch(), k, self.model, self.partition)
        return total

    def _gradient(self, path, t):
        t = np.asarray(t, dtype=float)
        sig = self.model.sigma
        total = np.zeros(path.n)
        for kern in self.expansion.kernels:
            Ms = [_M_box(path, r, self.model, self.partition) for r in kern.regions]
            hits = [np.where((t > r.t0) & (t <= r.t1) & r.values.zero, sig, 0.0) * np.ones(path.n)
                    for r in kern.regions]
            for k, v in kern.coeffs.items():
                if v == 0:
                    continue
                for j, idx in enumerate(k):
                    term = v * hits[idx]
                    for jj, other in enumerate(k):
                        if jj != j:
                            term = term * Ms[other]
                    total += term
        return total


@dataclass(frozen=True)
class ChaosField:
    """``u(z) = sum_b c_b 1_{B_b}(z) I_n(f_b)``: a field with chaos coefficients."""

    terms: tuple  # of (coeff, Box, ElementaryKernel)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))


def _mu_overlap(a: Box, b: Box, model, partition) -> float:
    inter = a.intersect(b)
    if inter is None:
        return 0.0
    return mu_measure(model, inter, partition)


def isometry_value(f: ElementaryKernel, g: ElementaryKernel, model: LevyModel,
                   partition: ShellPartition) -> float:
    """``E[I_n(f) I_m(g)] = [n = m] n! <f~, g~>`` for the truncated ``mu``."""
    n, m = f.order, g.order
    if n != m:
        return 0.0
    if n == 0:
        return f.coeffs.get((), 0.0) * g.coeffs.get((), 0.0)
    overlap = np.array([[_mu_overlap(a, b, model, partition) for b in g.regions]
                        for a in f.regions])
    total = 0.0
    for ki, a in f.coeffs.items():
        if a == 0:
            continue
        for kj, b in g.coeffs.items():
            if b == 0:
                continue
            for perm in itertools.permutations(range(n)):
                prod = a * b
                for p, q in enumerate(perm):
                    prod *= overlap[ki[q], kj[p]]
                    if prod == 0:
                        break
                total += prod
    return total


def isometry_check(model: LevyModel, partition: ShellPartition, f: ElementaryKernel,
                   g: ElementaryKernel, ensemble, workers: int = 1):
    """Monte Carlo ``E[I_n(f) I_m(g)]`` against its closed form.

    Returns ``(estimate, analytic, standard_error)``.
    """
    prods = ensemble.map(lambda b: multiple_integral(b, f, model, partition)
                         * multiple_integral(b, g, model, partition), workers)
    est, se = mc_mean(prods)
    return est, isometry_value(f, g, model, partition), se


def _quadratic_variation(path, box: Box, model, partition) -> np.ndarray:
    """``[M](box)``: ``sigma^2`` times the time length on the slice plus squared jumps."""
    t0, t1 = max(box.t0, 0.0), min(box.t1, path.T)
    out = np.zeros(path.n)
    if t1 <= t0:
        return out
    if box.values.zero:
        out += model.sigma ** 2 * (t1 - t0)
    covered = box.values.without_zero().intersect(partition.coverage)
    times, sizes = path.jump_times, path.jump_sizes
    hit = np.isfinite(times) & (times > t0) & (times <= t1) & covered.contains(sizes)
    return out + np.sum(np.where(hit, sizes ** 2, 0.0), axis=1)


def _overlapping_first_order(path, coeff, box, kern, model, partition) -> np.ndarray:
    """``delta(I_1(f) 1_B)`` when ``B`` meets the regions of ``f``.

    The boxes are refined so every piece is either shared or disjoint; a
    shared piece ``P`` contributes ``I_2(1_P x 1_P) = M(P)^2 - [M](P)``.
    """
    total = np.zeros(path.n)
    rest = [box]
    for r in kern.regions:
        rest = [piece for b in rest for piece in b.minus(r)]
    for (i,), a in kern.coeffs.items():
        if a == 0:
            continue
        A = kern.regions[i]
        z_pieces = list(rest)
        for j, other in enumerate(kern.regions):
            if j != i:
                shared = other.intersect(box)
                if not shared.is_empty:
                    z_pieces.append(shared)
        for zb in z_pieces:
            ext = ElementaryKernel((A, zb), {(0, 1): coeff * a}).symmetrized()
            total += multiple_integral(path, ext, model, partition)
        P = A.intersect(box)
        if P.is_empty:
            continue
        for outside in A.minus(box):
            ext = ElementaryKernel((outside, P), {(0, 1): coeff * a}).symmetrized()
            total += multiple_integral(path, ext, model, partition)
        total += coeff * a * (_M_box(path, P, model, partition) ** 2
                              - _quadratic_variation(path, P, model, partition))
    return total


def skorohod_chaos(path: CanonicalPath, field: ChaosField, model: LevyModel,
                   partition: ShellPartition, max_order: int = 4):
    """``delta(u) = sum_b c_b I_{n+1}(sym(1_{B_b} x f_b))``.

    A z-slot box that overlaps the kernel regions is supported for
    first-order coefficients; higher orders need disjoint boxes.
    """
    raw = path.batch()
    total = np.zeros(raw.n)
    for coeff, box, kern in field.terms:
        if kern.order + 1 > max_order:
            raise UnsupportedOperation(f"chaos order {kern.order + 1} exceeds {max_order}")
        if any(not box.is_disjoint(r) for r in kern.regions):
            if kern.order != 1:
                raise UnsupportedOperation("z-slot box overlaps a kernel region of order "
                                           f"{kern.order}; refine the boxes so they are disjoint")
            total += _overlapping_first_order(raw, coeff, box, kern, model, partition)
            continue
        regions = kern.regions + (box,)
        last = len(regions) - 1
        coeffs = {k + (last,): coeff * v for k, v in kern.coeffs.items()}
        ext = ElementaryKernel(regions, coeffs).symmetrized()
        total += multiple_integral(raw, ext, model, partition)
    return path.out(total)
