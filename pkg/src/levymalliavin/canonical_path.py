"""Sampled outcomes of the canonical Lévy space and the maps acting on them.

A :class:`CanonicalPath` stores one or many outcomes as arrays with a leading
batch axis: the Brownian path on a fixed grid and a time-sorted jump list per
row, padded with ``+inf`` times and zero sizes.  Every evaluation in the
package broadcasts over that axis; a path created with ``single=True`` hands
back plain floats instead of length-one arrays.

Randomness is drawn from counter-based Philox streams keyed by
``(seed, path index)``, so a path is fully determined by its index and an
ensemble can be cut into blocks in any order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Sequence

import numpy as np

from .levy_model import LevyModel, ShellPartition, ValueSet, classify_abs

__all__ = [
    "CanonicalPath",
    "PathEnsemble",
    "uniform_grid",
    "path_stream",
    "sample_path",
    "sample_block",
    "add_jump",
    "remove_jump",
    "evaluate_X",
    "jump_times_above",
    "pathwise_jtilde_integral",
    "dump_paths",
    "load_paths",
]


def uniform_grid(T: float, M: int) -> np.ndarray:
    """``M + 1`` equally spaced nodes on ``[0, T]`` with exact end points."""
    if M < 1:
        raise ValueError("grid needs at least one cell")
    grid = np.linspace(0.0, T, M + 1)
    grid[-1] = T
    return grid


@dataclass(frozen=True, eq=False)
class CanonicalPath:
    """Batch of outcomes ``omega = (Brownian path, jump list)``.

    Attributes
    ----------
    grid : ndarray, shape (M + 1,)
        Strictly increasing times from 0 to T.
    brownian : ndarray, shape (n, M + 1)
        Brownian values on the grid, ``W(0) = 0``.
    jump_times, jump_sizes : ndarray, shape (n, J)
        Jumps sorted by time in each row; unused slots hold ``inf`` / ``0``.
    jump_shells : ndarray, shape (n, J)
        Shell index of each jump (0 for padding or moduli below the floor).
    epsilons : tuple
        Shell schedule used to classify inserted jumps.
    single : bool
        Whether evaluations should return scalars.
    """

    grid: np.ndarray
    brownian: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    jump_shells: np.ndarray
    epsilons: tuple = (1.0,)
    single: bool = False

    def __post_init__(self):
        if self.brownian.ndim != 2 or self.jump_times.ndim != 2:
            raise ValueError("path arrays need a leading batch axis")
        if self.brownian.shape[1] != self.grid.size:
            raise ValueError("Brownian array does not match the grid")
        if self.grid[0] != 0 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must start at 0 and be strictly increasing")
        if np.any(self.brownian[:, 0] != 0):
            raise ValueError("W(0) must vanish")

    @classmethod
    def from_jumps(cls, grid, brownian, jumps: Sequence[tuple[float, float]] = (),
                   epsilons: Sequence[float] = (1.0,)) -> "CanonicalPath":
        """One path from a Brownian array and a list of ``(time, size)``."""
        grid = np.asarray(grid, dtype=float)
        brownian = np.asarray(brownian, dtype=float).reshape(1, -1)
        jumps = sorted((float(s), float(x)) for s, x in jumps)
        times = np.array([[s for s, _ in jumps]]).reshape(1, -1)
        sizes = np.array([[x for _, x in jumps]]).reshape(1, -1)
        if np.any(np.diff(times[0]) <= 0):
            raise ValueError("jump times must be distinct")
        if np.any(sizes == 0):
            raise ValueError("jump sizes must be non-zero")
        if times.size and (times.min() <= 0 or times.max() > grid[-1]):
            raise ValueError("jump times must lie in (0, T]")
        shells = classify_abs(np.abs(sizes), epsilons) if sizes.size else np.zeros((1, 0), int)
        return cls(grid, brownian, times, sizes, shells.reshape(1, -1), tuple(epsilons), True)

    @property
    def n(self) -> int:
        return self.brownian.shape[0]

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.grid)

    def __len__(self) -> int:
        return self.n

    def row(self, i: int) -> "CanonicalPath":
        """The ``i``-th outcome as a single path, padding trimmed."""
        times = self.jump_times[i]
        keep = np.isfinite(times)
        return CanonicalPath(self.grid, self.brownian[i:i + 1], times[keep][None, :],
                             self.jump_sizes[i][keep][None, :],
                             self.jump_shells[i][keep][None, :], self.epsilons, True)

    def jumps(self, i: int = 0) -> list[tuple[float, float]]:
        keep = np.isfinite(self.jump_times[i])
        return list(zip(self.jump_times[i][keep].tolist(), self.jump_sizes[i][keep].tolist()))

    def out(self, values):
        """Squeeze a per-row result for single paths."""
        values = np.asarray(values, dtype=float)
        if self.single:
            return float(values.reshape(-1)[0]) if values.ndim <= 1 else values[0]
        return values

    def batch(self) -> "CanonicalPath":
        """The same outcomes with array-valued evaluation."""
        return replace(self, single=False) if self.single else self

    def with_brownian(self, brownian: np.ndarray) -> "CanonicalPath":
        return replace(self, brownian=brownian)

    def jump_count(self):
        return self.out(np.sum(np.isfinite(self.jump_times), axis=1))

    # -- evaluation helpers ------------------------------------------------

    def brownian_at(self, t):
        """``W(t)`` per row; off-grid times use linear interpolation.

        ``t`` may be a scalar, an ``(n,)`` array or an ``(n, q)`` array.
        """
        t = np.asarray(t, dtype=float)
        M = self.grid.size - 1
        idx = np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, M - 1)
        t0 = self.grid[idx]
        frac = (t - t0) / (self.grid[idx + 1] - t0)
        if t.ndim == 0:
            w0 = self.brownian[:, idx]
            w1 = self.brownian[:, idx + 1]
        else:
            rows = np.arange(self.n).reshape((self.n,) + (1,) * (t.ndim - 1))
            w0 = self.brownian[rows, idx]
            w1 = self.brownian[rows, idx + 1]
        return w0 + (w1 - w0) * frac

    def jump_sum(self, t=None, *, left: bool = False, values: ValueSet | None = None,
                 weight: Callable | None = None):
        """``sum of weight(s, x) * x`` over jumps with ``s <= t`` (``s < t`` if left).

        ``t`` broadcasts like in :meth:`brownian_at`; ``values`` restricts the
        jump sizes.
        """
        times, sizes = self.jump_times, self.jump_sizes
        if t is None:
            t = self.T
        t = np.asarray(t, dtype=float)
        mask = np.isfinite(times)
        if values is not None:
            mask &= values.contains(sizes)
        contrib = np.where(mask, sizes, 0.0)
        if weight is not None:
            safe_t = np.where(mask, times, 0.0)
            contrib = np.where(mask, contrib * weight(safe_t, sizes), 0.0)
        if t.ndim == 0:
            sel = times < t if left else times <= t
            return np.sum(np.where(sel, contrib, 0.0), axis=1)
        extra = t.ndim - 1
        tt = t[..., None]
        tm = times.reshape((self.n,) + (1,) * extra + (-1,))
        cm = contrib.reshape((self.n,) + (1,) * extra + (-1,))
        sel = tm < tt if left else tm <= tt
        return np.sum(np.where(sel, cm, 0.0), axis=-1)


def path_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream of path ``index`` under ``seed``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) + int(index)))


def _sample_row(model: LevyModel, partition: ShellPartition, grid: np.ndarray,
                rng: np.random.Generator):
    dt = np.diff(grid)
    incr = rng.standard_normal(dt.size) * np.sqrt(dt)
    brownian = np.concatenate([[0.0], np.cumsum(incr)])
    T = grid[-1]
    times, sizes, shells = [], [], []
    for shell in partition.shells:
        count = rng.poisson(shell.intensity * T)
        if count == 0:
            continue
        # (0, T]: 1 - U lies in (0, 1]
        times.append(T * (1.0 - rng.random(count)))
        sizes.append(model.nu.sample(rng, shell.values, count))
        shells.append(np.full(count, shell.index))
    if times:
        times = np.concatenate(times)
        sizes = np.concatenate(sizes)
        shells = np.concatenate(shells)
        # a.s.-null ties are resampled from the same stream
        while np.unique(times).size != times.size:
            _, first = np.unique(times, return_index=True)
            dup = np.setdiff1d(np.arange(times.size), first)
            times[dup] = T * (1.0 - rng.random(dup.size))
        order = np.argsort(times, kind="stable")
        times, sizes, shells = times[order], sizes[order], shells[order]
    else:
        times = sizes = np.empty(0)
        shells = np.empty(0, dtype=np.int64)
    return brownian, times, sizes, shells


def _pack(grid, rows, epsilons, single=False) -> CanonicalPath:
    n = len(rows)
    J = max((r[1].size for r in rows), default=0)
    brownian = np.stack([r[0] for r in rows])
    times = np.full((n, J), np.inf)
    sizes = np.zeros((n, J))
    shells = np.zeros((n, J), dtype=np.int64)
    for i, (_, t, x, k) in enumerate(rows):
        times[i, :t.size] = t
        sizes[i, :t.size] = x
        shells[i, :t.size] = k
    return CanonicalPath(grid, brownian, times, sizes, shells, tuple(epsilons), single)


def sample_path(model: LevyModel, partition: ShellPartition, grid: np.ndarray,
                rng: np.random.Generator | tuple[int, int]) -> CanonicalPath:
    """Draw one outcome; ``rng`` is a generator or a ``(seed, index)`` pair."""
    grid = np.asarray(grid, dtype=float)
    if not math.isclose(grid[-1], model.T):
        raise ValueError("grid must end at the model horizon")
    if isinstance(rng, tuple):
        rng = path_stream(*rng)
    row = _sample_row(model, partition, grid, rng)
    return _pack(grid, [row], partition.epsilons, single=True)


def sample_block(model: LevyModel, partition: ShellPartition, grid: np.ndarray,
                 seed: int, start: int, stop: int) -> CanonicalPath:
    """Paths ``start, ..., stop - 1`` of the ensemble keyed by ``seed``."""
    grid = np.asarray(grid, dtype=float)
    rows = [_sample_row(model, partition, grid, path_stream(seed, i))
            for i in range(start, stop)]
    return _pack(grid, rows, partition.epsilons)


@dataclass(frozen=True)
class PathEnsemble:
    """Reproducible ensemble: ``(seed, index)`` fixes every path.

    Paths are generated lazily in blocks so that large ensembles never sit in
    memory at once.  ``substream_ids`` are the Philox keys' path indices.
    """

    model: LevyModel
    partition: ShellPartition
    grid: np.ndarray
    size: int
    seed: int = 0
    block_size: int = 2000
    _cache: dict | None = field(default=None, compare=False, repr=False)

    def __len__(self) -> int:
        return self.size

    @property
    def substream_ids(self) -> range:
        return range(self.size)

    def block_bounds(self) -> list[tuple[int, int]]:
        return [(a, min(a + self.block_size, self.size))
                for a in range(0, self.size, self.block_size)]

    def cached(self) -> "PathEnsemble":
        """Same ensemble with every block sampled once and kept in memory."""
        if self._cache is not None:
            return self
        store = {ab: self.block(*ab) for ab in self.block_bounds()}
        return PathEnsemble(self.model, self.partition, self.grid, self.size, self.seed,
                            self.block_size, store)

    def block(self, start: int, stop: int) -> CanonicalPath:
        if self._cache is not None and (start, stop) in self._cache:
            return self._cache[(start, stop)]
        return sample_block(self.model, self.partition, self.grid, self.seed, start, stop)

    def blocks(self) -> Iterator[CanonicalPath]:
        for a, b in self.block_bounds():
            yield self.block(a, b)

    def __getitem__(self, index: int) -> CanonicalPath:
        if not 0 <= index < self.size:
            raise IndexError(index)
        return sample_path(self.model, self.partition, self.grid, (self.seed, index))

    def map(self, fn: Callable[[CanonicalPath], np.ndarray], workers: int = 1) -> np.ndarray:
        """Apply a per-path statistic blockwise and concatenate in index order.

        The result does not depend on ``workers``: blocks are fixed and are
        reassembled in block order.
        """
        bounds = self.block_bounds()

        def job(ab):
            return np.asarray(fn(self.block(*ab)))

        if workers <= 1:
            parts = [job(ab) for ab in bounds]
        else:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(job, bounds))
        return np.concatenate(parts, axis=0) if parts else np.empty(0)


# --------------------------------------------------------------------------
# path edits
# --------------------------------------------------------------------------


def _nudge_ties(times_row: np.ndarray, t: float) -> float:
    while np.any(times_row == t):
        t = float(np.nextafter(t, 0.0))
    return t


def add_jump(path: CanonicalPath, t, x) -> CanonicalPath:
    """Insert the jump ``(t, x)`` into every row (``t``, ``x`` scalar or per row).

    A time that collides with an existing jump is moved to the next smaller
    float until it is unique; the input path is left untouched.
    """
    n = path.n
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,)).copy()
    x = np.broadcast_to(np.asarray(x, dtype=float), (n,))
    if np.any(x == 0):
        raise ValueError("Ψ is undefined for x = 0: cannot insert a zero jump")
    if np.any(t <= 0) or np.any(t > path.T):
        raise ValueError("inserted jump time must lie in (0, T]")
    hits = np.any(path.jump_times == t[:, None], axis=1)
    for i in np.flatnonzero(hits):
        t[i] = _nudge_ties(path.jump_times[i], t[i])
    times = np.concatenate([path.jump_times, t[:, None]], axis=1)
    sizes = np.concatenate([path.jump_sizes, x[:, None]], axis=1)
    shells = np.concatenate([path.jump_shells,
                             classify_abs(np.abs(x), path.epsilons)[:, None]], axis=1)
    order = np.argsort(times, axis=1, kind="stable")
    return replace(path, jump_times=np.take_along_axis(times, order, 1),
                   jump_sizes=np.take_along_axis(sizes, order, 1),
                   jump_shells=np.take_along_axis(shells, order, 1))


def remove_jump(path: CanonicalPath, t) -> CanonicalPath:
    """Drop the jump at time ``t`` (scalar or per row); rows without one are kept."""
    t = np.broadcast_to(np.asarray(t, dtype=float), (path.n,))
    hit = path.jump_times == t[:, None]
    times = np.where(hit, np.inf, path.jump_times)
    sizes = np.where(hit, 0.0, path.jump_sizes)
    shells = np.where(hit, 0, path.jump_shells)
    order = np.argsort(times, axis=1, kind="stable")
    times = np.take_along_axis(times, order, 1)
    J = int(np.max(np.sum(np.isfinite(times), axis=1), initial=0))
    return replace(path, jump_times=times[:, :J],
                   jump_sizes=np.take_along_axis(sizes, order, 1)[:, :J],
                   jump_shells=np.take_along_axis(shells, order, 1)[:, :J])


def _compensator_rate(partition: ShellPartition) -> float:
    """Drift removed by the compensated shells ``k >= 2``."""
    return sum(s.mean_jump for s in partition.shells if s.index >= 2)


def evaluate_X(path: CanonicalPath, model: LevyModel, partition: ShellPartition, t,
               *, left: bool = False):
    """``X_t = gamma t + sigma W_t + big jumps + compensated retained shells``.

    With ``left=True`` the value is the left limit ``X_{t-}``.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > model.T):
        raise ValueError("t must lie in [0, T]")
    value = (model.gamma * t_arr + model.sigma * path.brownian_at(t_arr)
             + path.jump_sum(t_arr, left=left)
             - t_arr * _compensator_rate(partition))
    return path.out(value)


def jump_times_above(path: CanonicalPath, eps: float, up_to: float | None = None):
    """``[0, T_1^eps, T_2^eps, ...]``: times of jumps with ``|x| > eps``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    up_to = path.T if up_to is None else up_to
    out = []
    for i in range(path.n):
        keep = (np.abs(path.jump_sizes[i]) > eps) & (path.jump_times[i] <= up_to)
        out.append([0.0] + path.jump_times[i][keep].tolist())
    return out[0] if path.single else out


def midpoints(grid: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Cell midpoints and lengths of the grid cells inside ``[0, t]``."""
    a, b = grid[:-1], grid[1:]
    lengths = np.clip(np.minimum(b, t) - a, 0.0, None)
    return 0.5 * (a + np.minimum(b, t)), lengths


def pathwise_jtilde_integral(path: CanonicalPath, model: LevyModel, partition: ShellPartition,
                             v: Callable, values: ValueSet, t: float | None = None,
                             warnings: list | None = None):
    """Compensated jump integral of ``v(s-, x) x`` over ``(0, t] x values``.

    ``v(path, s, x)`` returns per-row values; it receives ``s`` and ``x`` as
    ``(n, J)`` arrays for the jump sum and scalars for the compensator.  The
    compensator uses the left grid point of every cell and the nu nodes of
    the simulated coverage.  Regions reaching below the truncation floor are
    reported through ``warnings``.
    """
    t = path.T if t is None else float(t)
    vals = values.without_zero()
    covered = vals.intersect(partition.coverage)
    if warnings is not None:
        below = vals.intersect(ValueSet.abs_between(0.0, partition.floor))
        if model.nu.mass(below) > 0:
            warnings.append("region reaches below the truncation floor "
                            f"eps_K={partition.floor:g}; untruncated mass ignored")
    mask = np.isfinite(path.jump_times) & covered.contains(path.jump_sizes) \
        & (path.jump_times <= t)
    s_safe = np.where(mask, path.jump_times, t)
    vals_at = np.asarray(v(path, s_safe, path.jump_sizes), dtype=float)
    jump_part = np.sum(np.where(mask, vals_at * path.jump_sizes, 0.0), axis=1)
    xs, ws = model.nu.nodes(covered)
    comp = np.zeros(path.n)
    left_pts = path.grid[:-1]
    lengths = np.clip(np.minimum(path.grid[1:], t) - left_pts, 0.0, None)
    for s, ds in zip(left_pts, lengths):
        if ds == 0:
            continue
        for x, w in zip(xs, ws):
            comp += np.broadcast_to(v(path, s, x), (path.n,)) * x * w * ds
    return path.out(jump_part - comp)


# --------------------------------------------------------------------------
# line-delimited dump
# --------------------------------------------------------------------------


def dump_paths(path: CanonicalPath, fh, seed: int | None = None, start: int = 0) -> None:
    """Write one JSON record per row: grid spacing, Brownian values, jumps.

    Floats are written with ``repr`` precision so that the dump round-trips
    bit for bit.
    """
    spacing = np.diff(path.grid)
    uniform = bool(np.all(spacing == spacing[0]))
    for i in range(path.n):
        rec = {
            "index": start + i,
            "seed": seed,
            "T": path.T,
            "dt": float(spacing[0]) if uniform else spacing.tolist(),
            "brownian": path.brownian[i].tolist(),
            "jumps": [[s, x, int(k)] for (s, x), k in
                      zip(path.jumps(i), path.jump_shells[i][np.isfinite(path.jump_times[i])])],
            "epsilons": list(path.epsilons),
        }
        fh.write(json.dumps(rec) + "\n")


def load_paths(fh, grid: np.ndarray) -> CanonicalPath:
    rows = []
    eps = (1.0,)
    for line in fh:
        if not line.strip():
            continue
        rec = json.loads(line)
        eps = tuple(rec["epsilons"])
        jumps = rec["jumps"]
        rows.append((np.array(rec["brownian"]), np.array([j[0] for j in jumps]),
                     np.array([j[1] for j in jumps]), np.array([j[2] for j in jumps], dtype=np.int64)))
    return _pack(np.asarray(grid, dtype=float), rows, eps, single=len(rows) == 1)
