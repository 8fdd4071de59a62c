"""Experiment orchestration: run a config, collect assertion records, write artifacts."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import catalog
from .anticipating import (AdaptedField, energy_bound_check, mu_pairing,
                           pathwise_skorohod_bridge, skorohod_simple)
from .canonical_path import PathEnsemble, dump_paths, uniform_grid
from .chaos import isometry_value, mc_mean, multiple_integral
from .config import ConfigError, ExperimentConfig, build_model, build_partition
from .functionals import brownian_derivative, product_rule_ulps, psi
from .ito import (TEST_FUNCTIONS, YPath, d_minus_Y, epsilon_convergence_study,
                  ito_ledger_finite_variation, ito_ledger_general, refinement_study,
                  spec_catalog)
from .levy_model import DiscreteMeasure, ValueSet

__all__ = ["Record", "RunReport", "run", "CSV_COLUMNS"]

CSV_COLUMNS = ("experiment", "term", "statistic", "value", "std_error", "target", "tolerance",
               "status")


@dataclass
class Record:
    experiment: str
    term: str
    statistic: str
    value: float
    std_error: float = float("nan")
    target: float = float("nan")
    tolerance: float = float("nan")
    status: str = "info"

    def row(self) -> list:
        return [self.experiment, self.term, self.statistic] + \
            [repr(float(v)) for v in (self.value, self.std_error, self.target, self.tolerance)] + \
            [self.status]


@dataclass
class RunReport:
    config: ExperimentConfig
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)     # name -> (columns, rows)
    timings: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)  # file name -> text

    @property
    def config_hash(self) -> str:
        return self.config.hash

    @property
    def status(self) -> str:
        states = {r.status for r in self.records}
        if "fail" in states:
            return "fail"
        if "warn" in states or self.warnings:
            return "warn"
        return "pass"

    @property
    def exit_code(self) -> int:
        return 1 if self.status == "fail" else 0

    def failures(self) -> list:
        return [r for r in self.records if r.status == "fail"]

    def find(self, term: str | None = None, statistic: str | None = None) -> list:
        return [r for r in self.records if (term is None or r.term == term)
                and (statistic is None or r.statistic == statistic)]

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config_hash={self.config_hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow(r.row())
        return buf.getvalue()

    def table_text(self, name: str) -> str:
        cols, rows = self.tables[name]
        buf = io.StringIO()
        buf.write(f"# config_hash={self.config_hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        return buf.getvalue()

    def summary_text(self) -> str:
        lines = [f"experiment {self.config.name} ({self.config.kind})",
                 f"config hash {self.config_hash}", f"status {self.status.upper()}"]
        for r in self.records:
            if r.status == "info":
                continue
            lines.append(f"  [{r.status:4}] {r.term} {r.statistic}: {r.value:.6g}"
                         f" (se {r.std_error:.3g}, target {r.target:.6g}, tol {r.tolerance:.3g})")
        for w in self.warnings:
            lines.append(f"  warning: {w}")
        for k, v in self.timings.items():
            lines.append(f"  time {k}: {v:.2f}s")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(self.csv_text())
        for name in self.tables:
            (out / f"{name}.csv").write_text(self.table_text(name))
        for name, text in self.artifacts.items():
            (out / name).write_text(text)
        (out / "summary.txt").write_text(self.summary_text())
        meta = {"config": self.config.to_dict(), "config_hash": self.config_hash,
                "status": self.status, "warnings": self.warnings, "timings": self.timings}
        (out / "summary.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return out


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _judge(value, target, tol) -> str:
    if not np.isfinite(value):
        return "fail"
    return "pass" if abs(value - target) <= tol else "fail"


def _stat_record(name, term, statistic, samples, target=0.0, extra_tol=0.0, k=3.0):
    mean, se = mc_mean(samples)
    tol = k * se + extra_tol
    return Record(name, term, statistic, mean, se, target, tol, _judge(mean, target, tol))


_CACHE_LIMIT = 2e7  # grid values kept in memory per ensemble


class _Context:
    def __init__(self, cfg: ExperimentConfig, workers: int):
        self.cfg = cfg
        self.workers = max(1, int(workers))
        self.model = build_model(cfg)
        self.partition = build_partition(cfg, self.model)
        self.grid = uniform_grid(cfg.T, cfg.M)
        self.name = cfg.name
        self.params = cfg.params

        self._ensembles = {}

    def ensemble(self, size: int | None = None, grid=None) -> PathEnsemble:
        """Ensemble over ``grid``; small ones are sampled once and reused across passes."""
        grid = self.grid if grid is None else grid
        size = self.cfg.paths if size is None else int(size)
        key = (size, len(grid), float(grid[-1]))
        if key in self._ensembles:
            return self._ensembles[key]
        ens = PathEnsemble(self.model, self.partition, grid, size, self.cfg.seed,
                           self.cfg.block_size)
        if size * len(grid) <= _CACHE_LIMIT:
            ens = ens.cached()
            self._ensembles[key] = ens
        return ens

    def map(self, fn, size=None):
        return self.ensemble(size).map(fn, self.workers)


def _resolve(table, names, what):
    try:
        return catalog.resolve(table, names, what)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None


# --------------------------------------------------------------------------
# experiment kinds
# --------------------------------------------------------------------------


def _sample_paths(ctx: _Context, rep: RunReport):
    model, part, T = ctx.model, ctx.partition, ctx.cfg.T
    if model.sigma == 0 and model.nu.is_empty:
        rep.warnings.append("trivial model: sigma = 0 and nu is empty, paths are flat")
    from .canonical_path import evaluate_X

    def per_block(p):
        WT = p.brownian[:, -1]
        return np.stack([np.asarray(p.jump_count(), float), WT, WT ** 2,
                         np.asarray(evaluate_X(p, model, part, T))], axis=1)

    v = ctx.map(per_block)
    lam = part.total_intensity
    big = sum(s.mean_jump for s in part.shells if s.index == 1)
    rep.records += [
        _stat_record(ctx.name, "jumps", "mean count", v[:, 0], lam * T),
        _stat_record(ctx.name, "W_T", "mean", v[:, 1], 0.0),
        _stat_record(ctx.name, "W_T", "second moment", v[:, 2], T),
        _stat_record(ctx.name, "X_T", "mean", v[:, 3], model.gamma * T + big * T),
    ]
    n_dump = min(int(ctx.params.get("dump", 5)), ctx.cfg.paths)
    if n_dump:
        buf = io.StringIO()
        dump_paths(ctx.ensemble().block(0, n_dump), buf, seed=ctx.cfg.seed)
        rep.artifacts["paths.jsonl"] = buf.getvalue()


def _verify_isometry(ctx: _Context, rep: RunReport):
    table = _resolve(catalog.kernels(ctx.model, ctx.partition), ctx.params.get("kernels"),
                     "kernel")
    names = list(table)
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i:]]
    model, part = ctx.model, ctx.partition

    def per_block(p):
        I = {k: np.asarray(multiple_integral(p, f, model, part)) for k, f in table.items()}
        return np.stack([I[a] * I[b] for a, b in pairs], axis=1)

    v = ctx.map(per_block)
    for j, (a, b) in enumerate(pairs):
        target = isometry_value(table[a], table[b], model, part)
        kind = "E[I_n(f)I_n(g)]" if table[a].order == table[b].order else "cross-order E[I_n I_m]"
        rec = _stat_record(ctx.name, f"{a}*{b}", kind, v[:, j], target,
                           extra_tol=1e-12 * (1 + abs(target)))
        rep.records.append(rec)


def _verify_duality(ctx: _Context, rep: RunReport):
    fields = _resolve(catalog.fields(ctx.model, ctx.partition), ctx.params.get("fields"), "field")
    funcs = _resolve(catalog.functionals(ctx.model, ctx.partition),
                     ctx.params.get("functionals"), "functional")
    model, part = ctx.model, ctx.partition
    cols = [(u, None) for u in fields] + [(u, g) for u in fields for g in funcs]

    def per_block(p):
        out = []
        deltas = {k: np.asarray(skorohod_simple(u, p, None, model, part)) for k, u in fields.items()}
        for u, g in cols:
            if g is None:
                out.append(deltas[u])
            else:
                G = funcs[g]
                out.append(deltas[u] * G.evaluate(p)
                           - np.asarray(mu_pairing(fields[u], G, p, model, part)))
        return np.stack(out, axis=1)

    v = ctx.map(per_block)
    for j, (u, g) in enumerate(cols):
        if g is None:
            rep.records.append(_stat_record(ctx.name, u, "E[delta(u)]", v[:, j]))
        else:
            rep.records.append(_stat_record(ctx.name, f"{u}|{g}",
                                            "E[delta(u)F] - E[<u,DF>_mu]", v[:, j]))


def _jump_draws(ctx: _Context, rng, size):
    nu = ctx.model.nu
    if isinstance(nu, DiscreteMeasure) and nu.atoms:
        xs = np.array([x for x, _ in nu.atoms])
        return rng.choice(xs, size=size)
    mag = rng.uniform(ctx.partition.floor, 2.0, size=size)
    return mag * rng.choice([-1.0, 1.0], size=size)


def _psi_algebra(ctx: _Context, rep: RunReport):
    funcs = catalog.functionals(ctx.model, ctx.partition)
    names = sorted(funcs)
    draws = int(ctx.params.get("draws", 1000))
    limit = float(ctx.params.get("max_ulps", 4.0))
    rng = np.random.default_rng([ctx.cfg.seed, 0x5A1])
    ens = ctx.ensemble()
    size = min(ctx.cfg.paths, draws)
    block = ens.block(0, size)
    fi = rng.integers(len(names), size=draws)
    gi = rng.integers(len(names), size=draws)
    rows = rng.integers(size, size=draws)
    ts = rng.uniform(0.0, ctx.cfg.T, size=draws)
    ts = np.where(ts == 0.0, ctx.cfg.T, ts)
    xs = _jump_draws(ctx, rng, draws)
    worst = np.zeros(draws)
    for k in range(draws):
        p = block.row(int(rows[k])).batch()
        worst[k] = float(np.max(product_rule_ulps(funcs[names[fi[k]]], funcs[names[gi[k]]], p,
                                                  ts[k], xs[k])))
    rep.records.append(Record(ctx.name, "psi(FG)", "max relative residual [ulp]",
                              float(worst.max()), 0.0, 0.0, limit,
                              "pass" if worst.max() <= limit else "fail"))
    rep.records.append(Record(ctx.name, "psi(FG)", "draws", float(draws)))


def _derivative_check(ctx: _Context, rep: RunReport):
    funcs = catalog.cylindrical_functionals(ctx.model)
    T = ctx.cfg.T
    rng = np.random.default_rng([ctx.cfg.seed, 0xD])
    ts = np.sort(rng.uniform(0.0, T, size=int(ctx.params.get("times", 8))))
    ts = np.where(ts == 0.0, T, ts)
    rel_tol = float(ctx.params.get("rel_tol", 1e-6))
    p = ctx.ensemble().block(0, min(ctx.cfg.paths, ctx.cfg.block_size))
    xs = _jump_draws(ctx, rng, ts.size)
    for name, F in funcs.items():
        worst = 0.0
        for t in ts:
            a = np.asarray(brownian_derivative(F, p, t, "analytic"))
            f = np.asarray(brownian_derivative(F, p, t, "fd"))
            err = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-3)
            worst = max(worst, float(err.max()))
        rep.records.append(Record(ctx.name, name, "analytic vs FD relative error", worst, 0.0,
                                  0.0, rel_tol, "pass" if worst <= rel_tol else "fail"))
        horizon = F.adapted_up_to
        if horizon is None or horizon >= T:
            continue
        beyond = np.linspace(horizon, T, 5)[1:]
        psi_max = max(float(np.max(np.abs(psi(F, p, t, x)))) for t, x in zip(beyond, xs))
        dw_max = max(float(np.max(np.abs(brownian_derivative(F, p, t, "analytic"))))
                     for t in beyond)
        rep.records.append(Record(ctx.name, name, "max |Psi_{t,x}F| beyond horizon", psi_max,
                                  0.0, 0.0, 0.0, "pass" if psi_max == 0 else "fail"))
        rep.records.append(Record(ctx.name, name, "max |D^W_t F| beyond horizon", dw_max,
                                  0.0, 0.0, 0.0, "pass" if dw_max == 0 else "fail"))


def _energy_check(ctx: _Context, rep: RunReport):
    model, part, T = ctx.model, ctx.partition, ctx.cfg.T
    fields = _resolve(catalog.fields(model, part), ctx.params.get("fields"), "field")
    n_time = int(ctx.params.get("n_time", 8))
    semi = ctx.ensemble(min(ctx.cfg.paths, int(ctx.params.get("seminorm_paths", ctx.cfg.paths))))
    for name, u in fields.items():
        er = energy_bound_check(u, model, part, ctx.ensemble(), n_time=n_time,
                                workers=ctx.workers, seminorm_ensemble=semi)
        se = er.se_moment + er.se_bound
        rep.records.append(Record(ctx.name, name, "E[delta(u)^2]", er.second_moment,
                                  er.se_moment))
        rep.records.append(Record(ctx.name, name, "2||u||_F^2", er.bound, er.se_bound))
        rep.records.append(Record(ctx.name, name, "energy margin", er.margin, se, 0.0, 3 * se,
                                  "pass" if er.holds else "fail"))
    if "WT_slice" not in fields or model.sigma == 0:
        return
    from .anticipating import SimpleRandomField, slice_indicator
    from .functionals import brownian_at
    times = [float(t) * T for t in ctx.params.get("closed_form_times", [1.0])]
    WT = brownian_at(T)
    us = [SimpleRandomField([(WT, slice_indicator(0.0, t))]) for t in times]

    def per_block(p):
        cols = []
        for t, u in zip(times, us):
            d = np.asarray(skorohod_simple(u, p, t, model, part)) / model.sigma
            closed = p.brownian[:, -1] * p.brownian_at(t) - t
            cols += [np.abs(d - closed) / (1.0 + np.abs(closed)), d ** 2]
        return np.stack(cols, axis=1)

    v = ctx.map(per_block)
    for j, t in enumerate(times):
        err = float(v[:, 2 * j].max())
        tol = 64 * np.finfo(float).eps
        rep.records.append(Record(ctx.name, f"W_T 1_[0,{t:g}]", "max |delta - (W_T W_t - t)|",
                                  err, 0.0, 0.0, tol, "pass" if err <= tol else "fail"))
        rep.records.append(_stat_record(ctx.name, f"W_T 1_[0,{t:g}]", "E[delta^2]",
                                        v[:, 2 * j + 1], T * t + t * t))


def _bridge_check(ctx: _Context, rep: RunReport):
    model, part, T = ctx.model, ctx.partition, ctx.cfg.T
    fields = _resolve(catalog.bridge_fields(model, part), ctx.params.get("fields"), "field")
    a, b = (float(v) for v in ctx.params.get("region", [0.25, 1.0]))
    region = ValueSet.abs_between(a, b)
    t = float(ctx.params.get("t", T))
    xs, _ = model.nu.nodes(region.intersect(part.coverage))
    xmax = float(np.max(np.abs(xs))) if xs.size else 0.0
    lam = part.total_intensity
    dt = T / ctx.cfg.M
    for name, u in fields.items():
        br = pathwise_skorohod_bridge(u, ctx.ensemble(), model, part, region, t, ctx.workers)
        rep.warnings += [f"{name}: {w}" for w in br.warnings]
        quad = 0.0
        if isinstance(u, AdaptedField):
            quad = u.g_bound * u.kernel.bound * xmax * lam ** 2 * t * dt
        # floating-point floor: a few ulps of the magnitudes that cancel
        scale = np.abs(br.lhs) + np.abs(br.skorohod) + np.abs(br.drift) + np.abs(br.dminus)
        rounding = 64 * np.finfo(float).eps * float(np.mean(scale))
        tol = 3 * br.se + quad + rounding
        rep.records.append(Record(ctx.name, name, "mean bridge residual", br.mean_residual, br.se,
                                  0.0, tol, _judge(br.mean_residual, 0.0, tol)))
        rep.records.append(Record(ctx.name, name, "quadrature bound", quad))


def _spec_and_F(ctx: _Context):
    try:
        spec = spec_catalog(ctx.params.get("spec", "brownian"), ctx.model)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    fname = ctx.params.get("F", "square")
    if fname not in TEST_FUNCTIONS:
        raise ConfigError(f"unknown test function {fname!r}")
    F = TEST_FUNCTIONS[fname]
    if F.dim != spec.dim:
        raise ConfigError(f"test function {fname!r} does not match the dimension of Y")
    return spec, F


def _ledger_records(ctx, rep, led, tol_extra):
    for term, (mean, se) in led.summary().items():
        if term == "residual":
            continue
        rep.records.append(Record(ctx.name, term, "mean", mean, se))
    book = float(np.max(np.abs(led.lhs - led.rhs - led.residual)))
    rep.records.append(Record(ctx.name, "ledger", "bookkeeping |lhs - rhs - residual|", book,
                              0.0, 0.0, 0.0, "pass" if book == 0 else "fail"))
    rep.records.append(_stat_record(ctx.name, "residual", "mean", led.residual, 0.0, tol_extra))
    rep.records.append(Record(ctx.name, "residual", "rms", led.rms_residual()))
    rep.records.append(Record(ctx.name, "lhs", "rms", led.rms_lhs()))
    rep.warnings += led.warnings


def _verify_ito(ctx: _Context, rep: RunReport):
    model, part, T = ctx.model, ctx.partition, ctx.cfg.T
    spec, F = _spec_and_F(ctx)
    t = float(ctx.params.get("t", T))
    eps = ctx.params.get("eps")
    eps = part.floor if eps is None else float(eps)
    if not part.floor <= eps <= 1:
        raise ConfigError(f"eps must lie in [{part.floor:g}, 1]")
    ens = ctx.ensemble()
    dt = T / ctx.cfg.M
    grid_tol = float(ctx.params.get("grid_tolerance", 4.0)) * T * dt
    led = ito_ledger_general(spec, F, ens, model, part, eps, t, ctx.workers)
    _ledger_records(ctx, rep, led, grid_tol)
    rep.records.append(Record(ctx.name, "residual", "grid tolerance", grid_tol))
    probe = ens.block(0, min(ctx.cfg.paths, 200))
    if spec.closed_form is not None:
        Yp = YPath(spec, probe, model, part, eps)
        diff = np.abs(spec.closed_form(probe, probe.grid) - Yp.on_grid())
        err = float(np.max(diff / (1.0 + np.abs(Yp.on_grid()))))
        tol = 1e-12
        rep.records.append(Record(ctx.name, "Y", "closed form vs factorization", err, 0.0, 0.0,
                                  tol, "pass" if err <= tol else "fail"))
    if spec.d_minus_hook is not None and model.sigma > 0:
        from dataclasses import replace
        generic = replace(spec, d_minus_hook=None)
        worst = 0.0
        for s in np.linspace(0.0, T, 5)[1:-1]:
            a = d_minus_Y(spec, probe, model, part, s)
            g = d_minus_Y(generic, probe, model, part, s)
            worst = max(worst, float(np.max(np.abs(a - g) / (1.0 + np.abs(a)))))
        tol = 1e-6
        rep.records.append(Record(ctx.name, "D-Y(s,0)", "hook vs differentiated spec", worst,
                                  0.0, 0.0, tol, "pass" if worst <= tol else "fail"))
    cells = ctx.params.get("refinement")
    if cells:
        cells = [int(c) for c in cells]
        if any(ctx.cfg.M % c for c in cells):
            raise ConfigError("refinement grids must divide the configured M")
        study = refinement_study(spec, F, ens, model, part, cells, t, ctx.workers)
        rows = [(c, T / c, r, l, r / l) for c, r, l in
                zip(study.cells, study.rms_residual, study.rms_lhs)]
        rep.tables["refinement"] = (("cells", "dt", "rms_residual", "rms_lhs", "ratio"), rows)
        lo, hi = (float(v) for v in ctx.params.get("order_range", [0.35, 0.65]))
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        rep.records.append(Record(ctx.name, "refinement", "empirical order", study.order, 0.0,
                                  mid, half, _judge(study.order, mid, half)))
        ratio = rows[-1][4]
        limit = float(ctx.params.get("max_relative_rms", 0.01))
        rep.records.append(Record(ctx.name, "refinement",
                                  f"rms residual / rms lhs at M={rows[-1][0]}", ratio, 0.0, 0.0,
                                  limit, "pass" if ratio <= limit else "fail"))


def _verify_ito_fv(ctx: _Context, rep: RunReport):
    from .functionals import UnsupportedOperation
    model, part, T = ctx.model, ctx.partition, ctx.cfg.T
    spec, F = _spec_and_F(ctx)
    t = float(ctx.params.get("t", T))
    ens = ctx.ensemble()
    try:
        led = ito_ledger_finite_variation(spec, F, ens, model, part, t, ctx.workers)
    except UnsupportedOperation as exc:
        raise ConfigError(f"finite-variation form refused: {exc}") from None
    for term, (mean, se) in led.summary().items():
        if term != "residual":
            rep.records.append(Record(ctx.name, term, "mean", mean, se))
    res = np.abs(led.residual)
    frac = float(np.mean(res <= led.bound))
    rep.records.append(Record(ctx.name, "residual", "fraction of paths within drift bound", frac,
                              0.0, 1.0, 0.0, "pass" if frac == 1.0 else "fail"))
    rep.records.append(Record(ctx.name, "residual", "max |residual|", float(res.max())))
    rep.records.append(Record(ctx.name, "residual", "max drift bound", float(led.bound.max())))
    if ctx.params.get("compare_general", False):
        gen = ito_ledger_general(spec, F, ens, model, part, None, t, ctx.workers)
        rep.records.append(_stat_record(ctx.name, "cross-check", "rhs(fv) - rhs(general)",
                                        led.rhs - gen.rhs, 0.0, float(np.mean(led.bound))))


def _epsilon_study(ctx: _Context, rep: RunReport):
    model, part, T = ctx.model, ctx.partition, ctx.cfg.T
    spec, _ = _spec_and_F(ctx) if "F" in ctx.params else (None, None)
    if spec is None:
        try:
            spec = spec_catalog(ctx.params.get("spec", "small-jump"), model)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
    schedule = [float(e) for e in ctx.params.get("schedule", [1.0, 0.5, 0.25, 0.1])]
    if any(e < part.floor or e > 1 for e in schedule):
        raise ConfigError(f"schedule entries must lie in [{part.floor:g}, 1]")
    t = float(ctx.params.get("t", T))
    st = epsilon_convergence_study(spec, ctx.ensemble(), model, part, schedule, t, ctx.workers)
    analytic = _epsilon_gap_oracle(ctx, spec.name, st.eps, t)
    rows = []
    for j, (e, g, se) in enumerate(zip(st.eps, st.gap, st.se)):
        target = analytic[j] if analytic else float("nan")
        rows.append((e, g, se, target, st.sup_gap[j], st.sup_se[j]))
        if analytic:
            tol = 3 * se + 1e-12
            rep.records.append(Record(ctx.name, f"eps={e:g}", "E[(Y^eps - Y)^2]", g, se, target,
                                      tol, _judge(g, target, tol)))
        else:
            rep.records.append(Record(ctx.name, f"eps={e:g}", "E[(Y^eps - Y)^2]", g, se))
        rep.records.append(Record(ctx.name, f"eps={e:g}", "E[max_grid |Y^eps - Y|^2]",
                                  st.sup_gap[j], st.sup_se[j]))
    rep.tables["epsilon"] = (("eps", "gap", "std_error", "analytic", "sup_gap", "sup_std_error"),
                             rows)
    rep.records.append(Record(ctx.name, "gap", "non-increasing within 3 SE", float(st.monotone),
                              0.0, 1.0, 0.0, "pass" if st.monotone else "fail"))
    nu = model.nu
    if isinstance(nu, DiscreteMeasure) and nu.atoms:
        smallest = min(abs(x) for x, _ in nu.atoms if abs(x) > part.floor)
        below = [g for e, g in zip(st.eps, st.gap) if e < smallest]
        if below:
            worst = float(max(below))
            rep.records.append(Record(ctx.name, "gap", "max gap below smallest atom", worst, 0.0,
                                      0.0, 0.0, "pass" if worst == 0 else "fail"))


def _epsilon_gap_oracle(ctx, name, schedule, t):
    """Closed form for the unit small-jump coefficient on a discrete measure."""
    nu = ctx.model.nu
    if name != "small-jump" or not isinstance(nu, DiscreteMeasure):
        return None
    floor = ctx.partition.floor
    return [t * sum(m * x * x for x, m in nu.atoms if floor < abs(x) <= min(e, 1.0))
            for e in schedule]


_KINDS = {
    "sample-paths": _sample_paths,
    "verify-isometry": _verify_isometry,
    "verify-duality": _verify_duality,
    "psi-algebra": _psi_algebra,
    "derivative-check": _derivative_check,
    "energy-check": _energy_check,
    "bridge-check": _bridge_check,
    "verify-ito": _verify_ito,
    "verify-ito-fv": _verify_ito_fv,
    "epsilon-study": _epsilon_study,
}


def run(cfg: ExperimentConfig, out_dir: str | Path | None = None, workers: int = 1) -> RunReport:
    """Execute ``cfg`` and optionally write ``results.csv`` plus tables to ``out_dir``.

    Configuration problems raise :class:`ConfigError` before any sampling.
    """
    cfg.validate()
    start = time.perf_counter()
    ctx = _Context(cfg, workers)
    rep = RunReport(cfg)
    _KINDS[cfg.kind](ctx, rep)
    rep.warnings = sorted(set(rep.warnings))
    rep.timings["total"] = time.perf_counter() - start
    if out_dir is not None:
        rep.write(out_dir)
    return rep
