"""Monte Carlo orchestration: ensemble runs, gates, outputs and convergence studies."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .affine import curve_from_state, simulate_state, swap_loadings
from .curve import (ForwardModel, explicit_forward_solution, fmt, simulate_forward_euler,
                    write_csv, write_forward_csv, write_swap_csv)
from .drivers import TimeGrid, sample_driver_path
from .errors import ArgumentError, PlanError
from .measure import density_path
from .models import ModelBundle, risk_premium_forward
from .stats import EnsembleStats, map_blocks, tree_merge

OUTPUTS = ("curves", "swaps", "spot", "density", "risk-premium")
GATES = ("martingale", "q-martingale")


def _label(x):
    return format(float(x), ".10g")


@dataclass
class SimulationPlan:
    paths: int = 100_000
    dt: float = 1 / 365
    horizon: float = 2.0
    scheme: str = "euler"
    seed: int = 0
    maturities: tuple | None = None
    deliveries: tuple | None = None
    outputs: tuple = ("curves", "swaps")
    record_times: tuple | None = None
    gates: tuple = ()
    dump_paths: int = 0

    def __post_init__(self):
        if self.paths < 1:
            raise PlanError("need at least one path")
        if self.scheme not in ("euler", "exact-ou"):
            raise PlanError(f"unknown scheme {self.scheme!r}; use euler or exact-ou")
        try:
            self.grid = TimeGrid.from_step(self.horizon, self.dt)
        except ArgumentError as exc:
            raise PlanError(str(exc)) from None
        H = self.horizon
        if self.maturities is None:
            self.maturities = (H / 4, H / 2, 3 * H / 4, H)
        if self.deliveries is None:
            self.deliveries = ((H / 2, 3 * H / 4), (3 * H / 4, H))
        self.maturities = tuple(float(T) for T in self.maturities)
        self.deliveries = tuple((float(a), float(b)) for a, b in self.deliveries)
        for T in self.maturities:
            if T > self.horizon + 1e-12:
                raise PlanError(f"maturity {T} is beyond the horizon {self.horizon}")
        for a, b in self.deliveries:
            if not a < b or b > self.horizon + 1e-12:
                raise PlanError(f"delivery ({a}, {b}) needs T1 < T2 <= {self.horizon}")
        for name in self.outputs:
            if name not in OUTPUTS:
                raise PlanError(f"unknown output {name!r}; known: {OUTPUTS}")
        for name in self.gates:
            if name not in GATES:
                raise PlanError(f"unknown gate {name!r}; known: {GATES}")
        if self.record_times is None:
            steps = self.grid.steps
            idx = sorted({steps // 4, steps // 2, (3 * steps) // 4, steps} - {0})
        else:
            try:
                idx = sorted({self.grid.index_of(float(t)) for t in self.record_times})
            except ArgumentError as exc:
                raise PlanError(f"record time is not on the simulation grid: {exc}") from None
        self.record_steps = tuple(idx)

    @property
    def record_at(self):
        return tuple(float(self.grid.times[i]) for i in self.record_steps)


@dataclass
class RunResult:
    plan: SimulationPlan
    stats: EnsembleStats
    gates: dict = field(default_factory=dict)
    paths: list = field(default_factory=list)

    @property
    def passed(self):
        return all(self.gates.values())

    def curve_rows(self):
        return [(t, T, c, self.stats.mean(key)) for key, (t, T, c) in self._index("forward")]

    def swap_rows(self):
        return [(t, a, b, c, self.stats.mean(key)) for key, (t, a, b, c) in self._index("swap")]

    def _index(self, quantity):
        out = []
        for q, contract in self.stats.keys():
            if q != quantity:
                continue
            parts = dict(p.split("=") for p in contract.split(";"))
            t, c = float(parts["t"]), int(parts["c"])
            if "T" in parts:
                out.append(((q, contract), (t, float(parts["T"]), c)))
            else:
                out.append(((q, contract), (t, float(parts["T1"]), float(parts["T2"]), c)))
        return out

    def write(self, outdir):
        """Write stats.csv, curves.csv, swaps.csv and (if dumped) paths.csv."""
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "stats.csv", ("quantity", "contract", "mean", "se", "n"),
                  self.stats.rows())
        write_forward_csv(out / "curves.csv", self.curve_rows())
        write_swap_csv(out / "swaps.csv", self.swap_rows())
        if self.paths:
            write_csv(out / "paths.csv", ("path", "t", "T", "commodity", "value"), self.paths)
        return out


def _check_bundle(plan, bundle):
    if plan.horizon > bundle.horizon + 1e-12:
        raise PlanError(f"plan horizon {plan.horizon} exceeds model horizon {bundle.horizon}")
    for T in plan.maturities:
        if T > bundle.horizon + 1e-12:
            raise PlanError(f"maturity {T} is beyond the model horizon")


def run(plan: SimulationPlan, bundle: ModelBundle, workers=None) -> RunResult:
    """Simulate ``plan.paths`` paths of the bundle's state and aggregate statistics.

    Every path is a function of ``(seed, index)``; chunk statistics are merged
    in a fixed order, so results do not depend on ``workers``.
    """
    _check_bundle(plan, bundle)
    spec, kernel = bundle.affine, bundle.kernel
    grid = plan.grid
    rec = plan.record_steps
    times = plan.record_at
    w = bundle.weight
    need_density = "density" in plan.outputs or bool(plan.gates)
    n = spec.n
    scheme = "exact" if plan.scheme == "exact-ou" else "euler"

    fwd = [(t, [T for T in plan.maturities if T >= t - 1e-12]) for t in times]
    swp = [(t, [(a, b) for a, b in plan.deliveries if a >= t - 1e-12]) for t in times]
    loadings = {(t, a, b): swap_loadings(spec, t, w, a, b) for t, ds in swp for a, b in ds}
    premium = "risk-premium" in plan.outputs

    def block(start, count):
        path = sample_driver_path(spec.driver, grid, plan.seed, start=start, count=count)
        if need_density:
            X = simulate_state(spec, path, scheme)
            Z = density_path(kernel, spec, path, states=X).Z
            Xr, Zr = X[list(rec)], Z[list(rec)]
        else:
            Xr = simulate_state(spec, path, scheme, record=rec)
            Zr = None
        samples = {}
        for r, (t, Ts) in enumerate(fwd):
            X = Xr[r]
            if Ts:
                f = curve_from_state(spec, [t], X[None], Ts)[0]
                for j, T in enumerate(Ts):
                    for c in range(n):
                        key = f"t={_label(t)};T={_label(T)};c={c}"
                        if "curves" in plan.outputs:
                            samples[("forward", key)] = f[:, j, c]
                        if "q-martingale" in plan.gates:
                            samples[("Zf", key)] = Zr[r] * f[:, j, c]
                    if premium:
                        rp = risk_premium_forward(bundle.forward, f[:, j], t, T, panels=256)
                        for c in range(n):
                            samples[("risk-premium", f"t={_label(t)};T={_label(T)};c={c}")] = rp[:, c]
            if "swaps" in plan.outputs or "q-martingale" in plan.gates:
                for a, b in swp[r][1]:
                    A, B = loadings[(t, a, b)]
                    F = X @ A[0].T + B[0]
                    for c in range(n):
                        key = f"t={_label(t)};T1={_label(a)};T2={_label(b)};c={c}"
                        if "swaps" in plan.outputs:
                            samples[("swap", key)] = F[:, c]
                        if "q-martingale" in plan.gates:
                            samples[("ZF", key)] = Zr[r] * F[:, c]
            if "spot" in plan.outputs:
                S = curve_from_state(spec, [t], X[None], [t])[0, :, 0]
                for c in range(n):
                    samples[("spot", f"t={_label(t)};c={c}")] = S[:, c]
            if need_density:
                samples[("density", f"t={_label(t)}")] = Zr[r]
        stats = EnsembleStats.from_samples(samples)
        dumped = []
        if plan.dump_paths and start < plan.dump_paths:
            take = min(count, plan.dump_paths - start)
            for r, (t, Ts) in enumerate(fwd):
                if not Ts:
                    continue
                f = curve_from_state(spec, [t], Xr[r][None, :take], Ts)[0]
                for p in range(take):
                    for j, T in enumerate(Ts):
                        for c in range(n):
                            dumped.append((start + p, t, T, c, float(f[p, j, c])))
        return stats, dumped

    parts = map_blocks(plan.paths, block, workers, reduce=False)
    stats = tree_merge([p[0] for p in parts])
    dumped = sorted((row for p in parts for row in p[1]), key=lambda r: (r[0], r[1], r[2], r[3]))
    dumped = [(p, fmt(t), fmt(T), c, fmt(v)) for p, t, T, c, v in dumped]
    gates = {}
    if "martingale" in plan.gates:
        ok = True
        for t in times:
            key = ("density", f"t={_label(t)}")
            ok &= abs(stats.mean(key) - 1.0) <= 3.0 * stats.se(key) and stats.min(key) > 0
        gates["martingale"] = bool(ok)
    if "q-martingale" in plan.gates:
        ok = True
        for q, contract in stats.keys():
            if q == "Zf":
                spec_parts = dict(p.split("=") for p in contract.split(";"))
                target = bundle.forward.initial(np.array([float(spec_parts["T"])]))[0, int(spec_parts["c"])]
            elif q == "ZF":
                spec_parts = dict(p.split("=") for p in contract.split(";"))
                A, B = swap_loadings(spec, 0.0, w, float(spec_parts["T1"]), float(spec_parts["T2"]))
                target = (A[0] @ spec.x0 + B[0])[int(spec_parts["c"])]
            else:
                continue
            key = (q, contract)
            ok &= abs(stats.mean(key) - target) <= 3.0 * stats.se(key)
        gates["q-martingale"] = bool(ok)
    return RunResult(plan, stats, gates, dumped)


# ---------------------------------------------------------------------------
# convergence


@dataclass
class ConvergenceTable:
    dts: np.ndarray
    errors: np.ndarray
    order: float
    scheme: str

    def ratios(self):
        return self.errors[:-1] / self.errors[1:]

    def format(self):
        lines = [f"{'dt':>12} {'rms error':>14}"]
        lines += [f"{dt:12.6g} {e:14.6e}" for dt, e in zip(self.dts, self.errors)]
        lines.append(f"empirical order ({self.scheme}): {self.order:.3f}")
        return "\n".join(lines)


def convergence_study(plan: SimulationPlan, model: ForwardModel, refinements, maturity=None,
                      ref_factor=8) -> ConvergenceTable:
    """Strong RMS error at ``plan.horizon`` against a fine explicit reference.

    The reference runs on a grid ``ref_factor`` times finer than the finest
    level; every level observes the same driver realisation by coarsening it.
    """
    dts = np.sort(np.asarray(refinements, dtype=float))[::-1]
    if dts.size < 3:
        raise ArgumentError("a convergence study needs at least three levels")
    h_ref = dts[-1] / ref_factor
    fine = TimeGrid.from_step(plan.horizon, h_ref)
    factors = [int(round(dt / h_ref)) for dt in dts]
    for dt, fct in zip(dts, factors):
        if abs(fct * h_ref - dt) > 1e-12 * max(1.0, dt) or fine.steps % fct:
            raise ArgumentError(f"step {dt} is not a multiple of the reference step {h_ref}")
    T = plan.horizon if maturity is None else float(maturity)

    def block(start, count):
        path = sample_driver_path(model.driver, fine, plan.seed, start=start, count=count)
        ref = explicit_forward_solution(model, path, [T], record=[fine.steps])[0]
        out = []
        for fct in factors:
            coarse = path.coarsen(fct)
            last = [coarse.grid.steps]
            if plan.scheme == "euler":
                approx = simulate_forward_euler(model, coarse, [T], record=last)[0]
            else:
                approx = explicit_forward_solution(model, coarse, [T], record=last)[0]
            out.append(((approx - ref) ** 2).sum(axis=(1, 2)))
        return EnsembleStats.from_samples({("err2", str(i)): e for i, e in enumerate(out)})

    stats = map_blocks(plan.paths, block)
    errors = np.array([math.sqrt(stats.mean(("err2", str(i)))) for i in range(dts.size)])
    positive = errors > 0
    if positive.sum() >= 2:
        order = float(np.polyfit(np.log(dts[positive]), np.log(errors[positive]), 1)[0])
    else:
        order = math.nan
    return ConvergenceTable(dts, errors, order, plan.scheme)
