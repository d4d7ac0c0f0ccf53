"""Forward and swap curve dynamics, explicit solutions and swap aggregation.

Forward prices follow

    df(t,T) = (c(t,T) - lam(t) f(t,T)) dt + sigma(t,T) dW + psi(t,T) dJ

and swaps over a delivery period are weighted averages of forwards.  Arrays of
forward values carry axes ``(time, path, maturity, commodity)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .drivers import DriverPath, LevyDriver
from .errors import ArgumentError, DimensionError, ModelError, UnsupportedError
from .matfield import CurveField, MatrixField, check_cp, mat_exp, simpson_nodes

SWAP_PANELS = 512
DERIV_STEP_T = 1e-4


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class WeightFunction:
    """Settlement weight over a delivery period, integrating to the identity.

    ``flat`` and ``discounted`` are scalar multiples of the identity.  A
    ``custom`` weight supplies ``func(T, T1, T2) -> (..., n, n)``.
    """

    kind: str = "flat"
    rate: float = 0.0
    func: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("flat", "discounted", "custom"):
            raise ArgumentError(f"unknown weight kind {self.kind!r}")
        if self.kind == "custom" and self.func is None:
            raise ArgumentError("custom weight needs func")

    @classmethod
    def flat(cls):
        return cls("flat")

    @classmethod
    def discounted(cls, rate):
        return cls("discounted", rate=float(rate))

    @property
    def is_scalar(self):
        return self.kind != "custom"

    def scalar(self, T, T1, T2):
        if not T1 < T2:
            raise ArgumentError(f"delivery period needs T1 < T2, got ({T1}, {T2})")
        T = np.asarray(T, dtype=float)
        length = T2 - T1
        if self.kind == "flat" or self.rate == 0.0:
            return np.full(T.shape, 1.0 / length)
        if self.kind == "discounted":
            r = self.rate
            return r * np.exp(-r * (T - T1)) / -np.expm1(-r * length)
        raise UnsupportedError("custom weights are matrix valued")

    def __call__(self, T, T1, T2, n=1):
        if self.is_scalar:
            w = self.scalar(T, T1, T2)
            return w[..., None, None] * np.eye(n)
        if not T1 < T2:
            raise ArgumentError(f"delivery period needs T1 < T2, got ({T1}, {T2})")
        return np.asarray(self.func(np.asarray(T, dtype=float), T1, T2), dtype=float)

    def normalization_error(self, T1, T2, n=1, panels=SWAP_PANELS):
        nodes, w = simpson_nodes(T1, T2, panels)
        total = np.einsum("p,pij->ij", w, self(nodes, T1, T2, n))
        return float(np.abs(total - np.eye(n)).max())


def _swap_quadrature(w: WeightFunction, T1, T2, n, panels):
    nodes, qw = simpson_nodes(T1, T2, panels)
    if w.is_scalar:
        return nodes, (qw * w.scalar(nodes, T1, T2))[:, None, None] * np.eye(n)
    return nodes, qw[:, None, None] * w(nodes, T1, T2, n)


# ---------------------------------------------------------------------------
# models


@dataclass
class ForwardModel:
    """Coefficients of the forward dynamics for ``n`` commodities and ``k`` drivers.

    ``c`` is an n-vector curve field, ``sigma``/``psi`` are ``(n, k)`` curve
    fields, ``lam`` is an ``(n, n)`` field of time and ``f0`` maps an array of
    maturities to ``(..., n)``.  ``f0_T`` optionally gives its derivative.
    """

    c: CurveField
    lam: MatrixField
    sigma: CurveField
    psi: CurveField
    f0: Callable[[np.ndarray], np.ndarray]
    driver: LevyDriver
    horizon: float
    f0_T: Callable | None = None
    check: bool = True

    def __post_init__(self):
        n = self.lam.dims[0]
        if self.lam.dims != (n, n):
            raise DimensionError("lam must be square")
        if self.c.dims != (n,):
            raise DimensionError(f"c must be an {n}-vector field")
        for name in ("sigma", "psi"):
            if getattr(self, name).dims != (n, self.driver.k):
                raise DimensionError(f"{name} must have dims ({n}, {self.driver.k})")
        if self.check and not check_cp(self.lam, np.linspace(0.0, self.horizon, 17), 1e-10):
            raise ModelError("mean-reversion field fails the commutative property")

    @property
    def n(self):
        return self.lam.dims[0]

    @property
    def k(self):
        return self.driver.k

    def initial(self, T):
        return np.asarray(self.f0(np.asarray(T, dtype=float)), dtype=float).reshape(
            np.shape(T) + (self.n,))

    def initial_slope(self, T, h=DERIV_STEP_T):
        T = np.asarray(T, dtype=float)
        if self.f0_T is not None:
            return np.asarray(self.f0_T(T), dtype=float).reshape(T.shape + (self.n,))
        if h is None:
            raise UnsupportedError("initial curve has no maturity derivative")
        return (self.initial(T + h) - self.initial(T - h)) / (2.0 * h)


@dataclass
class SwapModel:
    """Swap dynamics for one delivery period; ``lam`` is the forward model's field."""

    T1: float
    T2: float
    C: MatrixField
    lam: MatrixField
    Sigma: MatrixField
    Psi: MatrixField
    F0: np.ndarray
    driver: LevyDriver

    @property
    def n(self):
        return self.lam.dims[0]


def aggregate_swap_coefficients(model: ForwardModel, w: WeightFunction, T1, T2,
                                panels=SWAP_PANELS) -> SwapModel:
    """Average drift and loadings of the forwards over ``[T1, T2]``."""
    if not T1 < T2:
        raise ArgumentError(f"delivery period needs T1 < T2, got ({T1}, {T2})")
    n = model.n
    if not w.is_scalar:
        nodes = np.linspace(T1, T2, 9)
        W = w(nodes, T1, T2, n)
        L = model.lam(np.linspace(0.0, min(T1, model.horizon), 9))
        comm = np.einsum("pij,sjk->psik", W, L) - np.einsum("sij,pjk->psik", L, W)
        if np.abs(comm).max() > 1e-10:
            raise ModelError("weight function does not commute with the mean-reversion matrix")
    nodes, qw = _swap_quadrature(w, T1, T2, n, panels)
    horizon = float(T1) if T1 > 0 else model.horizon

    def averaged(field):
        def func(t):
            vals = field(t[:, None], nodes[None, :])
            return np.einsum("pij,tpj...->ti...", qw, vals)
        return func

    k = model.k
    F0 = np.einsum("pij,pj->i", qw, model.initial(nodes))
    return SwapModel(float(T1), float(T2),
                     MatrixField(averaged(model.c), (n,), horizon, name="C", validate=False),
                     model.lam,
                     MatrixField(averaged(model.sigma), (n, k), horizon, name="Sigma", validate=False),
                     MatrixField(averaged(model.psi), (n, k), horizon, name="Psi", validate=False),
                     F0, model.driver)


def swap_from_forwards(curve, w: WeightFunction, T1, T2, panels=SWAP_PANELS, n=None):
    """Weighted average of a forward curve over ``[T1, T2]``.

    ``curve`` maps an array of maturities of shape ``(P,)`` to ``(P, ..., n)``.
    """
    if not T1 < T2:
        raise ArgumentError(f"delivery period needs T1 < T2, got ({T1}, {T2})")
    nodes, _ = simpson_nodes(T1, T2, panels)
    vals = np.asarray(curve(nodes), dtype=float)
    if n is None:
        n = vals.shape[-1] if vals.ndim > 1 else 1
    if vals.ndim == 1:
        vals = vals[:, None]
    _, qw = _swap_quadrature(w, T1, T2, n, panels)
    return np.einsum("pij,p...j->...i", qw, vals)


def swap_from_samples(values, T1, T2, w: WeightFunction, axis=-2):
    """Simpson average of forward samples on the uniform grid of ``[T1, T2]``.

    ``values`` holds ``P`` equally spaced maturities (odd ``P``) on ``axis``
    and commodities on the last axis.
    """
    vals = np.moveaxis(np.asarray(values, dtype=float), axis, -2)
    P, n = vals.shape[-2], vals.shape[-1]
    _, qw = _swap_quadrature(w, T1, T2, n, P - 1)
    return np.einsum("pij,...pj->...i", qw, vals)


# ---------------------------------------------------------------------------
# simulation


def _record_steps(steps, record):
    if record is None:
        return np.arange(steps + 1)
    return np.asarray(record, dtype=int)


def _check_maturities(model, maturities):
    T = np.atleast_1d(np.asarray(maturities, dtype=float))
    if np.any(T > model.horizon + 1e-12):
        raise ArgumentError(f"maturity beyond horizon {model.horizon}")
    return T


def euler_forward_step(model: ForwardModel, f, t, dt, dW, dJ, T):
    """One Euler step of the forward dynamics.

    ``f`` has shape ``(paths, M, n)`` for maturities ``T`` of shape ``(M,)``;
    ``dW`` and ``dJ`` have shape ``(paths, k)``.
    """
    T = np.atleast_1d(np.asarray(T, dtype=float))
    tt = np.full(T.shape, float(t))
    c = model.c(tt, T)
    sig = model.sigma(tt, T)
    psi = model.psi(tt, T)
    lam = model.lam(float(t))
    drift = c - f @ lam.T
    return (f + drift * dt + np.einsum("mnk,pk->pmn", sig, dW)
            + np.einsum("mnk,pk->pmn", psi, dJ))


def simulate_forward_euler(model: ForwardModel, path: DriverPath, maturities, record=None):
    """Euler paths of ``f(t, T)``; each maturity is frozen once ``t`` reaches it."""
    T = _check_maturities(model, maturities)
    grid = path.grid
    times, dt = grid.times, grid.dt
    f = np.broadcast_to(model.initial(T), (path.n_paths, T.size, model.n)).copy()
    keep = _record_steps(grid.steps, record)
    out = np.empty((keep.size, path.n_paths, T.size, model.n))
    slot = {int(s): i for i, s in enumerate(keep)}
    if 0 in slot:
        out[slot[0]] = f
    dJ = path.dJ
    for i in range(grid.steps):
        active = times[i + 1] <= T + 1e-12
        if np.any(active):
            nxt = euler_forward_step(model, f[:, active], times[i], dt, path.dW[i], dJ[i],
                                     T[active])
            f[:, active] = nxt
        if i + 1 in slot:
            out[slot[i + 1]] = f
    return out


def simulate_swap_euler(swap: SwapModel, path: DriverPath, record=None):
    """Euler paths of ``F(t, T1, T2)`` up to ``T1``; shape ``(time, paths, n)``."""
    grid = path.grid
    times, dt = grid.times, grid.dt
    F = np.broadcast_to(swap.F0, (path.n_paths, swap.n)).copy()
    keep = _record_steps(grid.steps, record)
    out = np.empty((keep.size, path.n_paths, swap.n))
    slot = {int(s): i for i, s in enumerate(keep)}
    if 0 in slot:
        out[slot[0]] = F
    dJ = path.dJ
    for i in range(grid.steps):
        t = times[i]
        if times[i + 1] <= swap.T1 + 1e-12:
            C = swap.C(t)
            lam = swap.lam(t)
            F = (F + (C - F @ lam.T) * dt + path.dW[i] @ swap.Sigma(t).T
                 + dJ[i] @ swap.Psi(t).T)
        if i + 1 in slot:
            out[slot[i + 1]] = F
    return out


def _decay(lam: MatrixField, s, t, panels=4):
    """``exp(-int_s^t lam)`` for arrays ``s <= t`` with a fixed small Simpson rule."""
    nodes, w = simpson_nodes(s, t, panels)
    integral = np.einsum("...p,...pij->...ij", w, lam(nodes))
    return mat_exp(-integral)


def explicit_forward_solution(model: ForwardModel, path: DriverPath, maturities, record=None):
    """Forward paths from the exact propagator, stepped recursively.

    Over each grid step the deterministic part (decay, drift convolution and
    jump compensator) is integrated by Simpson's rule, the Brownian integral
    uses the left point, and jumps enter at their exact times.
    """
    T = _check_maturities(model, maturities)
    grid = path.grid
    times, dt = grid.times, grid.dt
    n, M = model.n, T.size
    steps = grid.steps
    left, mid, right = times[:-1], times[:-1] + dt / 2.0, times[1:]
    P_left = _decay(model.lam, left, right)
    P_mid = _decay(model.lam, mid, right)
    comp_rate = model.driver.jump_mean

    f = np.broadcast_to(model.initial(T), (path.n_paths, M, n)).copy()
    keep = _record_steps(steps, record)
    out = np.empty((keep.size, path.n_paths, M, n))
    slot = {int(s): i for i, s in enumerate(keep)}
    if 0 in slot:
        out[slot[0]] = f

    jump_order = np.argsort(path.jump_step, kind="stable")
    jump_bounds = np.searchsorted(path.jump_step[jump_order], np.arange(steps + 1))
    has_jumps = path.jump_size.size > 0
    if has_jumps:
        P_jump = _decay(model.lam, path.jump_time, times[path.jump_step + 1])

    for i in range(steps):
        active = right[i] <= T + 1e-12
        if np.any(active):
            Ta = T[active]
            ones = np.ones(Ta.size)
            tl, tm, tr = left[i] * ones, mid[i] * ones, right[i] * ones
            drift_l, drift_m, drift_r = model.c(tl, Ta), model.c(tm, Ta), model.c(tr, Ta)
            sig_l = model.sigma(tl, Ta)
            drift = (dt / 6.0) * (drift_l @ P_left[i].T + 4.0 * drift_m @ P_mid[i].T + drift_r)
            if model.driver.has_jumps:
                comp = [np.einsum("mnk,k->mn", model.psi(s, Ta), comp_rate) for s in (tl, tm, tr)]
                drift -= (dt / 6.0) * (comp[0] @ P_left[i].T + 4.0 * comp[1] @ P_mid[i].T + comp[2])
            fa = f[:, active] @ P_left[i].T + drift
            fa += np.einsum("ij,mjk,pk->pmi", P_left[i], sig_l, path.dW[i])
            if has_jumps:
                sel = jump_order[jump_bounds[i]:jump_bounds[i + 1]]
                if sel.size:
                    tau = path.jump_time[sel]
                    shape = (sel.size, Ta.size)
                    psi_tau = model.psi(np.broadcast_to(tau[:, None], shape), np.broadcast_to(Ta, shape))
                    col = psi_tau[np.arange(sel.size), :, :, path.jump_comp[sel]]
                    contrib = np.einsum("qij,qmj->qmi", P_jump[sel], col) * path.jump_size[sel, None, None]
                    np.add.at(fa, path.jump_path[sel], contrib)
            f[:, active] = fa
        if i + 1 in slot:
            out[slot[i + 1]] = f
    return out


@dataclass
class SpotPath:
    S: np.ndarray      # (time, paths, n)
    zeta: np.ndarray   # (time, paths, n)


def spot_path(model: ForwardModel, path: DriverPath, fd_step=DERIV_STEP_T) -> SpotPath:
    """Euler path of the spot price ``S(t) = f(t, t)``.

    The spot drift needs ``zeta(t)``, the maturity slope of the forward curve
    at ``T = t``.  It is accumulated along the path by evolving the slope
    ``g(u, T_j) = d f(u, T_j) / dT`` for every grid maturity ``T_j`` and
    reading ``g`` on the diagonal.  Missing closed-form maturity derivatives
    fall back to central differences with step ``fd_step``; ``fd_step=None``
    makes them an error.
    """
    for name in ("c", "sigma", "psi"):
        if not getattr(model, name).has_dT() and fd_step is None:
            raise UnsupportedError(f"{name} has no maturity derivative")
    if model.f0_T is None and fd_step is None:
        raise UnsupportedError("initial curve has no maturity derivative")
    h = DERIV_STEP_T if fd_step is None else fd_step
    grid = path.grid
    times, dt = grid.times, grid.dt
    if times[-1] > model.horizon + 1e-12:
        raise ArgumentError("path extends beyond model horizon")
    N, n = path.n_paths, model.n
    Tj = times
    g = np.broadcast_to(model.initial_slope(Tj, h), (N, Tj.size, n)).copy()
    S = np.empty((grid.steps + 1, N, n))
    zeta = np.empty_like(S)
    S[0] = model.initial(np.array([times[0]]))[0]
    zeta[0] = g[:, 0]
    dJ = path.dJ
    for i in range(grid.steps):
        t = times[i]
        live = slice(i, None)
        Ta = Tj[live]
        tt = np.full(Ta.size, t)
        lam = model.lam(t)
        cT = model.c.dT(tt, Ta, h)
        sT = model.sigma.dT(tt, Ta, h)
        pT = model.psi.dT(tt, Ta, h)
        g[:, live] = (g[:, live] + (cT - g[:, live] @ lam.T) * dt
                      + np.einsum("mnk,pk->pmn", sT, path.dW[i])
                      + np.einsum("mnk,pk->pmn", pT, dJ[i]))
        diag = np.array([t])
        c_tt = model.c(diag, diag)[0]
        s_tt = model.sigma(diag, diag)[0]
        p_tt = model.psi(diag, diag)[0]
        S[i + 1] = (S[i] + (c_tt + zeta[i] - S[i] @ lam.T) * dt + path.dW[i] @ s_tt.T
                    + dJ[i] @ p_tt.T)
        zeta[i + 1] = g[:, i + 1]
    return SpotPath(S, zeta)


# ---------------------------------------------------------------------------
# CSV


FORWARD_HEADER = ("t", "T", "commodity", "value")
SWAP_HEADER = ("t", "T1", "T2", "commodity", "value")


def fmt(x):
    return format(float(x), ".17g")


def write_csv(target, header, rows: Iterable):
    """Write rows with floats at 17 significant digits; ``target`` is a path or file."""
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    fh = open(target, "w", newline="") if own else target
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])
    finally:
        if own:
            fh.close()


def write_forward_csv(target, rows):
    write_csv(target, FORWARD_HEADER, rows)


def write_swap_csv(target, rows):
    write_csv(target, SWAP_HEADER, rows)


def read_csv(source):
    """Read an output CSV back into (header, rows); numeric fields are parsed, text kept."""
    fh = io.StringIO(source) if isinstance(source, str) and "\n" in source else open(source, newline="")
    with fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        rows = []
        for row in reader:
            rows.append(tuple(_field(h, x) for h, x in zip(header, row)))
    return header, rows


def _field(name, text):
    if name in ("commodity", "path", "n"):
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text

