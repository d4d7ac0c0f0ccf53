"""Affine state representation of the forward curve.

The curve is driven by a finite-dimensional state,

    f(t,T) = alpha(t,T) X(t) + beta(t,T),
    dX = (theta + Theta X) dt + v dW + z dJ,

and this module maps state coefficients to curve coefficients and back.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .curve import ForwardModel, SWAP_PANELS, WeightFunction, _swap_quadrature
from .drivers import DriverPath, LevyDriver
from .errors import ArgumentError, DimensionError, IncompatibilityError, ModelError
from .matfield import CurveField, MatrixField, check_cp, mat_exp, simpson_nodes

DERIV_STEP_t = 1e-5


@dataclass
class AffineSpec:
    """Loadings ``alpha (n, m)`` and ``beta (n,)`` plus the state dynamics.

    ``theta (m,)``, ``Theta (m, m)``, ``v (m, k)`` and ``z (m, k)`` are
    fields of time.  ``alpha``/``beta`` carry optional closed-form time
    derivatives (``CurveField.d_dt``); otherwise central differences are used.
    """

    alpha: CurveField
    beta: CurveField
    theta: MatrixField
    Theta: MatrixField
    v: MatrixField
    z: MatrixField
    x0: np.ndarray
    driver: LevyDriver
    horizon: float

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        n, m = self.alpha.dims
        k = self.driver.k
        if self.beta.dims != (n,):
            raise DimensionError(f"beta must be an {n}-vector field")
        if self.theta.dims != (m,) or self.Theta.dims != (m, m):
            raise DimensionError(f"state drift must have dims ({m},) and ({m}, {m})")
        if self.v.dims != (m, k) or self.z.dims != (m, k):
            raise DimensionError(f"state loadings must have dims ({m}, {k})")
        if self.x0.shape != (m,):
            raise DimensionError(f"x0 must have shape ({m},)")

    @property
    def n(self):
        return self.alpha.dims[0]

    @property
    def m(self):
        return self.alpha.dims[1]

    @property
    def k(self):
        return self.driver.k

    def alpha_t(self, t, T):
        return self.alpha.dt(t, T, DERIV_STEP_t)

    def beta_t(self, t, T):
        return self.beta.dt(t, T, DERIV_STEP_t)

    def sample_points(self, t_points=33, T_points=33):
        """Sampled ``(t, T)`` pairs with ``t <= T`` covering the domain."""
        t = np.linspace(0.0, self.horizon, t_points)
        T = np.linspace(0.0, self.horizon, T_points)
        tt, TT = np.meshgrid(t, T, indexing="ij")
        keep = tt <= TT
        return tt[keep], TT[keep]

    def sup_norms(self):
        t, T = self.sample_points()
        return float(np.abs(self.alpha(t, T)).max()), float(np.abs(self.beta(t, T)).max())

    def under(self, theta, Theta, driver=None):
        """Same loadings with different state drift (e.g. the risk-neutral one)."""
        return dataclasses.replace(self, theta=theta, Theta=Theta,
                                   driver=self.driver if driver is None else driver)


@dataclass
class GammaPair:
    """Risk-neutral state drift ``gamma0 + gamma1 X``."""

    gamma0: MatrixField
    gamma1: MatrixField


# ---------------------------------------------------------------------------
# state simulation


def _euler_state(spec, path, keep):
    grid = path.grid
    times, dt = grid.times, grid.dt
    X = np.broadcast_to(spec.x0, (path.n_paths, spec.m)).copy()
    out = np.empty((keep.size, path.n_paths, spec.m))
    slot = {int(s): i for i, s in enumerate(keep)}
    if 0 in slot:
        out[slot[0]] = X
    th = spec.theta(times[:-1])
    Th = spec.Theta(times[:-1])
    v = spec.v(times[:-1])
    z = spec.z(times[:-1])
    jumps = path.driver.has_jumps
    dJ = path.dJ if jumps else None
    for i in range(grid.steps):
        X = X + (th[i] + X @ Th[i].T) * dt + path.dW[i] @ v[i].T
        if jumps:
            X += dJ[i] @ z[i].T
        if i + 1 in slot:
            out[slot[i + 1]] = X
    return out


def _exact_state(spec, path, keep):
    """Exact transition of the linear drift, left-point noise loadings."""
    if not check_cp(spec.Theta, np.linspace(0.0, spec.horizon, 17)):
        raise ModelError("exact state update needs a state drift matrix with the commutative property")
    grid = path.grid
    times, dt = grid.times, grid.dt
    left, mid, right = times[:-1], times[:-1] + dt / 2.0, times[1:]

    def flow(s, t):
        nodes, w = simpson_nodes(s, t, 4)
        return mat_exp(np.einsum("sp,spij->sij", w, spec.Theta(nodes)))

    P_left, P_mid = flow(left, right), flow(mid, right)
    th_l, th_m, th_r = spec.theta(left), spec.theta(mid), spec.theta(right)
    shift = (dt / 6.0) * (np.einsum("sij,sj->si", P_left, th_l)
                          + 4.0 * np.einsum("sij,sj->si", P_mid, th_m) + th_r)
    v = spec.v(left)
    z = spec.z(left)
    jumps = path.driver.has_jumps
    dJ = path.dJ if jumps else None
    X = np.broadcast_to(spec.x0, (path.n_paths, spec.m)).copy()
    out = np.empty((keep.size, path.n_paths, spec.m))
    slot = {int(s): i for i, s in enumerate(keep)}
    if 0 in slot:
        out[slot[0]] = X
    for i in range(grid.steps):
        noise = path.dW[i] @ v[i].T
        if jumps:
            noise += dJ[i] @ z[i].T
        X = (X + noise) @ P_left[i].T + shift[i]
        if i + 1 in slot:
            out[slot[i + 1]] = X
    return out


def simulate_state(spec: AffineSpec, path: DriverPath, scheme="euler", record=None):
    """State trajectories, shape ``(recorded steps, paths, m)``.

    ``scheme="exact"`` uses the propagator of ``Theta`` over each step.
    """
    if path.grid.stop > spec.horizon + 1e-12:
        raise ModelError("path grid extends beyond the spec horizon")
    keep = np.arange(path.grid.steps + 1) if record is None else np.asarray(record, dtype=int)
    if scheme == "euler":
        return _euler_state(spec, path, keep)
    if scheme in ("exact", "exact-ou"):
        return _exact_state(spec, path, keep)
    raise ArgumentError(f"unknown scheme {scheme!r}")


def curve_from_state(spec: AffineSpec, times, X, T):
    """Map states ``X (S, paths, m)`` at ``times (S,)`` to ``f (S, paths, M, n)``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    T = np.atleast_1d(np.asarray(T, dtype=float))
    tt, TT = np.meshgrid(times, T, indexing="ij")
    a = spec.alpha(tt, TT)
    b = spec.beta(tt, TT)
    return np.einsum("smij,spj->spmi", a, X) + b[:, None]


def swap_loadings(spec: AffineSpec, t, w: WeightFunction, T1, T2, panels=SWAP_PANELS):
    """Averaged loadings so that ``F(t, T1, T2) = A(t) X(t) + B(t)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    nodes, qw = _swap_quadrature(w, T1, T2, spec.n, panels)
    tt, TT = np.meshgrid(t, nodes, indexing="ij")
    A = np.einsum("pij,spjk->sik", qw, spec.alpha(tt, TT))
    B = np.einsum("pij,spj->si", qw, spec.beta(tt, TT))
    return A, B


# ---------------------------------------------------------------------------
# state coefficients <-> curve coefficients


def compatibility_residual(spec: AffineSpec, lam: MatrixField, t, T):
    """``lam alpha + alpha_t + alpha Theta`` at the sampled points."""
    a = spec.alpha(t, T)
    return (np.einsum("sij,sjk->sik", lam(t), a) + spec.alpha_t(t, T)
            + np.einsum("sij,sjk->sik", a, spec.Theta(t)))


def coefficients_from_affine(spec: AffineSpec, lam: MatrixField, tol=1e-8, f0=None) -> ForwardModel:
    """Curve coefficients implied by an affine spec and a mean-reversion field.

    ``c = lam beta + beta_t + alpha theta``, ``sigma = alpha v``,
    ``psi = alpha z``.  Raises :class:`IncompatibilityError` if the loadings
    are not compatible with ``lam``.
    """
    if lam.dims != (spec.n, spec.n):
        raise DimensionError(f"lam must be ({spec.n}, {spec.n})")
    t, T = spec.sample_points()
    R = compatibility_residual(spec, lam, t, T)
    err = np.abs(R).reshape(R.shape[0], -1).max(axis=1)
    worst = int(np.argmax(err))
    scale = max(1.0, float(np.abs(spec.alpha(t, T)).max()))
    if err[worst] > tol * scale:
        raise IncompatibilityError(
            f"loadings incompatible with mean reversion: max residual {err[worst]:.3e} "
            f"at (t, T) = ({t[worst]:.6g}, {T[worst]:.6g})",
            max_residual=float(err[worst]), location=(float(t[worst]), float(T[worst])))

    def c(t, T):
        return (np.einsum("sij,sj->si", lam(t), spec.beta(t, T)) + spec.beta_t(t, T)
                + np.einsum("sij,sj->si", spec.alpha(t, T), spec.theta(t)))

    def loading(field):
        return lambda t, T: np.einsum("sij,sjk->sik", spec.alpha(t, T), field(t))

    def loading_T(field):
        return lambda t, T: np.einsum("sij,sjk->sik", spec.alpha.dT(t, T), field(t))

    def c_T(t, T):
        return (np.einsum("sij,sj->si", lam(t), spec.beta.dT(t, T)) + _beta_tT(spec, t, T)
                + np.einsum("sij,sj->si", spec.alpha.dT(t, T), spec.theta(t)))

    f0_T = None
    if f0 is None:
        def f0(T):
            T = np.asarray(T, dtype=float)
            zero = np.zeros_like(T)
            return np.einsum("...ij,j->...i", spec.alpha(zero, T), spec.x0) + spec.beta(zero, T)

        def f0_T(T):
            T = np.asarray(T, dtype=float)
            zero = np.zeros_like(T)
            return (np.einsum("...ij,j->...i", spec.alpha.dT(zero, T), spec.x0)
                    + spec.beta.dT(zero, T))

    k = spec.k
    return ForwardModel(
        CurveField(c, (spec.n,), d_dT=c_T, name="c"),
        lam,
        CurveField(loading(spec.v), (spec.n, k), d_dT=loading_T(spec.v), name="sigma"),
        CurveField(loading(spec.z), (spec.n, k), d_dT=loading_T(spec.z), name="psi"),
        f0, spec.driver, spec.horizon, f0_T=f0_T)


def _beta_tT(spec, t, T, h=1e-4):
    """Mixed derivative of beta in (t, T) by central differences in T."""
    return (spec.beta_t(t, T + h) - spec.beta_t(t, T - h)) / (2.0 * h)


@dataclass
class ImpliedCoefficients:
    """Curve-side drift pieces and least-squares state factorisations.

    ``theta_tilde (S, n)`` and ``Theta_tilde (S, n, m)`` are evaluated at the
    sample points ``(t, T)``; the fitted ``theta``, ``Theta``, ``v``, ``z``
    are per sampled ``t`` with the worst residual of each fit.
    """

    t: np.ndarray
    T: np.ndarray
    theta_tilde: np.ndarray
    Theta_tilde: np.ndarray
    fit_times: np.ndarray
    theta: np.ndarray
    Theta: np.ndarray
    v: np.ndarray
    z: np.ndarray
    residuals: dict


def affine_from_coefficients(model: ForwardModel, alpha: CurveField, beta: CurveField,
                             t_points=17, T_points=33) -> ImpliedCoefficients:
    """Recover state-drift pieces from curve coefficients and given loadings."""
    horizon = model.horizon
    ts = np.linspace(0.0, horizon, t_points)
    Ts = np.linspace(0.0, horizon, T_points)
    lam = model.lam
    n, m = alpha.dims
    rows_t, rows_T, th_tilde, Th_tilde = [], [], [], []
    fits = {name: [] for name in ("theta", "Theta", "v", "z")}
    res = {name: 0.0 for name in fits}
    for t in ts:
        T = Ts[Ts >= t]
        if T.size == 0:
            continue
        tt = np.full(T.size, t)
        a = alpha(tt, T)
        tht = model.c(tt, T) - np.einsum("ij,sj->si", lam(t), beta(tt, T)) - beta.dt(tt, T, DERIV_STEP_t)
        Tht = -np.einsum("ij,sjk->sik", lam(t), a) - alpha.dt(tt, T, DERIV_STEP_t)
        rows_t.append(tt)
        rows_T.append(T)
        th_tilde.append(tht)
        Th_tilde.append(Tht)
        A = a.reshape(-1, m)
        targets = {
            "theta": tht.reshape(-1, 1),
            "Theta": Tht.reshape(-1, m),
            "v": model.sigma(tt, T).reshape(-1, model.k),
            "z": model.psi(tt, T).reshape(-1, model.k),
        }
        for name, rhs in targets.items():
            sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
            fits[name].append(sol[:, 0] if name == "theta" else sol)
            res[name] = max(res[name], float(np.abs(A @ sol - rhs).max()))
    return ImpliedCoefficients(
        np.concatenate(rows_t), np.concatenate(rows_T), np.concatenate(th_tilde),
        np.concatenate(Th_tilde), ts[: len(fits["theta"])],
        *(np.array(fits[name]) for name in ("theta", "Theta", "v", "z")), residuals=res)


# ---------------------------------------------------------------------------
# loading ODEs


@dataclass
class AlphaBetaSolution:
    """Backward RK4 solutions of the loading ODEs, one per maturity."""

    maturities: np.ndarray
    t_nodes: list
    alpha: list
    beta: list

    def at(self, T):
        i = int(np.argmin(np.abs(self.maturities - T)))
        if abs(self.maturities[i] - T) > 1e-12:
            raise ArgumentError(f"maturity {T} was not solved for")
        return self.t_nodes[i], self.alpha[i], self.beta[i]


def solve_alpha_beta(gamma: GammaPair, alpha_T, beta_T, maturities, dt_ode=1e-3) -> AlphaBetaSolution:
    """Integrate ``alpha_t = -alpha gamma1`` and ``beta_t = -alpha gamma0``
    backward from the terminal values ``alpha(T,T) = alpha_T(T)``,
    ``beta(T,T) = beta_T(T)``."""
    g0, g1 = gamma.gamma0, gamma.gamma1
    out_t, out_a, out_b = [], [], []
    for T in np.atleast_1d(np.asarray(maturities, dtype=float)):
        steps = max(1, int(np.ceil(T / dt_ode - 1e-9)))
        h = T / steps if T > 0 else 0.0
        a = np.asarray(alpha_T(T), dtype=float).copy()
        b = np.asarray(beta_T(T), dtype=float).copy()
        nodes = np.linspace(0.0, T, steps + 1)
        A = np.empty((steps + 1,) + a.shape)
        B = np.empty((steps + 1,) + b.shape)
        A[-1], B[-1] = a, b
        if T > 0:
            # in reversed time s = T - t: a' = a g1(T-s), b' = a g0(T-s)
            ts = nodes[::-1]
            mids = ts[:-1] - h / 2.0
            G1, G1m, G1e = g1(ts[:-1]), g1(mids), g1(ts[1:])
            G0, G0m, G0e = g0(ts[:-1]), g0(mids), g0(ts[1:])
            for j in range(steps):
                ka1, kb1 = a @ G1[j], a @ G0[j]
                a2 = a + 0.5 * h * ka1
                ka2, kb2 = a2 @ G1m[j], a2 @ G0m[j]
                a3 = a + 0.5 * h * ka2
                ka3, kb3 = a3 @ G1m[j], a3 @ G0m[j]
                a4 = a + h * ka3
                ka4, kb4 = a4 @ G1e[j], a4 @ G0e[j]
                a = a + (h / 6.0) * (ka1 + 2 * ka2 + 2 * ka3 + ka4)
                b = b + (h / 6.0) * (kb1 + 2 * kb2 + 2 * kb3 + kb4)
                A[steps - 1 - j], B[steps - 1 - j] = a, b
        out_t.append(nodes)
        out_a.append(A)
        out_b.append(B)
    return AlphaBetaSolution(np.atleast_1d(np.asarray(maturities, dtype=float)), out_t, out_a, out_b)


def gamma_residual(spec: AffineSpec, gamma: GammaPair):
    """Largest violation of the loading ODEs for the given risk-neutral drift."""
    t, T = spec.sample_points()
    a = spec.alpha(t, T)
    r1 = spec.alpha_t(t, T) + np.einsum("sij,sjk->sik", a, gamma.gamma1(t))
    r0 = spec.beta_t(t, T) + np.einsum("sij,sj->si", a, gamma.gamma0(t))
    return float(max(np.abs(r1).max(), np.abs(r0).max()))
