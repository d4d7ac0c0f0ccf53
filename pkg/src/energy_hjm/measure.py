"""Density processes for Girsanov/Esscher measure changes and their checks.

The density solves ``dZ = Z(t-) dH`` with

    H = int phi' dW + int xi' y (N - dt nu)(ds, dy),    phi = phi1 X + phi0,

so under the new measure ``W^Q = W - int phi dt`` and the jump measure is
tilted by ``1 + xi' y``.  ``xi`` is deterministic and has no state loading.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .affine import AffineSpec, GammaPair, gamma_residual, simulate_state, swap_loadings
from .curve import WeightFunction
from .drivers import DriverPath, LevyDriver, TimeGrid, sample_driver_path
from .errors import ArgumentError, ConfigurationError, PositivityError, UnsupportedError
from .matfield import CurveField, MatrixField, propagate, simpson, simpson_nodes
from .stats import EnsembleStats, map_blocks


@dataclass
class GirsanovKernel:
    """Market prices of risk: ``phi0 (k,)``, ``phi1 (k, m)`` and Esscher ``xi (k,)``."""

    phi0: MatrixField
    phi1: MatrixField
    xi: MatrixField

    @classmethod
    def zero(cls, k, m, horizon):
        return cls(MatrixField.constant(np.zeros(k), horizon),
                   MatrixField.constant(np.zeros((k, m)), horizon),
                   MatrixField.constant(np.zeros(k), horizon))

    @property
    def k(self):
        return self.phi0.dims[0]

    def validate(self, driver: LevyDriver, horizon, points=65):
        """Check boundedness and ``1 + xi' y > 0`` on the jump support."""
        grid = np.linspace(0.0, horizon, points)
        if not np.all(np.isfinite(self.phi1(grid))):
            raise ConfigurationError("phi1 is not bounded on the horizon")
        xi = self.xi(grid)
        for j in range(driver.k):
            if driver.intensities[j] > 0:
                for x in (xi[:, j].min(), xi[:, j].max()):
                    driver.check_tilt(np.where(np.arange(driver.k) == j, x, 0.0))
        return self

    def is_constant_xi(self, horizon, points=33):
        xi = self.xi(np.linspace(0.0, horizon, points))
        return bool(np.all(np.abs(xi - xi[0]) <= 1e-14))

    def gamma(self, spec: AffineSpec) -> GammaPair:
        """Risk-neutral state drift ``(theta + v phi0 + z K xi, Theta + v phi1)``."""
        K = spec.driver.kappa

        def g0(t):
            return (spec.theta(t) + np.einsum("sij,sj->si", spec.v(t), self.phi0(t))
                    + np.einsum("sij,sj->si", spec.z(t), K * self.xi(t)))

        def g1(t):
            return spec.Theta(t) + np.einsum("sij,sjk->sik", spec.v(t), self.phi1(t))

        h = spec.horizon
        return GammaPair(MatrixField(g0, (spec.m,), h, name="gamma0", validate=False),
                         MatrixField(g1, (spec.m, spec.m), h, name="gamma1", validate=False))


@dataclass
class DensityPath:
    """Density trajectories ``Z (steps+1, paths)`` and their log pieces."""

    times: np.ndarray
    Z: np.ndarray
    log_continuous: np.ndarray
    log_jumps: np.ndarray
    states: np.ndarray


def _xi_integral(kernel, left, right):
    nodes, w = simpson_nodes(left, right, 2)
    return np.einsum("sp,spk->sk", w, kernel.xi(nodes))


def density_path(kernel: GirsanovKernel, spec: AffineSpec, path: DriverPath, states=None,
                 scheme="euler") -> DensityPath:
    """Simulate the state and the density on a shared driver path.

    The continuous exponent uses left-point ``phi``; each jump multiplies by
    ``1 + xi_j(tau) y`` and the compensator ``rho_j E[y_j] int xi_j`` is
    subtracted in closed form.
    """
    grid = path.grid
    times, dt = grid.times, grid.dt
    X = simulate_state(spec, path, scheme) if states is None else states
    phi1 = kernel.phi1(times[:-1])
    phi0 = kernel.phi0(times[:-1])
    N = path.n_paths
    logc = np.zeros((grid.steps + 1, N))
    for i in range(grid.steps):
        phi = X[i] @ phi1[i].T + phi0[i]
        logc[i + 1] = logc[i] + np.einsum("pk,pk->p", phi, path.dW[i]) - 0.5 * dt * np.einsum(
            "pk,pk->p", phi, phi)
    logj = np.zeros((grid.steps + 1, N))
    if path.driver.has_jumps:
        rate = path.driver.jump_mean
        comp = _xi_integral(kernel, times[:-1], times[1:]) @ rate
        step_log = np.zeros((grid.steps, N))
        if path.jump_size.size:
            xi_tau = kernel.xi(path.jump_time)[np.arange(path.jump_size.size), path.jump_comp]
            factor = 1.0 + xi_tau * path.jump_size
            if np.any(factor <= 0):
                bad = int(np.argmin(factor))
                raise PositivityError(
                    f"jump of size {path.jump_size[bad]} at t={path.jump_time[bad]:.6g} gives "
                    f"1 + xi*y = {factor[bad]:.6g} <= 0")
            np.add.at(step_log, (path.jump_step, path.jump_path), np.log(factor))
        step_log -= comp[:, None]
        logj[1:] = np.cumsum(step_log, axis=0)
    Z = np.exp(logc + logj)
    return DensityPath(times, Z, logc, logj, X)


# ---------------------------------------------------------------------------
# Monte Carlo gates


@dataclass
class MartingaleReport:
    mean: float
    se: float
    passed: bool
    min_z: float
    n_paths: int
    seed: int
    t_star: float
    fourth_moment_finite: bool

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"E[Z({self.t_star:g})] = {self.mean:.6f} +/- {self.se:.6f} (N={self.n_paths}, "
                f"seed={self.seed}) min Z = {self.min_z:.3e} {status}")


def verify_martingale(kernel: GirsanovKernel, spec: AffineSpec, driver: LevyDriver | None = None,
                      n_paths=100_000, t_star=1.0, *, dt=1 / 365, seed=0, workers=None,
                      scheme="euler") -> MartingaleReport:
    """Estimate ``E[Z(t_star)]`` and gate it against 1 at three standard errors."""
    driver = spec.driver if driver is None else driver
    if n_paths < 1000:
        raise ArgumentError("the martingale gate needs at least 1000 paths")
    kernel.validate(driver, t_star)
    grid = TimeGrid.from_step(t_star, dt)

    def block(start, count):
        path = sample_driver_path(driver, grid, seed, start=start, count=count)
        Z = density_path(kernel, spec, path, scheme=scheme).Z
        stats = EnsembleStats.from_samples({("Z", f"t={t_star:g}"): Z[-1]})
        stats.record_min(("Zmin", "all"), float(Z.min()))
        return stats

    stats = map_blocks(n_paths, block, workers)
    key = ("Z", f"t={t_star:g}")
    mean, se = stats.mean(key), stats.se(key)
    fourth = bool(np.all(np.isfinite(driver.m4)))
    min_z = stats.min(("Zmin", "all"))
    return MartingaleReport(mean, se, abs(mean - 1.0) <= 3.0 * se and min_z > 0, min_z,
                            n_paths, seed, t_star, fourth)


@dataclass
class CheckRow:
    quantity: str
    contract: str
    route: str
    mean: float
    se: float
    target: float
    passed: bool


@dataclass
class QCheckReport:
    rows: list = field(default_factory=list)
    gamma_residual: float = 0.0

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def route(self, name):
        return [r for r in self.rows if r.route == name]


def risk_neutral_spec(kernel: GirsanovKernel, spec: AffineSpec) -> AffineSpec:
    """State dynamics under the new measure, with tilted jump intensities and laws."""
    horizon = spec.horizon
    if spec.driver.has_jumps and not kernel.is_constant_xi(horizon):
        raise UnsupportedError("direct simulation under the new measure needs a constant xi")
    xi0 = kernel.xi(0.0)
    q_driver = spec.driver.tilted(xi0)
    gamma = kernel.gamma(spec)
    # increments of the tilted, self-compensated jump path are the jumps
    # compensated under the new measure, so the drift is gamma0 + gamma1 X
    return spec.under(gamma.gamma0, gamma.gamma1, q_driver)


def q_dynamics_check(kernel: GirsanovKernel, spec: AffineSpec, w: WeightFunction, maturities,
                     deliveries, n_paths=100_000, t=1.0, *, dt=1 / 365, seed=0, workers=None,
                     tol=1e-8) -> QCheckReport:
    """Check that forwards and swaps are martingales under the new measure.

    Route ``reweighted`` estimates ``E[Z(t) f(t,T)]`` with paths simulated
    under the original measure; route ``direct`` simulates the state with its
    risk-neutral drift and tilted jumps.  Both are compared with the time-0
    prices, and with each other.
    """
    gamma = kernel.gamma(spec)
    res = gamma_residual(spec, gamma)
    if res > tol * max(1.0, spec.sup_norms()[0]):
        raise ConfigurationError(
            f"loadings do not solve the loading ODEs for this kernel (residual {res:.3e})")
    kernel.validate(spec.driver, spec.horizon)
    maturities = [float(T) for T in maturities]
    deliveries = [(float(a), float(b)) for a, b in deliveries]
    grid = TimeGrid.from_step(t, dt)
    tt = np.array([t])
    alpha_t = np.stack([spec.alpha(tt, np.array([T]))[0] for T in maturities])
    beta_t = np.stack([spec.beta(tt, np.array([T]))[0] for T in maturities])
    alpha_0 = np.stack([spec.alpha(np.zeros(1), np.array([T]))[0] for T in maturities])
    beta_0 = np.stack([spec.beta(np.zeros(1), np.array([T]))[0] for T in maturities])
    swaps_t = [swap_loadings(spec, t, w, a, b) for a, b in deliveries]
    swaps_0 = [swap_loadings(spec, 0.0, w, a, b) for a, b in deliveries]
    targets = {}
    for j, T in enumerate(maturities):
        f0 = alpha_0[j] @ spec.x0 + beta_0[j]
        for i in range(spec.n):
            targets[("f", f"T={T:g};c={i}")] = float(f0[i])
    for (a, b), (A, B) in zip(deliveries, swaps_0):
        F0 = A[0] @ spec.x0 + B[0]
        for i in range(spec.n):
            targets[("F", f"T1={a:g};T2={b:g};c={i}")] = float(F0[i])

    def prices(X):
        out = {}
        f = np.einsum("mij,pj->pmi", alpha_t, X) + beta_t
        for j, T in enumerate(maturities):
            for i in range(spec.n):
                out[("f", f"T={T:g};c={i}")] = f[:, j, i]
        for (a, b), (A, B) in zip(deliveries, swaps_t):
            F = X @ A[0].T + B[0]
            for i in range(spec.n):
                out[("F", f"T1={a:g};T2={b:g};c={i}")] = F[:, i]
        return out

    def reweighted(start, count):
        path = sample_driver_path(spec.driver, grid, seed, start=start, count=count)
        dens = density_path(kernel, spec, path)
        Z = dens.Z[-1]
        return EnsembleStats.from_samples({key: Z * val for key, val in prices(dens.states[-1]).items()})

    q_spec = risk_neutral_spec(kernel, spec)

    def direct(start, count):
        path = sample_driver_path(q_spec.driver, grid, seed + 1, start=start, count=count)
        X = simulate_state(q_spec, path, record=[grid.steps])[0]
        return EnsembleStats.from_samples(prices(X))

    report = QCheckReport(gamma_residual=res)
    results = {"reweighted": map_blocks(n_paths, reweighted, workers),
               "direct": map_blocks(n_paths, direct, workers)}
    for key, target in targets.items():
        for route, stats in results.items():
            m, s = stats.mean(key), stats.se(key)
            report.rows.append(CheckRow(key[0], key[1], route, m, s, target,
                                        abs(m - target) <= 3.0 * s))
        m1, s1 = results["reweighted"].mean(key), results["reweighted"].se(key)
        m2, s2 = results["direct"].mean(key), results["direct"].se(key)
        comb = math.hypot(s1, s2)
        report.rows.append(CheckRow(key[0], key[1], "agreement", m1 - m2, comb, 0.0,
                                    abs(m1 - m2) <= 3.0 * comb))
    return report


# ---------------------------------------------------------------------------
# drift elimination


@dataclass
class PhiPair:
    """Curve drift pieces to be removed: ``Phi1 (n, m)`` and ``Phi0 (n,)``."""

    Phi0: CurveField
    Phi1: CurveField


def phi_pair(spec: AffineSpec) -> PhiPair:
    """``Phi1 = -alpha_t - alpha Theta`` and ``Phi0 = -beta_t - alpha theta``."""

    def Phi1(t, T):
        return -spec.alpha_t(t, T) - np.einsum("sij,sjk->sik", spec.alpha(t, T), spec.Theta(t))

    def Phi0(t, T):
        return -spec.beta_t(t, T) - np.einsum("sij,sj->si", spec.alpha(t, T), spec.theta(t))

    return PhiPair(CurveField(Phi0, (spec.n,), name="Phi0"),
                   CurveField(Phi1, (spec.n, spec.m), name="Phi1"))


@dataclass
class KernelSolution:
    times: np.ndarray
    phi1: np.ndarray   # (S, k, m)
    phi0: np.ndarray   # (S, k)
    xi0: np.ndarray    # (S, k)
    residual1: float
    residual0: float
    rank: int


def kernel_solve(phi: PhiPair, alpha: CurveField, v: MatrixField, z: MatrixField, K,
                 times, maturities, jumps=True) -> KernelSolution:
    """Minimal-norm kernels with ``alpha v phi1 = Phi1`` and
    ``alpha (v phi0 + z K xi0) = Phi0`` at the sampled maturities ``T >= t``."""
    K = np.diag(np.asarray(K, dtype=float)) if np.ndim(K) == 1 else np.asarray(K, dtype=float)
    maturities = np.asarray(maturities, dtype=float)
    out1, out0, outx = [], [], []
    r1 = r0 = 0.0
    min_rank = None
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        T = maturities[maturities >= t]
        tt = np.full(T.size, t)
        a = alpha(tt, T)
        av = np.einsum("sij,jk->sik", a, v(t)).reshape(-1, v.dims[1])
        k = v.dims[1]
        rank = np.linalg.matrix_rank(av)
        min_rank = rank if min_rank is None else min(min_rank, rank)
        rhs1 = phi.Phi1(tt, T).reshape(av.shape[0], -1)
        p1 = np.linalg.lstsq(av, rhs1, rcond=None)[0]
        rhs0 = phi.Phi0(tt, T).reshape(-1)
        if jumps:
            azk = np.einsum("sij,jk,kl->sil", a, z(t), K).reshape(-1, k)
            B = np.hstack([av, azk])
        else:
            B = av
        sol = np.linalg.lstsq(B, rhs0, rcond=None)[0]
        p0, x0 = sol[:k], (sol[k:] if jumps else np.zeros(k))
        r1 = max(r1, float(np.abs(av @ p1 - rhs1).max()))
        r0 = max(r0, float(np.abs(B @ sol - rhs0).max()))
        out1.append(p1)
        out0.append(p0)
        outx.append(x0)
    if min_rank is not None and min_rank < v.dims[1]:
        warnings.warn("loadings are rank deficient; the kernel is not unique and the "
                      "minimal-norm solution is returned", RuntimeWarning, stacklevel=2)
    return KernelSolution(np.atleast_1d(np.asarray(times, dtype=float)), np.array(out1),
                          np.array(out0), np.array(outx), r1, r0, int(min_rank or 0))


# ---------------------------------------------------------------------------
# segment partition for the weak Novikov argument


def novikov_partition(c2, c3, c4, horizon):
    """Uniform knots of step ``0.5 / (c2 c3 c4)`` covering ``[0, horizon]``."""
    if min(c2, c3, c4) < 0:
        raise ArgumentError("constants must be nonnegative")
    prod = c2 * c3 * c4
    delta = math.inf if prod == 0 else 0.5 / prod
    if delta >= horizon:
        return np.array([0.0, float(horizon)])
    count = int(math.ceil(horizon / delta - 1e-12))
    knots = delta * np.arange(count + 1)
    knots[-1] = horizon
    return knots


@dataclass
class NovikovConstants:
    c2: float
    c3: float
    c4: float

    @property
    def delta(self):
        return 0.5 / (self.c2 * self.c3 * self.c4)


def novikov_constants(kernel: GirsanovKernel, spec: AffineSpec, horizon, points=257,
                      h_quad=None) -> NovikovConstants:
    """Instance values of the three constants for a diffusive affine state.

    ``c2 = 3 sup |phi1 U|^2``, ``c3 = sup_t int_0^t |U^-1 v|^2`` with
    ``U(t) = exp(int_0^t Theta)``, and ``c4`` the Gaussian moment-ratio bound
    ``sup_n E|G|^(2n) / (n E|G|^(2n-2))`` of a k-dimensional standard normal.
    """
    ts = np.linspace(0.0, horizon, points)
    U = propagate(spec.Theta, np.zeros_like(ts), ts, h_quad)
    Uinv = propagate(-spec.Theta, np.zeros_like(ts), ts, h_quad)
    c2 = 3.0 * float((np.einsum("sij,sjk->sik", kernel.phi1(ts), U) ** 2).sum(axis=(1, 2)).max())
    g2 = (np.einsum("sij,sjk->sik", Uinv, spec.v(ts)) ** 2).sum(axis=(1, 2))
    c3 = float(simpson(g2, dx=ts[1] - ts[0]))
    c4 = float(max(spec.k, 2))
    return NovikovConstants(c2, c3, c4)
