"""Concrete model builders and risk-premium calculations.

Two families are provided: the two-factor Lucia-Schwartz model (original and
with seasonal volatility) and a two-commodity market whose prices share a
common stochastic trend.  Builders return a :class:`ModelBundle` with the
affine spec, the pricing kernel and the implied forward model.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .affine import AffineSpec, coefficients_from_affine
from .curve import ForwardModel, WeightFunction, _swap_quadrature, explicit_forward_solution
from .drivers import LevyDriver, TimeGrid, TwoPoint, Uniform, sample_driver_path
from .errors import InvalidInputError, ModelError, SpecError
from .matfield import CurveField, MatrixField, check_cp, propagate, simpson_nodes
from .measure import GirsanovKernel
from .stats import EnsembleStats, map_blocks

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Seasonality:
    """Truncated Fourier series ``a0 + sum a_i cos(2 pi i T) + b_i sin(2 pi i T)``."""

    a0: float
    cos: tuple = ()
    sin: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "cos", tuple(float(x) for x in self.cos))
        object.__setattr__(self, "sin", tuple(float(x) for x in self.sin))
        if len(self.cos) != len(self.sin):
            raise SpecError("seasonality needs as many sine as cosine coefficients")

    def _terms(self, T):
        T = np.asarray(T, dtype=float)
        i = np.arange(1, len(self.cos) + 1)
        return T, i, TWO_PI * i * T[..., None]

    def __call__(self, T):
        T, i, x = self._terms(T)
        return self.a0 + (np.cos(x) @ np.array(self.cos) + np.sin(x) @ np.array(self.sin)
                          if i.size else 0.0 * T)

    def derivative(self, T):
        T, i, x = self._terms(T)
        if not i.size:
            return 0.0 * T
        return (TWO_PI * i * (-np.sin(x) * np.array(self.cos) + np.cos(x) * np.array(self.sin))).sum(-1)

    def integral(self, T1, T2):
        total = self.a0 * (T2 - T1)
        for i, (a, b) in enumerate(zip(self.cos, self.sin), start=1):
            w = TWO_PI * i
            total += a / w * (math.sin(w * T2) - math.sin(w * T1))
            total -= b / w * (math.cos(w * T2) - math.cos(w * T1))
        return total


def _time_field(value, dims, horizon, name):
    """Constant, callable or :class:`MatrixField` coefficient as a MatrixField."""
    if isinstance(value, MatrixField):
        return value
    if callable(value):
        return MatrixField(lambda t: np.asarray(value(t), dtype=float).reshape((t.size,) + dims),
                           dims, horizon, name=name)
    return MatrixField.constant(np.broadcast_to(np.asarray(value, dtype=float), dims), horizon,
                                name=name)


@dataclass
class ModelBundle:
    name: str
    affine: AffineSpec
    kernel: GirsanovKernel
    forward: ForwardModel
    lam: MatrixField
    spec: object = None
    weight: WeightFunction = field(default_factory=WeightFunction.flat)

    @property
    def horizon(self):
        return self.affine.horizon


# ---------------------------------------------------------------------------
# Lucia-Schwartz


@dataclass
class LuciaSchwartzSpec:
    """Spot factor with rate ``kappa`` and vol ``sigma1``, long-run factor with
    seasonal vol ``v2``, price seasonality ``s`` and curve reversion ``lam``.

    With ``original=True`` the long-run vol is the constant ``v2.a0`` and the
    curve carries the drift ``mu``.
    """

    kappa: float = 3.0
    sigma1: float = 6.0
    v2: Seasonality = Seasonality(4.0, (0.8,), (0.0,))
    s: Seasonality = Seasonality(40.0, (5.0, 1.0), (2.0, 0.0))
    lam: object = 0.5
    original: bool = False
    mu: float = 0.0
    horizon: float = 2.0
    x0: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.kappa > 0:
            raise SpecError("kappa must be positive")
        if not self.sigma1 > 0:
            raise SpecError("sigma1 must be positive")
        grid = np.linspace(0.0, self.horizon, 513)
        if self.original:
            if any(self.v2.cos + self.v2.sin):
                raise SpecError("the original model needs a constant long-run volatility")
        vals = self.v2(grid)
        if np.any(vals <= 0):
            raise SpecError("v2 must be positive on the horizon")
        ratio = self.v2.derivative(grid) / vals
        if np.all(np.abs(ratio + self.kappa) < 1e-12):
            raise SpecError("v2'/v2 == -kappa collapses the model to one factor")
        try:
            lam = self.lam_field(grid)
        except InvalidInputError:
            lam = np.array([np.inf])
        if not np.all(np.isfinite(lam)):
            raise SpecError("lam must be bounded on the horizon")

    def lam_field(self, t):
        return _time_field(self.lam, (), self.horizon, "lam")(t)

    def gamma_coefficient(self, T1, T2):
        """Flat-weight average loading of the spot factor at ``t = 0``."""
        k, d = self.kappa, T2 - T1
        return self.sigma1 * math.exp(-k * T1) * -math.expm1(-k * d) / (k * d)

    def psi_coefficient(self, T1, T2):
        """Flat-weight average of the long-run vol over the delivery period."""
        return self.v2.integral(T1, T2) / (T2 - T1)

    def swap_vol(self, t, T1, T2):
        return np.array([math.exp(self.kappa * t) * self.gamma_coefficient(T1, T2),
                         self.psi_coefficient(T1, T2)])


def build_lucia_schwartz(spec: LuciaSchwartzSpec) -> ModelBundle:
    """Affine spec, kernel and forward model of the Lucia-Schwartz family."""
    k_, s1, H = spec.kappa, spec.sigma1, spec.horizon
    v2, s = spec.v2, spec.s
    lam_scalar = _time_field(spec.lam, (), H, "lam")
    lam = MatrixField(lambda t: lam_scalar(t)[:, None, None], (1, 1), H, name="lam")
    original, mu = spec.original, spec.mu

    def alpha(t, T):
        out = np.empty((t.size, 1, 2))
        out[:, 0, 0] = np.exp(-k_ * (T - t))
        out[:, 0, 1] = 1.0 if original else v2(T) / v2(t)
        return out

    def alpha_t(t, T):
        out = np.empty((t.size, 1, 2))
        out[:, 0, 0] = k_ * np.exp(-k_ * (T - t))
        out[:, 0, 1] = 0.0 if original else -v2(T) * v2.derivative(t) / v2(t) ** 2
        return out

    def alpha_T(t, T):
        out = np.empty((t.size, 1, 2))
        out[:, 0, 0] = -k_ * np.exp(-k_ * (T - t))
        out[:, 0, 1] = 0.0 if original else v2.derivative(T) / v2(t)
        return out

    def beta(t, T):
        return (s(T) + (mu * (T - t) if original else 0.0))[:, None]

    def beta_t(t, T):
        return np.full((t.size, 1), -mu if original else 0.0)

    def beta_T(t, T):
        return (s.derivative(T) + (mu if original else 0.0))[:, None]

    def vol2(t):
        return np.full(t.shape, v2.a0) if original else v2(t)

    def Theta(t):
        out = np.zeros((t.size, 2, 2))
        lt = lam_scalar(t)
        out[:, 0, 0] = -k_ - lt
        out[:, 1, 1] = -lt if original else v2.derivative(t) / v2(t) - lt
        return out

    def v(t):
        out = np.zeros((t.size, 2, 2))
        out[:, 0, 0] = s1
        out[:, 1, 1] = vol2(t)
        return out

    def phi1(t):
        out = np.zeros((t.size, 2, 2))
        lt = lam_scalar(t)
        out[:, 0, 0] = lt / s1
        out[:, 1, 1] = lt / vol2(t)
        return out

    def phi0(t):
        out = np.zeros((t.size, 2))
        if original:
            out[:, 1] = mu / vol2(t)
        return out

    driver = LevyDriver.brownian(2)
    affine = AffineSpec(
        CurveField(alpha, (1, 2), d_dt=alpha_t, d_dT=alpha_T, name="alpha"),
        CurveField(beta, (1,), d_dt=beta_t, d_dT=beta_T, name="beta"),
        MatrixField.constant(np.zeros(2), H, name="theta"),
        MatrixField(Theta, (2, 2), H, name="Theta"),
        MatrixField(v, (2, 2), H, name="v"),
        MatrixField.constant(np.zeros((2, 2)), H, name="z"),
        np.asarray(spec.x0, dtype=float), driver, H)
    kernel = GirsanovKernel(MatrixField(phi0, (2,), H, name="phi0"),
                            MatrixField(phi1, (2, 2), H, name="phi1"),
                            MatrixField.constant(np.zeros(2), H, name="xi"))
    forward = coefficients_from_affine(affine, lam, tol=1e-10)
    name = "lucia-schwartz-original" if original else "lucia-schwartz"
    return ModelBundle(name, affine, kernel, forward, lam, spec)


@dataclass
class StylizedFactReport:
    samuelson: object       # True, False or "flat"
    delivery: object        # True, False or "flat"
    gammas: np.ndarray
    sigma_norms: np.ndarray

    @property
    def passed(self):
        return self.samuelson is True and self.delivery is True


def stylized_fact_checks(spec: LuciaSchwartzSpec, T1=1.0, T2_grid=None, t_grid=None,
                         delivery=(1.0, 2.0)) -> StylizedFactReport:
    """Samuelson effect in ``t`` and decay in the delivery length."""
    T2_grid = np.linspace(T1 + 1 / 12, T1 + 2.0, 24) if T2_grid is None else np.asarray(T2_grid)
    a, b = delivery
    t_grid = np.linspace(0.0, a, 13) if t_grid is None else np.asarray(t_grid)
    gam = np.array([abs(spec.gamma_coefficient(T1, T2)) for T2 in T2_grid])
    norms = np.array([np.linalg.norm(spec.swap_vol(t, a, b)) for t in t_grid])

    def verdict(x, sign):
        spread = (x.max() - x.min()) / max(abs(x).max(), 1e-300)
        if spread < 1e-9:
            return "flat"
        return bool(np.all(sign * np.diff(x) > 0))

    return StylizedFactReport(verdict(norms, 1.0), verdict(gam, -1.0), gam, norms)


# ---------------------------------------------------------------------------
# cointegrated two-commodity market


def cointegration_residual(a1, a2, lam):
    """``lam11 + (a2/a1) lam12 - (a1/a2) lam21 - lam22``; ``lam`` is ``(..., 2, 2)``."""
    lam = np.asarray(lam, dtype=float)
    return (lam[..., 0, 0] + (a2 / a1) * lam[..., 0, 1] - (a1 / a2) * lam[..., 1, 0]
            - lam[..., 1, 1])


def solve_cointegration_system(a1, a2, lam, mu1, mu2, maturity_gaps=None):
    """Least-squares state reversion ``M`` with ``lam alpha = alpha M`` for all maturities.

    ``alpha`` has rows ``(a1, e1, 0)`` and ``(a2, 0, e2)`` with
    ``e_k = exp(-mu_k (T - t))``.  Returns ``(M, residual)``; a residual above
    rounding level means no delivery-independent ``lam`` is compatible.
    """
    lam = np.asarray(lam, dtype=float)
    gaps = np.linspace(0.0, 3.0, 13) if maturity_gaps is None else np.asarray(maturity_gaps)
    rows, rhs = [], []
    for g in gaps:
        A = np.array([[a1, math.exp(-mu1 * g), 0.0], [a2, 0.0, math.exp(-mu2 * g)]])
        target = lam @ A
        # (A M)_{ij} = sum_l A_il M_lj, unknowns M flattened row-major
        for i in range(2):
            for j in range(3):
                coeff = np.zeros((3, 3))
                coeff[:, j] = A[i]
                rows.append(coeff.reshape(-1))
                rhs.append(target[i, j])
    rows, rhs = np.array(rows), np.array(rhs)
    sol = np.linalg.lstsq(rows, rhs, rcond=None)[0]
    residual = float(np.abs(rows @ sol - rhs).max())
    return sol.reshape(3, 3), residual


@dataclass
class CointegratedSpec:
    """Two commodities ``S_k = s_k + Y_k + a_k L`` with a common trend ``L``.

    ``mu`` is the shared reversion rate of both ``Y`` factors; ``lam`` is the
    2x2 curve mean reversion (constant array, callable or MatrixField); ``xi``
    is the Esscher tilt of the three jump components.
    """

    a1: float = 1.0
    a2: float = 0.8
    mu: float = 2.0
    sigma: float = 3.0
    sigma1: float = 4.0
    sigma2: float = 5.0
    psi: float = 1.0
    psi1: float = 1.5
    psi2: float = 1.2
    laws: tuple = (TwoPoint(0.5, 1.5, -1.5), Uniform(-2.0, 2.0), TwoPoint(0.4, 2.0, -1.0))
    intensities: tuple = (4.0, 6.0, 5.0)
    s1: Seasonality = Seasonality(40.0, (4.0,), (1.0,))
    s2: Seasonality = Seasonality(30.0, (3.0,), (-1.0,))
    lam: object = None
    xi: tuple = (0.05, -0.05, 0.02)
    horizon: float = 2.0
    x0: tuple = (0.0, 0.0, 0.0)
    tol: float = 1e-10
    residual: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.a1 == 0 or self.a2 == 0:
            raise SpecError("cointegration loadings a1, a2 must be nonzero")
        if self.lam is None:
            l11, l12, l22 = 0.3, 0.1, 0.35
            l21 = (self.a2 / self.a1) * (l11 + (self.a2 / self.a1) * l12 - l22)
            self.lam = np.array([[l11, l12], [l21, l22]])
        if min(self.sigma, self.sigma1, self.sigma2) <= 0:
            raise SpecError("diffusion loadings must be positive")
        if not self.mu > 0:
            raise SpecError("mu must be positive")
        grid = np.linspace(0.0, self.horizon, 33)
        lam = self.lam_field()
        res = np.abs(cointegration_residual(self.a1, self.a2, lam(grid))).max()
        self.residual = float(res)
        if res > self.tol:
            raise ModelError(
                f"no delivery-independent mean reversion exists for these loadings "
                f"(residual {res:.3e})")
        if not check_cp(lam, grid):
            raise ModelError("lam fails the commutative property")

    def lam_field(self):
        return _time_field(self.lam, (2, 2), self.horizon, "lam")


def build_cointegrated(spec: CointegratedSpec) -> ModelBundle:
    """Affine spec, kernel and two-commodity forward model of the cointegrated market."""
    a1, a2, mu, H = spec.a1, spec.a2, spec.mu, spec.horizon
    lam = spec.lam_field()
    driver = LevyDriver(spec.intensities, spec.laws)
    xi = np.asarray(spec.xi, dtype=float)
    driver.check_tilt(xi)
    vdiag = np.array([spec.sigma, spec.sigma1, spec.sigma2])
    zdiag = np.array([spec.psi, spec.psi1, spec.psi2])
    v, z = np.diag(vdiag), np.diag(zdiag)
    gamma1 = np.diag([0.0, -mu, -mu])

    def M(t):
        L = lam(t)
        out = np.zeros((t.size, 3, 3))
        out[:, 0, 0] = L[:, 0, 0] + (a2 / a1) * L[:, 0, 1]
        out[:, 1:, 1:] = L
        return out

    def alpha(t, T):
        e = np.exp(-mu * (T - t))
        out = np.zeros((t.size, 2, 3))
        out[:, 0, 0], out[:, 1, 0] = a1, a2
        out[:, 0, 1] = e
        out[:, 1, 2] = e
        return out

    def alpha_t(t, T):
        e = mu * np.exp(-mu * (T - t))
        out = np.zeros((t.size, 2, 3))
        out[:, 0, 1] = e
        out[:, 1, 2] = e
        return out

    def alpha_T(t, T):
        return -alpha_t(t, T)

    def beta(t, T):
        return np.stack([spec.s1(T), spec.s2(T)], axis=-1)

    def beta_T(t, T):
        return np.stack([spec.s1.derivative(T), spec.s2.derivative(T)], axis=-1)

    zero2 = lambda t, T: np.zeros((t.size, 2))
    phi0 = -(zdiag * driver.kappa * xi) / vdiag
    affine = AffineSpec(
        CurveField(alpha, (2, 3), d_dt=alpha_t, d_dT=alpha_T, name="alpha"),
        CurveField(beta, (2,), d_dt=zero2, d_dT=beta_T, name="beta"),
        MatrixField.constant(np.zeros(3), H, name="theta"),
        MatrixField(lambda t: gamma1 - M(t), (3, 3), H, name="Theta"),
        MatrixField.constant(v, H, name="v"),
        MatrixField.constant(z, H, name="z"),
        np.asarray(spec.x0, dtype=float), driver, H)
    kernel = GirsanovKernel(MatrixField.constant(phi0, H, name="phi0"),
                            MatrixField(lambda t: M(t) / vdiag[None, :, None], (3, 3), H, name="phi1"),
                            MatrixField.constant(xi, H, name="xi"))
    forward = coefficients_from_affine(affine, lam, tol=1e-10)
    return ModelBundle("cointegrated-2", affine, kernel, forward, lam, spec)


# ---------------------------------------------------------------------------
# risk premia


def _decay_stack(lam, s, T):
    """``exp(-int_s^T lam)`` for an array of start times ``s``."""
    s = np.asarray(s, dtype=float)
    return propagate(-lam, s, np.full(s.shape, float(T)))


def risk_premium_forward(model: ForwardModel, f_snapshot, t, T, panels=512):
    """Forward price minus the expected spot at delivery, given ``f(t, T)``.

    ``(I - exp(-int_t^T lam)) f(t,T) - int_t^T exp(-int_s^T lam) c(s,T) ds``.
    ``f_snapshot`` may carry leading path axes.
    """
    f = np.asarray(f_snapshot, dtype=float)
    if T == t:
        return np.zeros_like(f)
    P = _decay_stack(model.lam, np.array([t]), T)[0]
    nodes, w = simpson_nodes(t, T, panels)
    Ps = _decay_stack(model.lam, nodes, T)
    c = model.c(nodes, np.full(nodes.shape, float(T)))
    drift = np.einsum("p,pij,pj->i", w, Ps, c)
    return f - f @ P.T - drift


def risk_premium_swap(model: ForwardModel, w: WeightFunction, t, T1, T2, curve, panels=512):
    """Weighted average of the forward premium over ``[T1, T2]``.

    ``curve`` maps maturities ``(P,)`` to the snapshot ``f(t, T)`` of shape ``(P, n)``.
    """
    nodes, qw = _swap_quadrature(w, T1, T2, model.n, panels)
    f = np.asarray(curve(nodes), dtype=float).reshape(nodes.size, model.n)
    rp = np.stack([risk_premium_forward(model, f[p], t, T) for p, T in enumerate(nodes)])
    return np.einsum("pij,pj->i", qw, rp)


def risk_premium_swap_expanded(model: ForwardModel, w: WeightFunction, t, T1, T2, curve,
                               order=48):
    """Expanded double-integral form of the swap premium, by Gauss-Legendre rules."""
    x, wx = np.polynomial.legendre.leggauss(order)
    n = model.n
    Ts = 0.5 * (T2 - T1) * x + 0.5 * (T1 + T2)
    wT = 0.5 * (T2 - T1) * wx
    if w.is_scalar:
        W = w.scalar(Ts, T1, T2)[:, None, None] * np.eye(n)
    else:
        W = w(Ts, T1, T2, n)
    f = np.asarray(curve(Ts), dtype=float).reshape(Ts.size, n)
    first = np.zeros(n)
    second = np.zeros(n)
    for q, T in enumerate(Ts):
        decay = _decay_stack(model.lam, np.array([t]), T)[0]
        first += wT[q] * W[q] @ (f[q] - decay @ f[q])
        s = 0.5 * (T - t) * x + 0.5 * (T + t)
        ws = 0.5 * (T - t) * wx
        Ps = _decay_stack(model.lam, s, T)
        c = model.c(s, np.full(s.shape, T))
        second += wT[q] * W[q] @ np.einsum("p,pij,pj->i", ws, Ps, c)
    return first - second


@dataclass
class RiskPremiumRow:
    contract: str
    t: float
    T1: float
    T2: float
    commodity: int
    closed_form: float
    mc_mean: float = math.nan
    mc_se: float = math.nan

    @property
    def passed(self):
        if math.isnan(self.mc_mean):
            return True
        return abs(self.closed_form - self.mc_mean) <= 3.0 * self.mc_se


@dataclass
class RiskPremiumReport:
    rows: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r.passed for r in self.rows)


def risk_premium_mc(model: ForwardModel, f_snapshot, t, T, n_paths=100_000, *, dt=1 / 365,
                    seed=0, workers=None):
    """Monte Carlo premium ``f(t,T) - E[f(T,T)]`` simulated from the snapshot.

    Uses the explicit propagator scheme, so the only error is statistical.
    Returns ``(mean, se)`` arrays over commodities.
    """
    f = np.asarray(f_snapshot, dtype=float).reshape(model.n)
    steps = max(1, int(round((T - t) / dt)))
    grid = TimeGrid(float(t), float(T), steps)
    shifted = dataclasses.replace(model, f0=lambda TT: np.broadcast_to(f, np.shape(TT) + (model.n,)),
                                  f0_T=None, check=False)

    def block(start, count):
        path = sample_driver_path(model.driver, grid, seed, start=start, count=count)
        end = explicit_forward_solution(shifted, path, [T], record=[steps])[0, :, 0]
        return EnsembleStats.from_samples({("fT", str(i)): end[:, i] for i in range(model.n)})

    stats = map_blocks(n_paths, block, workers)
    mean = np.array([f[i] - stats.mean(("fT", str(i))) for i in range(model.n)])
    se = np.array([stats.se(("fT", str(i))) for i in range(model.n)])
    return mean, se


# ---------------------------------------------------------------------------
# presets


def lucia_schwartz_preset(**overrides):
    return build_lucia_schwartz(LuciaSchwartzSpec(**overrides))


def lucia_schwartz_original_preset(**overrides):
    params = dict(original=True, mu=0.8, v2=Seasonality(4.0))
    params.update(overrides)
    return build_lucia_schwartz(LuciaSchwartzSpec(**params))


def cointegrated_preset(**overrides):
    return build_cointegrated(CointegratedSpec(**overrides))


PRESETS: dict[str, Callable[..., ModelBundle]] = {
    "lucia-schwartz": lucia_schwartz_preset,
    "lucia-schwartz-original": lucia_schwartz_original_preset,
    "cointegrated-2": cointegrated_preset,
}


def build_preset(name, **overrides) -> ModelBundle:
    if name not in PRESETS:
        raise SpecError(f"unknown model preset {name!r}; known: {sorted(PRESETS)}")
    return PRESETS[name](**overrides)
