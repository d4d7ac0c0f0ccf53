"""Deterministic matrix fields, matrix exponentials and ordered propagators.

Every time-dependent coefficient in the package (mean reversion, state drift,
volatility loadings, affine loadings) is a :class:`MatrixField` of one time
argument or a :class:`CurveField` of ``(t, T)``.  Both are evaluated in batch:
an array of times of shape ``S`` yields an array of shape ``S + dims``.
"""
from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError, DimensionError, InvalidInputError, UnsupportedError

DEFAULT_QUAD_PANELS = 1024

# Pade coefficients and 1-norm thresholds for degrees 3, 5, 7, 9, 13.
_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


def _pade_uv(A, m):
    b = _PADE[m]
    eye = np.broadcast_to(np.eye(A.shape[-1]), A.shape)
    A2 = A @ A
    if m == 13:
        A4 = A2 @ A2
        A6 = A4 @ A2
        u_inner = A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
        u_inner = u_inner + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * eye
        U = A @ u_inner
        V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
        V = V + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * eye
        return U, V
    powers = [eye, A2]
    while len(powers) < (m + 1) // 2:
        powers.append(powers[-1] @ A2)
    u_inner = sum(b[2 * j + 1] * powers[j] for j in range(len(powers)))
    V = sum(b[2 * j] * powers[j] for j in range(len(powers)))
    return A @ u_inner, V


def mat_exp(A):
    """Matrix exponential by scaling and squaring with diagonal Pade approximants.

    Accepts a single square matrix or a stack ``(..., n, n)``; the whole stack
    shares one Pade degree and squaring count, chosen from the largest 1-norm.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"mat_exp needs square matrices, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("mat_exp input contains NaN or Inf")
    if A.size == 0:
        return A.copy()
    norm = float(np.abs(A).sum(axis=-2).max())
    for m in (3, 5, 7, 9):
        if norm <= _THETA[m]:
            U, V = _pade_uv(A, m)
            return np.linalg.solve(V - U, V + U)
    s = max(0, int(math.ceil(math.log2(norm / _THETA[13]))))
    U, V = _pade_uv(A / 2.0**s, 13)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def simpson_nodes(a, b, panels):
    """Composite Simpson nodes and weights on [a, b].

    ``a`` and ``b`` may be arrays of equal shape ``S``; results have shape
    ``S + (panels + 1,)``.
    """
    if panels < 2 or panels % 2:
        raise ArgumentError(f"Simpson needs an even panel count >= 2, got {panels}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    u = np.linspace(0.0, 1.0, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w /= 3.0 * panels
    span = (b - a)[..., None]
    return a[..., None] + span * u, span * w


def simpson(y, x=None, *, dx=None, axis=-1):
    """Composite Simpson rule on uniformly spaced samples (odd sample count)."""
    y = np.moveaxis(np.asarray(y, dtype=float), axis, -1)
    n = y.shape[-1]
    if n < 3 or n % 2 == 0:
        raise ArgumentError(f"Simpson needs an odd number (>=3) of samples, got {n}")
    if dx is None:
        if x is None:
            raise ArgumentError("simpson needs x or dx")
        x = np.asarray(x, dtype=float)
        dx = (x[-1] - x[0]) / (n - 1)
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return (y @ w) * (dx / 3.0)


def _panels_for(span, h_quad):
    panels = max(2, int(math.ceil(span / h_quad - 1e-9)))
    return panels + (panels % 2)


class MatrixField:
    """A deterministic field ``t -> matrix`` of fixed shape on ``[0, horizon]``.

    Parameters
    ----------
    func : callable
        Maps a 1-D float array of times to an array of shape ``(len(t),) + dims``.
    dims : tuple of int
        Shape of one value; ``()`` for scalars, ``(n,)`` for vectors.
    horizon : float
        Right end of the time domain.
    kind : str
        ``"closed-form"`` or ``"grid"``.
    """

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], dims: Sequence[int],
                 horizon: float, kind: str = "closed-form", name: str = "",
                 validate: bool = True):
        self.func = func
        self.dims = tuple(int(d) for d in dims)
        self.horizon = float(horizon)
        self.kind = kind
        self.name = name
        if self.horizon <= 0:
            raise ArgumentError("horizon must be positive")
        if validate:
            probe = self(np.linspace(0.0, self.horizon, 65))
            if not np.all(np.isfinite(probe)):
                raise InvalidInputError(f"field {name or func!r} is not finite on [0, {horizon}]")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        flat = t.reshape(-1)
        out = np.asarray(self.func(flat), dtype=float)
        expected = (flat.size,) + self.dims
        if out.shape != expected:
            try:
                out = np.broadcast_to(out, expected)
            except ValueError:
                raise DimensionError(
                    f"field {self.name!r} returned shape {out.shape}, expected {expected}") from None
        return out.reshape(t.shape + self.dims)

    @property
    def is_square(self):
        return len(self.dims) == 2 and self.dims[0] == self.dims[1]

    def __neg__(self):
        return MatrixField(lambda t: -self.func(t), self.dims, self.horizon, self.kind,
                           name=f"-{self.name}", validate=False)

    def __repr__(self):
        return f"MatrixField(name={self.name!r}, dims={self.dims}, kind={self.kind!r})"

    # constructors -----------------------------------------------------

    @classmethod
    def constant(cls, value, horizon, name="constant"):
        value = np.array(value, dtype=float)
        return cls(lambda t: np.broadcast_to(value, (t.size,) + value.shape), value.shape,
                   horizon, name=name)

    @classmethod
    def diagonal_exp(cls, scale, rate, horizon, name="diagonal-exp"):
        """Diagonal field ``diag(scale_i * exp(rate_i * t))``."""
        scale = np.asarray(scale, dtype=float)
        rate = np.asarray(rate, dtype=float)
        if scale.shape != rate.shape or scale.ndim != 1:
            raise DimensionError("diagonal-exp needs equal-length scale and rate vectors")
        n = scale.size

        def func(t):
            out = np.zeros((t.size, n, n))
            idx = np.arange(n)
            out[:, idx, idx] = scale * np.exp(np.outer(t, rate))
            return out

        return cls(func, (n, n), horizon, name=name)

    @classmethod
    def grid(cls, knots, values, horizon=None, name="piecewise"):
        """Linear interpolation through ``values[i]`` at ``knots[i]``, clamped outside."""
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or knots.size < 1 or values.shape[0] != knots.size:
            raise DimensionError("grid field needs one value per knot")
        if np.any(np.diff(knots) <= 0):
            raise InvalidInputError("grid knots must be strictly increasing")
        horizon = float(knots[-1] if horizon is None else horizon)
        if knots[0] > 0 or knots[-1] < horizon:
            raise InvalidInputError(f"grid knots must cover [0, {horizon}]")
        dims = values.shape[1:]

        def func(t):
            if knots.size == 1:
                return np.broadcast_to(values[0], (t.size,) + dims)
            tc = np.clip(t, knots[0], knots[-1])
            i = np.clip(np.searchsorted(knots, tc, side="right") - 1, 0, knots.size - 2)
            w = (tc - knots[i]) / (knots[i + 1] - knots[i])
            w = w.reshape((-1,) + (1,) * len(dims))
            return (1.0 - w) * values[i] + w * values[i + 1]

        return cls(func, dims, horizon, kind="grid", name=name)


FIELD_REGISTRY = {
    "constant": MatrixField.constant,
    "diagonal-exp": MatrixField.diagonal_exp,
    "piecewise": MatrixField.grid,
}


def make_field(kind, horizon, **params):
    """Build a registered closed-form or grid field by name."""
    try:
        builder = FIELD_REGISTRY[kind]
    except KeyError:
        raise UnsupportedError(f"unknown field kind {kind!r}; known: {sorted(FIELD_REGISTRY)}") from None
    return builder(horizon=horizon, **params)


class CurveField:
    """Deterministic field of ``(t, T)`` with values of shape ``dims``.

    ``func(t, T)`` receives two float arrays of equal shape ``S`` and returns
    ``S + dims``.  Optional ``d_dt`` / ``d_dT`` supply closed-form partial
    derivatives; otherwise central differences are used.
    """

    def __init__(self, func, dims, *, d_dt=None, d_dT=None, name=""):
        self.func = func
        self.dims = tuple(int(d) for d in dims)
        self.d_dt = d_dt
        self.d_dT = d_dT
        self.name = name

    def _eval(self, func, t, T):
        t, T = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(T, dtype=float))
        shape = t.shape
        out = np.asarray(func(t.reshape(-1), T.reshape(-1)), dtype=float)
        expected = (t.size,) + self.dims
        if out.shape != expected:
            try:
                out = np.broadcast_to(out, expected)
            except ValueError:
                raise DimensionError(
                    f"curve field {self.name!r} returned {out.shape}, expected {expected}") from None
        return out.reshape(shape + self.dims)

    def __call__(self, t, T):
        return self._eval(self.func, t, T)

    def dt(self, t, T, h=1e-5):
        if self.d_dt is not None:
            return self._eval(self.d_dt, t, T)
        t = np.asarray(t, dtype=float)
        return (self(t + h, T) - self(t - h, T)) / (2.0 * h)

    def dT(self, t, T, h=1e-4):
        if self.d_dT is not None:
            return self._eval(self.d_dT, t, T)
        T = np.asarray(T, dtype=float)
        return (self(t, T + h) - self(t, T - h)) / (2.0 * h)

    def has_dT(self):
        return self.d_dT is not None

    @classmethod
    def constant(cls, value, name="constant"):
        value = np.array(value, dtype=float)
        zero = np.zeros_like(value)
        return cls(lambda t, T: np.broadcast_to(value, (t.size,) + value.shape), value.shape,
                   d_dt=lambda t, T: np.broadcast_to(zero, (t.size,) + value.shape),
                   d_dT=lambda t, T: np.broadcast_to(zero, (t.size,) + value.shape), name=name)

    @classmethod
    def of_time(cls, field: MatrixField, name=""):
        """Lift a maturity-independent field ``g(t)`` to ``(t, T) -> g(t)``."""
        zero_shape = field.dims
        return cls(lambda t, T: field(t), field.dims,
                   d_dT=lambda t, T: np.zeros((t.size,) + zero_shape),
                   name=name or field.name)

    def __repr__(self):
        return f"CurveField(name={self.name!r}, dims={self.dims})"


def sample_grid(horizon, points=33):
    return np.linspace(0.0, horizon, points)


def cp_defect(A: MatrixField, grid) -> float:
    """Largest Frobenius norm of ``A(t1)A(t2) - A(t2)A(t1)`` over sampled pairs."""
    if not A.is_square:
        raise DimensionError(f"CP check needs a square field, got dims {A.dims}")
    V = A(np.asarray(grid, dtype=float))
    left = np.einsum("aij,bjk->abik", V, V)
    comm = left - np.swapaxes(left, 0, 1)
    return float(np.sqrt((comm**2).sum(axis=(-2, -1))).max()) if len(V) else 0.0


def check_cp(A: MatrixField, grid, tol=1e-10) -> bool:
    """Sampled commutative-property check.

    A passing check is necessary, not sufficient: only the sampled pairs are
    compared.
    """
    if tol <= 0:
        raise ArgumentError("tol must be positive")
    return cp_defect(A, grid) <= tol


def integrate_field(A: MatrixField, s, t, h_quad=None):
    """Simpson approximation of the integral of ``A`` over ``[s, t]`` (batched)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    s, t = np.broadcast_arrays(s, t)
    if np.any(s > t):
        raise ArgumentError("integration bounds need s <= t")
    h_quad = A.horizon / DEFAULT_QUAD_PANELS if h_quad is None else h_quad
    span = float((t - s).max()) if s.size else 0.0
    panels = _panels_for(span, h_quad)
    nodes, weights = simpson_nodes(s, t, panels)
    vals = A(nodes)
    extra = (1,) * len(A.dims)
    return (vals * weights.reshape(weights.shape + extra)).sum(axis=s.ndim)


def propagate(A: MatrixField, s, t, h_quad=None):
    """``exp(int_s^t A(u) du)`` for a CP field; ``s`` and ``t`` may be arrays."""
    if not A.is_square:
        raise DimensionError(f"propagate needs a square field, got dims {A.dims}")
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(s_arr > t_arr):
        raise ArgumentError("propagate needs s <= t")
    integral = integrate_field(A, s_arr, t_arr, h_quad)
    out = mat_exp(integral)
    same = np.broadcast_to(s_arr == t_arr, out.shape[:-2])
    if np.any(same):
        out[same] = np.eye(A.dims[0])
    return out


class Propagator:
    """``U(t) = exp(int_0^t A)`` with a thread-safe memo of evaluated knots."""

    def __init__(self, A: MatrixField, h_quad=None):
        if not A.is_square:
            raise DimensionError("Propagator needs a square field")
        self.A = A
        self.h_quad = A.horizon / DEFAULT_QUAD_PANELS if h_quad is None else h_quad
        self._cache: dict[float, np.ndarray] = {}
        self._lock = threading.Lock()

    def U(self, t):
        t = float(t)
        with self._lock:
            hit = self._cache.get(t)
        if hit is None:
            hit = propagate(self.A, 0.0, t, self.h_quad)
            with self._lock:
                self._cache[t] = hit
        return hit

    def U_inv(self, t):
        return propagate(-self.A, 0.0, float(t), self.h_quad)

    def step(self, s, t):
        return propagate(self.A, s, t, self.h_quad)

    def precompute(self, grid):
        for t in np.asarray(grid, dtype=float):
            self.U(t)
        return self
