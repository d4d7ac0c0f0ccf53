"""Brownian and compound-Poisson drivers, path sampling and moment oracles.

Jump components are finite-activity compound Poisson processes, compensated so
that every jump increment has zero mean.  Path sampling is counter based:
block ``b`` of ``PATH_BLOCK`` paths draws from Philox streams keyed by
``(seed, b, stream)``, so a path depends only on its global index and the seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ArgumentError, DimensionError, InvalidInputError, PositivityError, UnsupportedError

PATH_BLOCK = 512

_STREAM_BROWNIAN = 0
_STREAM_COUNTS = 1
_STREAM_SIZES = 2
_STREAM_TIMES = 3


def _generator(seed, *key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


# ---------------------------------------------------------------------------
# jump laws


def _double_factorial(k):
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


class JumpLaw:
    """Distribution of a single jump size."""

    name = "law"

    def moment(self, k: int) -> float:
        raise NotImplementedError

    def support(self):
        """``(lo, hi, atoms)``; ``atoms`` is a tuple of point masses or None."""
        raise NotImplementedError

    def sample(self, rng, size):
        raise NotImplementedError

    def tilt(self, xi: float) -> "JumpLaw":
        """Law with density proportional to ``(1 + xi*y)`` w.r.t. this law."""
        if xi == 0:
            return self
        raise UnsupportedError(f"{self.name} jumps cannot be tilted")

    def min_factor(self, xi: float) -> float:
        """Infimum of ``1 + xi*y`` over the support (endpoints of continuous parts excluded)."""
        lo, hi, atoms = self.support()
        if atoms is not None:
            return min(1.0 + xi * a for a in atoms)
        if xi == 0:
            return 1.0
        edge = lo if xi > 0 else hi
        if not math.isfinite(edge):
            return -math.inf
        return 1.0 + xi * edge


@dataclass(frozen=True)
class Uniform(JumpLaw):
    a: float
    b: float
    name = "uniform"

    def __post_init__(self):
        if not self.a < self.b:
            raise InvalidInputError("uniform law needs a < b")

    def moment(self, k):
        return (self.b ** (k + 1) - self.a ** (k + 1)) / ((k + 1) * (self.b - self.a))

    def support(self):
        return self.a, self.b, None

    def sample(self, rng, size):
        return rng.uniform(self.a, self.b, size)

    def min_factor(self, xi):
        f = min(1.0 + xi * self.a, 1.0 + xi * self.b)
        # touching zero at an endpoint only happens on a null set
        return math.ulp(0.0) if f == 0 else f

    def tilt(self, xi):
        if xi == 0:
            return self
        return TiltedUniform(self.a, self.b, float(xi))


@dataclass(frozen=True)
class TiltedUniform(JumpLaw):
    """Uniform law reweighted by ``1 + xi*y``; sampled by inverse CDF."""

    a: float
    b: float
    xi: float
    name = "tilted-uniform"

    def moment(self, k):
        base = Uniform(self.a, self.b)
        return (base.moment(k) + self.xi * base.moment(k + 1)) / (1.0 + self.xi * base.moment(1))

    def support(self):
        return self.a, self.b, None

    def sample(self, rng, size):
        u = rng.uniform(0.0, 1.0, size)
        a, b, x = self.a, self.b, self.xi
        width = b - a
        # CDF in s = y - a: (s + x*(a*s + s^2/2)) / norm, a quadratic in s
        norm = width * (1.0 + x * (a + b) / 2.0)
        lin = 1.0 + x * a
        target = u * norm
        # s = 2*target / (lin + sqrt(lin^2 + 2*x*target)) avoids cancellation
        s = 2.0 * target / (lin + np.sqrt(np.maximum(lin * lin + 2.0 * x * target, 0.0)))
        return a + np.clip(s, 0.0, width)


@dataclass(frozen=True)
class TwoPoint(JumpLaw):
    p: float
    up: float
    down: float
    name = "two-point"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise InvalidInputError("two-point probability must lie in [0, 1]")

    def moment(self, k):
        return self.p * self.up**k + (1.0 - self.p) * self.down**k

    def support(self):
        atoms = tuple(a for a, w in ((self.up, self.p), (self.down, 1.0 - self.p)) if w > 0)
        return min(atoms), max(atoms), atoms

    def sample(self, rng, size):
        return np.where(rng.uniform(0.0, 1.0, size) < self.p, self.up, self.down)

    def tilt(self, xi):
        if xi == 0:
            return self
        wu = self.p * (1.0 + xi * self.up)
        wd = (1.0 - self.p) * (1.0 + xi * self.down)
        return TwoPoint(wu / (wu + wd), self.up, self.down)


@dataclass(frozen=True)
class Normal(JumpLaw):
    mean: float
    var: float
    name = "normal"

    def __post_init__(self):
        if self.var < 0:
            raise InvalidInputError("normal law needs a nonnegative variance")

    def moment(self, k):
        s = math.sqrt(self.var)
        return sum(math.comb(k, j) * self.mean ** (k - j) * s**j * _double_factorial(j - 1)
                   for j in range(0, k + 1, 2))

    def support(self):
        if self.var == 0:
            return self.mean, self.mean, (self.mean,)
        return -math.inf, math.inf, None

    def sample(self, rng, size):
        return rng.normal(self.mean, math.sqrt(self.var), size)


@dataclass(frozen=True)
class Degenerate(JumpLaw):
    value: float
    name = "degenerate"

    def moment(self, k):
        return self.value**k

    def support(self):
        return self.value, self.value, (self.value,)

    def sample(self, rng, size):
        return np.full(size, self.value, dtype=float)

    def tilt(self, xi):
        return self


JUMP_LAWS = {
    "uniform": Uniform,
    "two-point": TwoPoint,
    "normal": Normal,
    "degenerate": Degenerate,
}


def jump_law(name, *params):
    try:
        cls = JUMP_LAWS[name]
    except KeyError:
        raise UnsupportedError(f"unknown jump law {name!r}; known: {sorted(JUMP_LAWS)}") from None
    return cls(*(float(p) for p in params))


# ---------------------------------------------------------------------------
# driver specification


@dataclass(frozen=True)
class LevyDriver:
    """A k-dimensional Brownian motion together with k independent compensated
    compound-Poisson components (zero intensity switches a component off)."""

    intensities: tuple
    laws: tuple

    def __post_init__(self):
        rho = tuple(float(r) for r in self.intensities)
        object.__setattr__(self, "intensities", rho)
        object.__setattr__(self, "laws", tuple(self.laws))
        if len(rho) != len(self.laws):
            raise DimensionError("need one jump law per intensity")
        if any(r < 0 or not math.isfinite(r) for r in rho):
            raise InvalidInputError("jump intensities must be finite and nonnegative")
        for law in self.laws:
            if not (math.isfinite(law.moment(2)) and math.isfinite(law.moment(4))):
                raise InvalidInputError(f"jump law {law} lacks finite second/fourth moments")

    @classmethod
    def brownian(cls, k):
        return cls((0.0,) * k, (Degenerate(0.0),) * k)

    @property
    def k(self):
        return len(self.intensities)

    @property
    def has_jumps(self):
        return any(r > 0 for r in self.intensities)

    @cached_property
    def jump_mean(self):
        """``rho_j * E[y_j]``: compensator rate per component."""
        return np.array([r * law.moment(1) for r, law in zip(self.intensities, self.laws)])

    @cached_property
    def kappa(self):
        return np.array([r * law.moment(2) for r, law in zip(self.intensities, self.laws)])

    @cached_property
    def m4(self):
        return np.array([r * law.moment(4) for r, law in zip(self.intensities, self.laws)])

    @property
    def K(self):
        return np.diag(self.kappa)

    def check_tilt(self, xi):
        """Raise unless ``1 + xi_j * y > 0`` on the support of every active component."""
        xi = np.broadcast_to(np.asarray(xi, dtype=float), (self.k,))
        for j, (r, law) in enumerate(zip(self.intensities, self.laws)):
            if r > 0 and law.min_factor(float(xi[j])) <= 0:
                raise PositivityError(
                    f"component {j}: 1 + xi*y <= 0 on the support of {law} (xi={xi[j]})")

    def tilted(self, xi):
        """Driver whose jump part follows the tilted measure ``(1 + xi*y) nu(dy)``."""
        xi = np.broadcast_to(np.asarray(xi, dtype=float), (self.k,))
        self.check_tilt(xi)
        rho, laws = [], []
        for j, (r, law) in enumerate(zip(self.intensities, self.laws)):
            x = float(xi[j]) if r > 0 else 0.0
            rho.append(r * (1.0 + x * law.moment(1)))
            laws.append(law.tilt(x))
        return LevyDriver(tuple(rho), tuple(laws))


# ---------------------------------------------------------------------------
# time grids and sampled paths


@dataclass(frozen=True)
class TimeGrid:
    start: float
    stop: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ArgumentError("a time grid needs at least one step")
        if not self.stop > self.start:
            raise ArgumentError("time grid needs stop > start (positive step)")

    @classmethod
    def from_step(cls, stop, dt, start=0.0):
        if not dt > 0:
            raise ArgumentError(f"time step must be positive, got {dt}")
        span = stop - start
        steps = int(round(span / dt))
        if steps < 1 or abs(steps * dt - span) > 1e-9 * max(1.0, abs(stop)):
            raise ArgumentError(f"dt={dt} does not divide [{start}, {stop}]")
        return cls(float(start), float(stop), steps)

    @property
    def dt(self):
        return (self.stop - self.start) / self.steps

    @cached_property
    def times(self):
        t = self.start + self.dt * np.arange(self.steps + 1)
        t[-1] = self.stop
        return t

    def index_of(self, t, tol=1e-9):
        i = int(round((t - self.start) / self.dt))
        if i < 0 or i > self.steps or abs(self.times[i] - t) > tol * max(1.0, abs(t)):
            raise ArgumentError(f"time {t} is not a grid node")
        return i

    def coarsen(self, factor):
        if self.steps % factor:
            raise ArgumentError(f"cannot coarsen {self.steps} steps by {factor}")
        return TimeGrid(self.start, self.stop, self.steps // factor)


@dataclass
class DriverPath:
    """Sampled driver increments for a contiguous range of paths.

    Jumps are stored flat, ordered by (step, path, component).  ``compensator``
    is the per-step deterministic drift ``-dt * rho_j * E[y_j]``.
    """

    grid: TimeGrid
    driver: LevyDriver
    dW: np.ndarray
    jump_step: np.ndarray
    jump_path: np.ndarray
    jump_comp: np.ndarray
    jump_time: np.ndarray
    jump_size: np.ndarray
    first_path: int = 0
    seed: int = 0

    @property
    def n_paths(self):
        return self.dW.shape[1]

    @property
    def k(self):
        return self.dW.shape[2]

    @property
    def compensator(self):
        return -self.grid.dt * self.driver.jump_mean

    @cached_property
    def jump_sum(self):
        """Raw jump sums per step, shape ``(steps, paths, k)``."""
        out = np.zeros(self.dW.shape)
        if self.jump_size.size:
            np.add.at(out, (self.jump_step, self.jump_path, self.jump_comp), self.jump_size)
        return out

    @cached_property
    def dJ(self):
        """Compensated jump increments, shape ``(steps, paths, k)``."""
        return self.jump_sum + self.compensator

    def marks(self, path):
        """Jump marks ``(component, time, size)`` of one local path index."""
        sel = self.jump_path == path
        return list(zip(self.jump_comp[sel].tolist(), self.jump_time[sel].tolist(),
                        self.jump_size[sel].tolist()))

    def coarsen(self, factor):
        """Same realisation observed on a grid ``factor`` times coarser."""
        grid = self.grid.coarsen(factor)
        steps, n, k = self.dW.shape
        dW = self.dW.reshape(grid.steps, factor, n, k).sum(axis=1)
        return DriverPath(grid, self.driver, dW, self.jump_step // factor, self.jump_path,
                          self.jump_comp, self.jump_time, self.jump_size, self.first_path, self.seed)

    def with_driver(self, driver):
        return DriverPath(self.grid, driver, self.dW, self.jump_step, self.jump_path,
                          self.jump_comp, self.jump_time, self.jump_size, self.first_path, self.seed)


def _sample_block(driver, grid, seed, block):
    steps, k, dt = grid.steps, driver.k, grid.dt
    g = _generator(seed, block, _STREAM_BROWNIAN)
    dW = g.standard_normal((steps, PATH_BLOCK, k)) * math.sqrt(dt)
    empty_i = np.zeros(0, dtype=np.int64)
    if not driver.has_jumps:
        return dW, empty_i, empty_i, empty_i, np.zeros(0), np.zeros(0)
    lam = np.asarray(driver.intensities) * dt
    counts = _generator(seed, block, _STREAM_COUNTS).poisson(
        np.broadcast_to(lam, (steps, PATH_BLOCK, k)))
    s_idx, p_idx, c_idx = np.nonzero(counts)
    reps = counts[s_idx, p_idx, c_idx]
    s_idx = np.repeat(s_idx, reps)
    p_idx = np.repeat(p_idx, reps)
    c_idx = np.repeat(c_idx, reps)
    sizes = np.zeros(s_idx.size)
    for j, law in enumerate(driver.laws):
        sel = c_idx == j
        if np.any(sel):
            sizes[sel] = law.sample(_generator(seed, block, _STREAM_SIZES, j), int(sel.sum()))
    u = _generator(seed, block, _STREAM_TIMES).uniform(0.0, 1.0, s_idx.size)
    times = grid.times[s_idx] + dt * u
    return dW, s_idx, p_idx, c_idx, times, sizes


def sample_driver_path(driver: LevyDriver, grid: TimeGrid, seed: int, *, start: int = 0,
                       count: int = 1) -> DriverPath:
    """Sample paths ``start .. start+count-1``; each is a function of (seed, index) only."""
    if not grid.dt > 0:
        raise ArgumentError("time step must be positive")
    if count < 1 or start < 0:
        raise ArgumentError("need count >= 1 and start >= 0")
    parts = []
    first_block, last_block = start // PATH_BLOCK, (start + count - 1) // PATH_BLOCK
    for block in range(first_block, last_block + 1):
        dW, s, p, c, tau, y = _sample_block(driver, grid, seed, block)
        lo = max(start - block * PATH_BLOCK, 0)
        hi = min(start + count - block * PATH_BLOCK, PATH_BLOCK)
        keep = (p >= lo) & (p < hi)
        offset = block * PATH_BLOCK + lo - start
        parts.append((dW[:, lo:hi], s[keep], p[keep] - lo + offset, c[keep], tau[keep], y[keep]))
    dW = np.concatenate([q[0] for q in parts], axis=1)
    s, p, c, tau, y = (np.concatenate([q[i] for q in parts]) for i in range(1, 6))
    order = np.lexsort((c, p, s))
    return DriverPath(grid, driver, dW, s[order], p[order], c[order], tau[order], y[order],
                      first_path=start, seed=seed)


# ---------------------------------------------------------------------------
# exact moment oracles


def bell_numbers(n_max: int) -> list[int]:
    """``B_0 .. B_n_max`` from the Bell triangle."""
    if n_max < 0:
        raise ArgumentError("n_max must be nonnegative")
    bells = [1]
    row = [1]
    for _ in range(n_max):
        nxt = [row[-1]]
        for x in row:
            nxt.append(nxt[-1] + x)
        row = nxt
        bells.append(row[0])
    return bells


def stirling2(n: int, k: int) -> int:
    """Stirling number of the second kind."""
    if k < 0 or k > n:
        return 0
    row = [1] + [0] * k
    for i in range(1, n + 1):
        for j in range(min(i, k), 0, -1):
            row[j] = j * row[j] + row[j - 1]
        row[0] = 0
    return row[k]


def touchard(n: int, x=1):
    """Touchard polynomial ``sum_k S(n,k) x^k``; exact for int/Fraction ``x``."""
    return sum(stirling2(n, k) * x**k for k in range(n + 1))


def gaussian_even_moment(n: int) -> int:
    """``E[Z^(2n)] = (2n-1)!!`` for a standard normal ``Z``."""
    if n < 0:
        raise ArgumentError("n must be nonnegative")
    return _double_factorial(2 * n - 1)


def gamma_moment(n: int, shape=1, rate=1):
    """``E[U^n]`` for ``U ~ Gamma(shape, rate)``; exact for rational parameters."""
    out = Fraction(1)
    shape, rate = Fraction(shape), Fraction(rate)
    for i in range(n):
        out *= (shape + i) / rate
    return out


MOMENT_ORACLES = ("gaussian", "poisson", "gamma-subordinated")


def even_moment(law: str, n: int, *, intensity=1, shape=1, rate=1):
    """Exact ``E[J(1)^(2n)]`` for a named driver law.

    ``poisson`` uses the raw moments of a Poisson count (Touchard polynomials),
    ``gamma-subordinated`` is Brownian motion run on a Gamma clock
    ``U(1) ~ Gamma(shape, rate)``.
    """
    if law == "gaussian":
        return Fraction(gaussian_even_moment(n))
    if law == "poisson":
        return Fraction(touchard(2 * n, Fraction(intensity)))
    if law == "gamma-subordinated":
        return gamma_moment(n, shape, rate) * gaussian_even_moment(n)
    raise UnsupportedError(f"no moment oracle for {law!r}; known: {MOMENT_ORACLES}")


def property_p_ratio(law: str, n_max: int, **params) -> list[float]:
    """``r_n = E[J^(2n)] / (n E[J^(2n-2)])`` for ``n = 1 .. n_max``."""
    if n_max < 1:
        raise ArgumentError("n_max must be at least 1")
    moments = [even_moment(law, n, **params) for n in range(n_max + 1)]
    return [float(moments[n] / (n * moments[n - 1])) for n in range(1, n_max + 1)]


def subordinator_ratio(law: str, n_max: int, *, intensity=1, shape=1, rate=1) -> list[float]:
    """``E[U^n] / E[U^(n-1)]`` of the time-change (or counting) variable itself."""
    if law == "poisson":
        m = [Fraction(touchard(n, Fraction(intensity))) for n in range(n_max + 1)]
    elif law == "gamma-subordinated":
        m = [gamma_moment(n, shape, rate) for n in range(n_max + 1)]
    else:
        raise UnsupportedError(f"no subordinator for {law!r}")
    return [float(m[n] / m[n - 1]) for n in range(1, n_max + 1)]


@dataclass(frozen=True)
class PropertyPVerdict:
    ratios: tuple
    increasing: bool
    bound: float
    verdict: str  # "bounded" or "unbounded"


def property_p_verdict(ratios: Sequence[float], bound=2.0) -> PropertyPVerdict:
    """Classify a ratio sequence: ``unbounded`` if strictly increasing past ``bound``."""
    r = np.asarray(ratios, dtype=float)
    increasing = bool(np.all(np.diff(r) > 0))
    verdict = "unbounded" if increasing and r[-1] > bound else "bounded"
    return PropertyPVerdict(tuple(r.tolist()), increasing, float(bound), verdict)
