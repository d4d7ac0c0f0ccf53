"""Independent reference computations used to freeze expected values.

Nothing here imports the package under test.
"""
import math

import numpy as np
import sympy
from scipy import integrate, linalg


def taylor_exp(A, terms=30):
    A = np.asarray(A, dtype=float)
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


def scipy_expm(A):
    return linalg.expm(np.asarray(A, dtype=float))


def bell_by_stirling(n):
    return int(sum(sympy.functions.combinatorial.numbers.stirling(n, k) for k in range(n + 1)))


def gaussian_moment_by_quadrature(p):
    val, _ = integrate.quad(lambda x: x ** p * math.exp(-x * x / 2) / math.sqrt(2 * math.pi),
                            -np.inf, np.inf)
    return val


def integral_of(func, a, b):
    return integrate.quad(func, a, b, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def heun_linear_ode(c, lam, f0, t, dt):
    """Fine-step Heun solution of f' = c - lam f."""
    f = f0
    for _ in range(int(round(t / dt))):
        k1 = c - lam * f
        k2 = c - lam * (f + dt * k1)
        f += 0.5 * dt * (k1 + k2)
    return f


def euler_linear_ode(c, lam, f0, t, dt):
    f = f0
    for _ in range(int(round(t / dt))):
        f += dt * (c - lam * f)
    return f


def swap_average_of_exp_decay(sigma1, kappa, t, T1, T2):
    """(1/(T2-T1)) int sigma1 exp(-kappa (T - t)) dT by adaptive quadrature."""
    return integral_of(lambda T: sigma1 * math.exp(-kappa * (T - t)), T1, T2) / (T2 - T1)


def poisson_raw_moment(p, rate=1.0, cutoff=200):
    """E[N^p] for N ~ Poisson(rate), summed directly."""
    total = sympy.Rational(0)
    r = sympy.Rational(rate)
    for j in range(cutoff):
        total += sympy.Integer(j) ** p * r ** j / sympy.factorial(j)
    return float(total * sympy.exp(-r))
