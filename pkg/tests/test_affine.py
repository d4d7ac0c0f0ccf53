import math

import numpy as np
import pytest

from energy_hjm.affine import (AffineSpec, GammaPair, affine_from_coefficients,
                               coefficients_from_affine, compatibility_residual,
                               curve_from_state, simulate_state, solve_alpha_beta)
from energy_hjm.curve import explicit_forward_solution, simulate_forward_euler
from energy_hjm.drivers import LevyDriver, TimeGrid, sample_driver_path
from energy_hjm.errors import IncompatibilityError
from energy_hjm.matfield import CurveField, MatrixField
from energy_hjm.models import LuciaSchwartzSpec, build_preset
from helpers import forward_of, scalar_ou_spec


@pytest.fixture(scope="module")
def ls():
    return build_preset("lucia-schwartz")


@pytest.fixture(scope="module")
def ls_original():
    return build_preset("lucia-schwartz-original")


@pytest.fixture(scope="module")
def coint():
    return build_preset("cointegrated-2")


# state simulation


def test_frozen_state():
    spec = scalar_ou_spec(Theta=0.0, v=0.0, x0=1.7)
    path = sample_driver_path(spec.driver, TimeGrid.from_step(1.0, 0.1), 0, count=4)
    X = simulate_state(spec, path)
    assert np.all(X == 1.7)


def test_ou_stationary_variance():
    spec = scalar_ou_spec(Theta=-1.0, v=1.0, horizon=5.0)
    path = sample_driver_path(spec.driver, TimeGrid.from_step(5.0, 0.01), 13, count=100_000)
    for scheme in ("euler", "exact"):
        X5 = simulate_state(spec, path, scheme, record=[path.grid.steps])[0, :, 0]
        assert abs(X5.var() - 0.5) <= 0.05 * 0.5


def test_exact_and_euler_gap_halves():
    bundle = build_preset("lucia-schwartz")
    spec = bundle.affine
    fine = sample_driver_path(spec.driver, TimeGrid.from_step(1.0, 1 / 256), 2, count=2000)
    gaps = []
    for factor in (8, 4, 2):
        path = fine.coarsen(factor)
        last = [path.grid.steps]
        gap = simulate_state(spec, path, "euler", last) - simulate_state(spec, path, "exact", last)
        gaps.append(math.sqrt((gap ** 2).sum(-1).mean()))
    ratios = [a / b for a, b in zip(gaps, gaps[1:])]
    assert all(1.6 <= r <= 2.5 for r in ratios), ratios


# curve_from_state


def test_zero_loading_returns_beta():
    spec = scalar_ou_spec(alpha=0.0, beta=4.2)
    f = curve_from_state(spec, [0.1, 0.5], np.random.default_rng(0).standard_normal((2, 3, 1)), [1.0])
    assert np.all(f == 4.2)


def test_ls_curve_map(ls):
    X = np.array([[[0.3, -0.4]]])
    t, T = 0.25, 1.5
    spec = ls.affine
    f = curve_from_state(spec, [t], X, [T])[0, 0, 0, 0]
    v2, s, kappa = ls.spec.v2, ls.spec.s, ls.spec.kappa
    expected = math.exp(-kappa * (T - t)) * 0.3 + v2(T) / v2(t) * -0.4 + s(T)
    assert f == pytest.approx(expected, rel=1e-14)


def test_affine_arithmetic():
    driver = LevyDriver.brownian(2)
    spec = AffineSpec(CurveField.constant([[0.5, 1.0]]), CurveField.constant([3.0]),
                      MatrixField.constant(np.zeros(2), 1.0), MatrixField.constant(np.zeros((2, 2)), 1.0),
                      MatrixField.constant(np.zeros((2, 2)), 1.0), MatrixField.constant(np.zeros((2, 2)), 1.0),
                      [0.0, 0.0], driver, 1.0)
    assert curve_from_state(spec, [0.0], np.array([[[1.0, 2.0]]]), [0.5])[0, 0, 0, 0] == 5.5


# coefficient maps


@pytest.mark.parametrize("name", ["lucia-schwartz", "lucia-schwartz-original", "cointegrated-2"])
def test_presets_are_compatible(name):
    bundle = build_preset(name)
    t, T = bundle.affine.sample_points()
    assert np.abs(compatibility_residual(bundle.affine, bundle.lam, t, T)).max() <= 1e-10


def test_ls_curve_coefficients(ls):
    t = np.array([0.0, 0.3, 1.0])
    T = np.array([0.5, 1.2, 2.0])
    sp = ls.spec
    sig = ls.forward.sigma(t, T)
    np.testing.assert_allclose(sig[:, 0, 0], sp.sigma1 * np.exp(-sp.kappa * (T - t)), rtol=1e-14)
    np.testing.assert_allclose(sig[:, 0, 1], sp.v2(T), rtol=1e-14)
    np.testing.assert_allclose(ls.forward.c(t, T)[:, 0], sp.lam * sp.s(T), rtol=1e-13)


def test_time_constant_loading_without_reversion():
    spec = AffineSpec(CurveField.constant([[2.0]]),
                      CurveField(lambda t, T: (t * T)[:, None], (1,)),
                      MatrixField.constant([0.7], 1.0), MatrixField.constant([[0.0]], 1.0),
                      MatrixField.constant([[0.0]], 1.0), MatrixField.constant([[0.0]], 1.0),
                      [0.0], LevyDriver.brownian(1), 1.0)
    model = forward_of(spec, 0.0)
    t, T = np.array([0.2, 0.5]), np.array([0.6, 0.9])
    np.testing.assert_allclose(model.c(t, T)[:, 0], T + 2.0 * 0.7, rtol=1e-8)


def test_wrong_reversion_is_incompatible(ls):
    wrong = MatrixField(lambda t: ls.lam(t) + 0.1, (1, 1), ls.horizon)
    with pytest.raises(IncompatibilityError) as info:
        coefficients_from_affine(ls.affine, wrong)
    t, T = ls.affine.sample_points()
    expected = 0.1 * np.abs(ls.affine.alpha(t, T)).max()
    assert info.value.max_residual == pytest.approx(expected, rel=1e-6)
    t0, T0 = info.value.location
    assert 0.0 <= t0 <= T0 <= ls.horizon


@pytest.mark.parametrize("name", ["lucia-schwartz", "cointegrated-2"])
def test_round_trip_of_coefficients(name):
    bundle = build_preset(name)
    spec = bundle.affine
    implied = affine_from_coefficients(bundle.forward, spec.alpha, spec.beta)
    a = spec.alpha(implied.t, implied.T)
    np.testing.assert_allclose(implied.theta_tilde,
                               np.einsum("sij,sj->si", a, spec.theta(implied.t)), atol=1e-10)
    np.testing.assert_allclose(implied.Theta_tilde,
                               np.einsum("sij,sjk->sik", a, spec.Theta(implied.t)), atol=1e-10)
    assert implied.residuals["v"] <= 1e-10


def test_no_drift_gives_zero_theta_tilde():
    spec = scalar_ou_spec(Theta=0.0, v=0.3)
    model = forward_of(spec, 0.0)
    implied = affine_from_coefficients(model, spec.alpha, spec.beta)
    assert np.abs(implied.theta_tilde).max() == 0.0


def test_ls_implied_state_reversion(ls):
    implied = affine_from_coefficients(ls.forward, ls.affine.alpha, ls.affine.beta)
    t = implied.t
    sp = ls.spec
    Theta = np.zeros((t.size, 2, 2))
    Theta[:, 0, 0] = -sp.kappa - sp.lam
    Theta[:, 1, 1] = sp.v2.derivative(t) / sp.v2(t) - sp.lam
    a = ls.affine.alpha(t, implied.T)
    np.testing.assert_allclose(implied.Theta_tilde, np.einsum("sij,sjk->sik", a, Theta), atol=1e-10)


# loading ODEs


def test_alpha_ode_reproduces_exponential_loading():
    kappa = 1.3
    gamma = GammaPair(MatrixField.constant(np.zeros(2), 2.0),
                      MatrixField.constant(np.diag([-kappa, 0.0]), 2.0))
    sol = solve_alpha_beta(gamma, lambda T: np.array([[1.0, 1.0]]), lambda T: np.array([0.0]),
                           [0.5, 2.0])
    for T in (0.5, 2.0):
        t, A, B = sol.at(T)
        exact = np.stack([np.exp(-kappa * (T - t)), np.ones_like(t)], -1)
        assert np.abs(A[:, 0, :] - exact).max() <= 1e-9
        assert np.all(B == 0.0)


def test_beta_ode_with_drift():
    mu, kappa = 0.8, 2.0
    gamma = GammaPair(MatrixField.constant([0.0, mu], 2.0),
                      MatrixField.constant(np.diag([-kappa, 0.0]), 2.0))
    s = LuciaSchwartzSpec().s
    sol = solve_alpha_beta(gamma, lambda T: np.array([[1.0, 1.0]]), lambda T: np.array([s(T)]),
                           [1.5])
    t, A, B = sol.at(1.5)
    np.testing.assert_allclose(B[:, 0], s(1.5) + mu * (1.5 - t), atol=1e-9)


def test_ls_original_loadings(ls_original):
    sp = ls_original.spec
    t, T = np.array([0.0, 0.4]), np.array([1.0, 1.9])
    np.testing.assert_allclose(ls_original.affine.beta(t, T)[:, 0], sp.s(T) + sp.mu * (T - t))


# pathwise consistency


@pytest.mark.parametrize("name", ["lucia-schwartz", "cointegrated-2"])
def test_state_map_matches_direct_forward_simulation(name):
    bundle = build_preset(name)
    spec, model = bundle.affine, bundle.forward
    path = sample_driver_path(spec.driver, TimeGrid.from_step(1.0, 1e-3), 5, count=16)
    Ts = np.linspace(1.0, 2.0, 16)
    rec = np.arange(0, path.grid.steps + 1, 50)
    X = simulate_state(spec, path, record=rec)
    mapped = curve_from_state(spec, path.grid.times[rec], X, Ts)
    direct = simulate_forward_euler(model, path, Ts, record=rec)
    assert np.max(np.abs(mapped - direct) / np.abs(direct)) <= 2e-3


def test_curve_depends_on_path_only_through_state(ls):
    spec = ls.affine
    grid = TimeGrid.from_step(0.5, 0.01)
    a = simulate_state(spec, sample_driver_path(spec.driver, grid, 1, count=3))
    b = simulate_state(spec, sample_driver_path(spec.driver, grid, 2, count=3))
    spliced = b.copy()
    spliced[-1] = a[-1]
    fa = curve_from_state(spec, [0.5], a[-1:], [1.0, 2.0])
    fb = curve_from_state(spec, [0.5], spliced[-1:], [1.0, 2.0])
    assert np.array_equal(fa, fb)
    assert not np.array_equal(a[:-1], spliced[:-1])


def test_loadings_are_bounded(ls, coint):
    for bundle in (ls, coint):
        norms = bundle.affine.sup_norms()
        assert len(norms) == 2 and all(np.isfinite(v) for v in norms)


def test_forward_explicit_agrees_with_state_map_when_exact(ls):
    spec, model = ls.affine, ls.forward
    path = sample_driver_path(spec.driver, TimeGrid.from_step(1.0, 1 / 64), 3, count=50)
    X = simulate_state(spec, path, "exact", record=[path.grid.steps])
    mapped = curve_from_state(spec, [1.0], X, [1.5])[0]
    direct = explicit_forward_solution(model, path, [1.5], record=[path.grid.steps])[0]
    assert np.max(np.abs(mapped - direct) / np.abs(direct)) <= 2e-3
