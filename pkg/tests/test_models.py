import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from energy_hjm.affine import compatibility_residual, curve_from_state, simulate_state
from energy_hjm.curve import WeightFunction
from energy_hjm.drivers import TimeGrid, sample_driver_path
from energy_hjm.errors import ModelError, SpecError
from energy_hjm.matfield import CurveField
from energy_hjm.measure import risk_neutral_spec
from energy_hjm.models import (CointegratedSpec, LuciaSchwartzSpec, Seasonality, build_cointegrated,
                               build_preset, cointegration_residual, risk_premium_forward,
                               risk_premium_mc, risk_premium_swap, risk_premium_swap_expanded,
                               solve_cointegration_system, stylized_fact_checks)
from helpers import scalar_forward
from oracles import integral_of, swap_average_of_exp_decay

# frozen from oracles.swap_average_of_exp_decay
GAMMA_0_1 = 0.6321205588285578
GAMMA_0_2 = 0.4323323583816936


@pytest.fixture(scope="module")
def ls():
    return build_preset("lucia-schwartz")


@pytest.fixture(scope="module")
def coint():
    return build_preset("cointegrated-2")


# Lucia-Schwartz


@pytest.mark.parametrize("name", ["lucia-schwartz", "lucia-schwartz-original", "cointegrated-2"])
def test_builders_are_certified_affine_models(name):
    b = build_preset(name)
    t, T = b.affine.sample_points()
    assert np.abs(compatibility_residual(b.affine, b.lam, t, T)).max() <= 1e-10


def test_flat_swap_loadings_match_closed_forms():
    sp = LuciaSchwartzSpec()
    T1, T2 = 0.5, 1.25
    k = sp.kappa
    expected = sp.sigma1 * (math.exp(-k * T1) - math.exp(-k * T2)) / (k * (T2 - T1))
    assert sp.gamma_coefficient(T1, T2) == pytest.approx(expected, rel=1e-14)
    assert sp.gamma_coefficient(T1, T2) == pytest.approx(
        swap_average_of_exp_decay(sp.sigma1, k, 0.0, T1, T2), rel=1e-12)
    assert sp.psi_coefficient(T1, T2) == pytest.approx(
        integral_of(lambda T: float(sp.v2(T)), T1, T2) / (T2 - T1), rel=1e-12)


def test_swap_model_loadings_match_swap_vol(ls):
    from energy_hjm.curve import aggregate_swap_coefficients
    T1, T2 = 1.0, 1.5
    swap = aggregate_swap_coefficients(ls.forward, WeightFunction.flat(), T1, T2)
    for t in (0.0, 0.4, 0.9):
        np.testing.assert_allclose(swap.Sigma(t)[0], ls.spec.swap_vol(t, T1, T2), rtol=1e-9)


def test_spot_expectation_under_q_is_seasonality(ls):
    q = risk_neutral_spec(ls.kernel, ls.affine)
    grid = TimeGrid.from_step(1.0, 1 / 365)
    path = sample_driver_path(q.driver, grid, 31, count=100_000)
    X = simulate_state(q, path, record=[grid.steps])
    S = curve_from_state(q, [1.0], X, [1.0])[0, :, 0, 0]
    se = S.std(ddof=1) / math.sqrt(S.size)
    assert abs(S.mean() - ls.spec.s(1.0)) <= 3 * se


def test_ls_kernel_removes_mean_reversion(ls):
    sp = ls.spec
    t = np.linspace(0.0, 2.0, 9)
    gamma1 = ls.affine.Theta(t) + np.einsum("sij,sjk->sik", ls.affine.v(t), ls.kernel.phi1(t))
    np.testing.assert_allclose(gamma1[:, 0, 0], -sp.kappa, rtol=1e-14)
    np.testing.assert_allclose(gamma1[:, 1, 1], sp.v2.derivative(t) / sp.v2(t), atol=1e-14)
    assert np.all(ls.kernel.phi0(t) == 0.0)


@pytest.mark.parametrize("kwargs, word", [
    (dict(kappa=0.0), "kappa"),
    (dict(sigma1=-1.0), "sigma1"),
    (dict(v2=Seasonality(1.0, (2.0,), (0.0,))), "v2"),
    (dict(original=True, v2=Seasonality(4.0, (0.5,), (0.0,))), "constant"),
    (dict(lam=lambda t: np.where(t < 1.0, 0.5, np.inf)), "lam"),
])
def test_ls_spec_violations_are_named(kwargs, word):
    with pytest.raises(SpecError, match=word):
        LuciaSchwartzSpec(**kwargs)


def test_one_factor_collapse_is_rejected():
    # v2 = exp(-kappa t) has v2'/v2 = -kappa; a truncated series cannot be exactly that,
    # so patch the check through a seasonality stand-in
    class Decay(Seasonality):
        def __call__(self, T):
            return np.exp(-2.0 * np.asarray(T, dtype=float))

        def derivative(self, T):
            return -2.0 * np.exp(-2.0 * np.asarray(T, dtype=float))

    with pytest.raises(SpecError, match="one factor"):
        LuciaSchwartzSpec(kappa=2.0, v2=Decay(1.0))


# stylized facts


def test_gamma_values_for_unit_rate():
    sp = LuciaSchwartzSpec(kappa=1.0, sigma1=1.0)
    assert sp.gamma_coefficient(0.0, 1.0) == pytest.approx(0.632121, abs=1e-6)
    assert sp.gamma_coefficient(0.0, 2.0) == pytest.approx(0.432332, abs=1e-6)
    assert sp.gamma_coefficient(0.0, 1.0) == pytest.approx(GAMMA_0_1, rel=1e-14)
    assert sp.gamma_coefficient(0.0, 2.0) == pytest.approx(GAMMA_0_2, rel=1e-14)
    assert swap_average_of_exp_decay(1, 1, 0, 0, 2) == pytest.approx(GAMMA_0_2, abs=1e-15)


@pytest.mark.parametrize("kappa", [0.5, 1.0, 2.0])
def test_stylized_facts_hold(kappa):
    rep = stylized_fact_checks(LuciaSchwartzSpec(kappa=kappa))
    assert rep.samuelson is True and rep.delivery is True and rep.passed
    assert np.all(np.diff(rep.gammas) < 0)


def test_samuelson_between_two_dates():
    sp = LuciaSchwartzSpec(kappa=1.0, sigma1=1.0)
    assert np.linalg.norm(sp.swap_vol(0.5, 1.0, 2.0)) > np.linalg.norm(sp.swap_vol(0.0, 1.0, 2.0))


def test_vanishing_rate_is_flat():
    sp = LuciaSchwartzSpec(kappa=1e-11, sigma1=2.0)
    assert sp.gamma_coefficient(1.0, 3.0) == pytest.approx(2.0, rel=1e-9)
    with pytest.raises(SpecError, match="one factor"):
        LuciaSchwartzSpec(kappa=1e-13, v2=Seasonality(1.0))
    rep = stylized_fact_checks(sp)
    assert rep.delivery == "flat" and rep.samuelson == "flat"
    assert not rep.passed


# cointegrated market


def test_cointegration_accept_case():
    lam = np.array([[1.0, 1.0], [2.0, 2.0]])
    assert cointegration_residual(1.0, 2.0, lam) == 0.0
    M, res = solve_cointegration_system(1.0, 2.0, lam, 2.0, 2.0)
    assert res <= 1e-10
    assert M[0, 0] == pytest.approx(3.0, abs=1e-12)
    b = build_cointegrated(CointegratedSpec(a1=1.0, a2=2.0, lam=lam))
    assert b.affine.Theta(0.0)[0, 0] == pytest.approx(-3.0)


def test_cointegration_reject_case():
    lam = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert abs(cointegration_residual(1.0, 1.0, lam)) == 1.0
    with pytest.raises(ModelError, match="no delivery-independent"):
        CointegratedSpec(a1=1.0, a2=1.0, lam=lam)


def test_distinct_reversion_rates_are_unrepresentable():
    names = {f.name for f in dataclasses.fields(CointegratedSpec)}
    assert "mu" in names and not {"mu1", "mu2"} & names
    lam = np.array([[1.0, 1.0], [2.0, 2.0]])
    _, res = solve_cointegration_system(1.0, 2.0, lam, 1.0, 2.0)
    assert res > 1e-3


@st.composite
def loadings_and_lam(draw):
    a1 = draw(st.floats(0.2, 3.0)) * draw(st.sampled_from([1, -1]))
    a2 = draw(st.floats(0.2, 3.0)) * draw(st.sampled_from([1, -1]))
    l11, l12, l22 = (draw(st.floats(-2.0, 2.0)) for _ in range(3))
    if draw(st.booleans()):
        l21 = (a2 / a1) * (l11 + (a2 / a1) * l12 - l22)
    else:
        l21 = draw(st.floats(-2.0, 2.0))
    return a1, a2, np.array([[l11, l12], [l21, l22]])


@given(loadings_and_lam())
def test_acceptance_is_characterized_by_the_residual(sample):
    a1, a2, lam = sample
    res = abs(cointegration_residual(a1, a2, lam))
    try:
        CointegratedSpec(a1=a1, a2=a2, lam=lam)
        accepted = True
    except ModelError:
        accepted = False
    assert accepted == (res <= 1e-10)


def test_common_trend_cancels_pathwise(coint):
    spec, sp = coint.affine, coint.spec
    grid = TimeGrid.from_step(1.0, 1 / 100)
    path = sample_driver_path(spec.driver, grid, 3, count=200)
    X = simulate_state(spec, path)
    t = grid.times
    for s in range(0, grid.steps + 1, 25):
        S = curve_from_state(spec, [t[s]], X[s:s + 1], [t[s]])[0, :, 0, :]
        spread = S[:, 1] / sp.a2 - S[:, 0] / sp.a1 - (sp.s2(t[s]) / sp.a2 - sp.s1(t[s]) / sp.a1)
        Y = X[s, :, 2] / sp.a2 - X[s, :, 1] / sp.a1
        assert np.max(np.abs(spread - Y)) <= 1e-12 * max(1.0, np.abs(S).max())


def test_cointegrated_spec_errors():
    with pytest.raises(SpecError):
        CointegratedSpec(a1=0.0)
    with pytest.raises(SpecError):
        CointegratedSpec(mu=-1.0)
    with pytest.raises(SpecError):
        CointegratedSpec(sigma1=0.0)


def test_unknown_preset():
    with pytest.raises(SpecError, match="unknown model preset"):
        build_preset("three-factor")


# risk premia


def test_zero_reversion_zero_drift_gives_zero_premium():
    model = scalar_forward(c=0.0, lam=0.0)
    rp = risk_premium_forward(model, np.array([10.0]), 0.25, 1.5)
    assert np.all(rp == 0.0)
    rpF = risk_premium_swap(model, WeightFunction.flat(), 0.25, 1.0, 1.5,
                            lambda T: np.full(np.shape(T) + (1,), 10.0))
    assert np.all(rpF == 0.0)


def test_zero_reversion_premium_is_minus_drift_integral():
    model = scalar_forward(c=0.7, lam=0.0)
    assert risk_premium_forward(model, np.array([3.0]), 0.5, 1.5)[0] == pytest.approx(-0.7, rel=1e-12)


def test_unit_reversion_premium():
    model = scalar_forward(c=0.0, lam=1.0, sigma=1.0, f0=10.0)
    rp = risk_premium_forward(model, np.array([10.0]), 0.0, 1.0)[0]
    assert rp == pytest.approx(6.32121, abs=5e-6)
    assert rp == pytest.approx(10 * (1 - math.exp(-1)), rel=1e-12)
    mean, se = risk_premium_mc(model, [10.0], 0.0, 1.0, n_paths=100_000, seed=5)
    assert abs(mean[0] - rp) <= 3 * se[0]


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_closed_form_matches_monte_carlo(lam):
    model = scalar_forward(c=1.2, lam=lam, sigma=0.8, f0=4.0)
    rp = risk_premium_forward(model, np.array([4.0]), 0.5, 1.5)[0]
    mean, se = risk_premium_mc(model, [4.0], 0.5, 1.5, n_paths=100_000, seed=11)
    assert abs(mean[0] - rp) <= 3 * se[0]


def test_premium_changes_sign_with_the_snapshot():
    model = scalar_forward(c=2.0, lam=1.0)
    high = risk_premium_forward(model, np.array([10.0]), 0.0, 1.0)[0]
    low = risk_premium_forward(model, np.array([1.0]), 0.0, 1.0)[0]
    assert high > 0 > low
    # the sign is stochastic: across paths the snapshot straddles the threshold 2
    snaps = np.array([[0.5], [1.5], [2.5], [3.5]])
    signs = np.sign(risk_premium_forward(model, snaps, 0.0, 1.0)[:, 0])
    assert list(signs) == [-1, -1, 1, 1]


def test_swap_premium_of_constant_forward_premium():
    c = CurveField(lambda t, T: (0.9 / T)[:, None], (1,))
    base = scalar_forward(lam=0.0)
    model = dataclasses.replace(base, c=c)
    rpF = risk_premium_swap(model, WeightFunction.flat(), 0.0, 1.0, 1.5,
                            lambda T: np.full(np.shape(T) + (1,), 2.0))
    assert rpF[0] == pytest.approx(-0.9, rel=1e-12)


def test_swap_premium_two_routes_agree_on_ls(ls):
    model = ls.forward
    for w in (WeightFunction.flat(), WeightFunction.discounted(0.05)):
        a = risk_premium_swap(model, w, 0.25, 1.0, 1.5, model.initial)
        b = risk_premium_swap_expanded(model, w, 0.25, 1.0, 1.5, model.initial)
        assert abs(a[0] - b[0]) <= 1e-8
