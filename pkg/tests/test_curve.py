import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from energy_hjm.curve import (FORWARD_HEADER, WeightFunction, aggregate_swap_coefficients,
                              euler_forward_step, explicit_forward_solution, read_csv,
                              simulate_forward_euler, simulate_swap_euler, spot_path,
                              swap_from_forwards, swap_from_samples, write_forward_csv)
from energy_hjm.drivers import LevyDriver, TimeGrid, TwoPoint, sample_driver_path
from energy_hjm.errors import ArgumentError, ModelError, UnsupportedError
from energy_hjm.matfield import CurveField
from energy_hjm.models import build_preset
from helpers import scalar_forward
from oracles import heun_linear_ode, swap_average_of_exp_decay

# frozen oracle values
E_INV = 0.36787944117144233            # exp(-1)
GAMMA_0_1 = 0.6321205588285578         # swap_average_of_exp_decay(1, 1, 0, 0, 1)
HEUN_C2 = 1.2642411176448627           # heun_linear_ode(2, 1, 0, 1, 1e-5)


def _one_path(model, stop, dt, seed=0, count=1):
    return sample_driver_path(model.driver, TimeGrid.from_step(stop, dt), seed, count=count)


# explicit solution


def test_pure_decay():
    model = scalar_forward(lam=1.0, f0=10.0)
    f = explicit_forward_solution(model, _one_path(model, 1.0, 0.01), [1.0])[-1, 0, 0, 0]
    assert f == pytest.approx(3.678794, abs=1e-6)
    assert f == pytest.approx(10 * E_INV, rel=1e-12)


def test_constant_drift_against_fine_oracle():
    model = scalar_forward(c=2.0, lam=1.0, f0=0.0)
    f = explicit_forward_solution(model, _one_path(model, 1.0, 0.01), [1.0])[-1, 0, 0, 0]
    assert f == pytest.approx(1.264241, abs=1e-6)
    assert abs(f - HEUN_C2) <= 1e-6
    assert heun_linear_ode(2.0, 1.0, 0.0, 1.0, 1e-5) == pytest.approx(HEUN_C2, abs=1e-15)


def test_explicit_mean_is_deterministic_part():
    driver = LevyDriver((1.0, 3.0), (TwoPoint(0.5, 0.0, 0.0), TwoPoint(0.3, 0.5, -0.2)))
    model = scalar_forward(c=1.5, lam=0.7, sigma=0.4, psi=0.6, f0=5.0, driver=driver)
    path = _one_path(model, 1.0, 0.02, seed=8, count=100_000)
    f = explicit_forward_solution(model, path, [1.5], record=[path.grid.steps])[0, :, 0, 0]
    target = 5.0 * math.exp(-0.7) + 1.5 / 0.7 * (1 - math.exp(-0.7))
    se = f.std(ddof=1) / math.sqrt(f.size)
    assert abs(f.mean() - target) <= 3 * se


def test_explicit_rejects_maturity_beyond_horizon():
    model = scalar_forward(horizon=1.0)
    with pytest.raises(ArgumentError):
        explicit_forward_solution(model, _one_path(model, 1.0, 0.1), [1.5])


# Euler


def test_drift_only_step():
    model = scalar_forward(lam=0.8)
    f = np.array([[[2.0], [3.0]]])
    out = euler_forward_step(model, f, 0.0, 0.1, np.zeros((1, 1)), np.zeros((1, 1)),
                             np.array([1.0, 2.0]))
    np.testing.assert_allclose(out, (1 - 0.08) * f, rtol=1e-15)


def test_brownian_forward_variance():
    model = scalar_forward(lam=0.0, sigma=1.0, f0=1.0)
    path = _one_path(model, 1.0, 0.05, seed=4, count=100_000)
    f = simulate_forward_euler(model, path, [2.0], record=[path.grid.steps])[0, :, 0, 0]
    assert abs(f.var() - 1.0) <= 0.05


def test_euler_freezes_maturities_once_reached():
    model = scalar_forward(c=1.0, lam=0.0, f0=0.0)
    path = _one_path(model, 1.0, 0.25)
    f = simulate_forward_euler(model, path, [0.5, 1.0])
    np.testing.assert_allclose(f[-1, 0, :, 0], [0.5, 1.0], rtol=1e-14)


# swaps


def test_swap_vol_of_exponential_loading():
    kappa = 1.0
    sig = CurveField(lambda t, T: np.exp(-kappa * (T - t))[:, None, None], (1, 1))
    model = scalar_forward(lam=0.0, sigma_field=sig)
    swap = aggregate_swap_coefficients(model, WeightFunction.flat(), 0.0, 1.0)
    value = swap.Sigma(0.0)[0, 0]
    assert value == pytest.approx(0.632121, abs=1e-6)
    assert value == pytest.approx(GAMMA_0_1, abs=1e-12)
    assert swap_average_of_exp_decay(1, 1, 0, 0, 1) == pytest.approx(GAMMA_0_1, abs=1e-15)


def test_constant_and_time_only_coefficients_are_preserved():
    sig = CurveField(lambda t, T: (1 + t)[:, None, None], (1, 1))
    model = scalar_forward(c=3.0, lam=0.5, sigma_field=sig)
    swap = aggregate_swap_coefficients(model, WeightFunction.discounted(0.05), 0.5, 1.5)
    assert swap.C(0.3)[0] == pytest.approx(3.0, rel=1e-13)
    assert swap.Sigma(0.3)[0, 0] == pytest.approx(1.3, rel=1e-13)
    assert swap.lam is model.lam


def test_non_commuting_weight_is_rejected():
    from energy_hjm.matfield import MatrixField
    n = 2
    lam = MatrixField.constant([[1.0, 0.5], [0.0, 2.0]], 2.0)
    base = scalar_forward()
    model = type(base)(CurveField.constant([0.0, 0.0]), lam, CurveField.constant(np.zeros((2, 1))),
                       CurveField.constant(np.zeros((2, 1))), lambda T: np.zeros(np.shape(T) + (2,)),
                       base.driver, 2.0)
    W = np.diag([0.5, 1.5])
    w = WeightFunction("custom", func=lambda T, T1, T2: np.broadcast_to(W / (T2 - T1), T.shape + (n, n)))
    with pytest.raises(ModelError):
        aggregate_swap_coefficients(model, w, 0.5, 1.5)


def test_swap_of_constant_and_linear_curves():
    flat = WeightFunction.flat()
    assert swap_from_forwards(lambda T: np.full(T.shape, 7.0), flat, 0.2, 0.9)[0] == pytest.approx(7.0)
    assert swap_from_forwards(lambda T: T, flat, 0.0, 1.0)[0] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ArgumentError):
        swap_from_forwards(lambda T: T, flat, 1.0, 1.0)


@given(st.floats(0.0, 0.3), st.floats(0.0, 5.0), st.floats(0.01, 3.0))
def test_weight_normalization(rate, T1, length):
    for w in (WeightFunction.flat(), WeightFunction.discounted(rate)):
        assert w.normalization_error(T1, T1 + length, n=2) <= 1e-8


def test_swap_sde_matches_quadrature_of_forwards():
    bundle = build_preset("lucia-schwartz")
    model, w = bundle.forward, bundle.weight
    T1, T2 = 1.0, 1.25
    path = _one_path(model, T1, 1e-3, seed=1, count=20)
    Ts = np.linspace(T1, T2, 65)
    f = simulate_forward_euler(model, path, Ts, record=[path.grid.steps])[0]
    F_quad = swap_from_samples(f, T1, T2, w)
    F_sde = simulate_swap_euler(aggregate_swap_coefficients(model, w, T1, T2), path,
                                record=[path.grid.steps])[0]
    assert np.max(np.abs(F_sde - F_quad) / np.abs(F_quad)) <= 2e-3


# spot


def test_spot_with_maturity_independent_coefficients_is_ou():
    model = scalar_forward(c=1.0, lam=2.0, sigma=0.5, f0=3.0)
    path = _one_path(model, 1.0, 0.01, seed=3, count=5)
    sp = spot_path(model, path)
    assert np.all(sp.zeta == 0.0)
    S = np.full((5, 1), 3.0)
    for i in range(path.grid.steps):
        S = S + (1.0 - 2.0 * S) * 0.01 + 0.5 * path.dW[i]
    np.testing.assert_allclose(sp.S[-1], S, rtol=1e-12)


def test_spot_matches_diagonal_of_forward_curve():
    bundle = build_preset("lucia-schwartz")
    model = bundle.forward
    path = _one_path(model, 1.0, 1e-3, seed=6, count=8)
    sp = spot_path(model, path)
    steps = np.arange(0, path.grid.steps + 1, 100)
    diag = np.stack([explicit_forward_solution(model, path, [path.grid.times[s]], record=[s])[0, :, 0]
                     for s in steps])
    rel = np.abs(sp.S[steps] - diag) / np.abs(diag)
    assert rel.max() <= 5e-3


def test_zeta_has_zero_mean():
    sig = CurveField(lambda t, T: np.exp(-(T - t))[:, None, None], (1, 1),
                     d_dT=lambda t, T: -np.exp(-(T - t))[:, None, None])
    model = scalar_forward(lam=0.0, sigma_field=sig, horizon=1.0)
    path = _one_path(model, 1.0, 0.02, seed=12, count=10_000)
    z = spot_path(model, path, fd_step=None).zeta[-1, :, 0]
    assert abs(z.mean()) <= 3 * z.std(ddof=1) / math.sqrt(z.size)


def test_spot_requires_derivatives_without_fallback():
    sig = CurveField(lambda t, T: np.exp(-(T - t))[:, None, None], (1, 1))
    model = scalar_forward(lam=0.0, sigma_field=sig, horizon=1.0)
    with pytest.raises(UnsupportedError):
        spot_path(model, _one_path(model, 1.0, 0.1), fd_step=None)


# CSV


def test_csv_round_trip_is_bit_faithful():
    rng = np.random.default_rng(1)
    rows = [(float(t), float(T), c, float(v)) for t, T, c, v in
            zip(rng.random(20), rng.random(20), rng.integers(0, 3, 20), rng.standard_normal(20) * 1e3)]
    buf = io.StringIO()
    write_forward_csv(buf, rows)
    header, back = read_csv(buf.getvalue())
    assert header == FORWARD_HEADER
    assert back == rows
