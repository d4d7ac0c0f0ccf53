"""Small model factories shared by the test modules."""
import numpy as np

from energy_hjm.affine import AffineSpec, coefficients_from_affine
from energy_hjm.curve import ForwardModel
from energy_hjm.drivers import LevyDriver
from energy_hjm.matfield import CurveField, MatrixField


def scalar_forward(c=0.0, lam=1.0, sigma=0.0, psi=0.0, f0=0.0, driver=None, horizon=2.0,
                   sigma_field=None):
    driver = driver or LevyDriver.brownian(1)
    k = driver.k
    sig = sigma_field or CurveField.constant(np.full((1, k), sigma))
    return ForwardModel(CurveField.constant([c]), MatrixField.constant([[lam]], horizon), sig,
                        CurveField.constant(np.full((1, k), psi)),
                        lambda T: np.full(np.shape(T) + (1,), float(f0)), driver, horizon,
                        f0_T=lambda T: np.zeros(np.shape(T) + (1,)))


def scalar_ou_spec(Theta=-1.0, v=1.0, z=0.0, theta=0.0, x0=0.0, driver=None, horizon=2.0,
                   alpha=1.0, beta=0.0):
    driver = driver or LevyDriver.brownian(1)
    k = driver.k
    return AffineSpec(CurveField.constant([[alpha]]), CurveField.constant([beta]),
                      MatrixField.constant([theta], horizon),
                      MatrixField.constant([[Theta]], horizon),
                      MatrixField.constant(np.full((1, k), v), horizon),
                      MatrixField.constant(np.full((1, k), z), horizon),
                      [x0], driver, horizon)


def forward_of(spec, lam):
    return coefficients_from_affine(spec, MatrixField.constant(np.atleast_2d(lam), spec.horizon))
