"""Forward-curve simulation for energy markets with additive mean-reverting dynamics."""
from .affine import AffineSpec, coefficients_from_affine, simulate_state
from .curve import ForwardModel, WeightFunction, explicit_forward_solution, simulate_forward_euler
from .drivers import LevyDriver, TimeGrid, sample_driver_path
from .engine import SimulationPlan, convergence_study, run
from .errors import HJMError
from .matfield import MatrixField, mat_exp, propagate
from .measure import GirsanovKernel, density_path, q_dynamics_check, verify_martingale
from .models import build_preset
from .stats import EnsembleStats

__version__ = "0.1.0"
