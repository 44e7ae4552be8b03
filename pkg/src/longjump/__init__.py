"""Long-jump interacting particle systems on the discrete torus."""

__version__ = "0.1.0"

from ._backend import BACKEND, COMPILED_AVAILABLE
from .kernel import KernelSpec, LatticeKernel, build_kernel, fold_rates, time_scale
from .measures import Profile, RateFunction, ThermoFunctions, classify_rate
from .dynamics import ExclusionSim, ZeroRangeSim, exact_generator, empirical_field
from .coupling import TwoClassSim, ThreeColorSim, FourColorSim
from .tagged import EnvironmentSim, TaggedZeroRangeSim, empirical_cf, exact_cf_linear, limit_cf
from .pde import linear_solve, nonlinear_solve, fisher_information

__all__ = [
    "BACKEND", "COMPILED_AVAILABLE",
    "KernelSpec", "LatticeKernel", "build_kernel", "fold_rates", "time_scale",
    "Profile", "RateFunction", "ThermoFunctions", "classify_rate",
    "ExclusionSim", "ZeroRangeSim", "exact_generator", "empirical_field",
    "TwoClassSim", "ThreeColorSim", "FourColorSim",
    "EnvironmentSim", "TaggedZeroRangeSim", "empirical_cf", "exact_cf_linear", "limit_cf",
    "linear_solve", "nonlinear_solve", "fisher_information",
]
