"""Model-free projected policy gradient for structured static output-feedback LQR.

Modules:

- :mod:`pgp_lqr.matlin`    matrix exponentials, Lyapunov solves, symmetric vectorisation
- :mod:`pgp_lqr.system`    plants, exact simulation, system generator and file format
- :mod:`pgp_lqr.analytic`  exact cost / gradient oracle and sublevel-set constants
- :mod:`pgp_lqr.zeroth`    zeroth-order gradient estimation
- :mod:`pgp_lqr.baseline`  value identification and the baseline-corrected estimator
- :mod:`pgp_lqr.optimize`  constraint sets and projected gradient iterations
- :mod:`pgp_lqr.cli`       the ``pgp-lqr`` command line
"""
from .analytic import constants, exact_cost, exact_gradient, gradient_mapping
from .baseline import estimate_gradient_vr, identify_value_model
from .optimize import PSD, Full, OptimizerConfig, Pattern, reference_pattern, pgp_run
from .system import Plant, SystemParams, load_system, random_phl_system, save_system
from .zeroth import EstimatorConfig, estimate_gradient

__all__ = ["constants", "exact_cost", "exact_gradient", "gradient_mapping",
           "estimate_gradient_vr", "identify_value_model", "PSD", "Full", "OptimizerConfig",
           "Pattern", "reference_pattern", "pgp_run", "Plant", "SystemParams", "load_system",
           "random_phl_system", "save_system", "EstimatorConfig", "estimate_gradient"]

__version__ = "0.1.0"
