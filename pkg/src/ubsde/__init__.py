"""Numerical solvers for uncertain backward SDEs driven by a Brownian motion and a canonical process."""
from .calculus import (BUILTIN_G, IntegrandPair, MultiplicationTable, SmoothFunction,
                       apply_product_rule, ito_liu_integral, ito_liu_residual)
from .condexp import (CondexpEstimate, Projector, RegressionBasis, fit_conditional_expectation,
                      represent_martingale)
from .drivers import (DRIVER_PRESETS, TERMINAL_PRESETS, Driver, TerminalCondition, driver_preset,
                      invert_h, probe_lipschitz)
from .errors import (ConfigurationError, ContractViolation, DegradedBasisWarning, InvalidValueError,
                     NoiseFloorWarning, NumericalFailure, ProbeWarning, UBSDEError)
from .hybrid import (AlphaGrid, Estimate, HybridEnsemble, TimeGrid, UncertainRandomField,
                     chimera_expectation, conditional_on_brownian_filtration, uncertain_expectation)
from .processes import PathBundle, gen_brownian, gen_canonical, simulate
from .solver import (ContractionReport, SolutionPair, SolverConfig, m2_distance, solve_general,
                     solve_simple, solve_xy_driver, solve_y_driver, verify_contraction)

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_G",
    "IntegrandPair",
    "MultiplicationTable",
    "SmoothFunction",
    "apply_product_rule",
    "ito_liu_integral",
    "ito_liu_residual",
    "CondexpEstimate",
    "Projector",
    "RegressionBasis",
    "fit_conditional_expectation",
    "represent_martingale",
    "DRIVER_PRESETS",
    "TERMINAL_PRESETS",
    "Driver",
    "TerminalCondition",
    "driver_preset",
    "invert_h",
    "probe_lipschitz",
    "ConfigurationError",
    "ContractViolation",
    "DegradedBasisWarning",
    "InvalidValueError",
    "NoiseFloorWarning",
    "NumericalFailure",
    "ProbeWarning",
    "UBSDEError",
    "AlphaGrid",
    "Estimate",
    "HybridEnsemble",
    "TimeGrid",
    "UncertainRandomField",
    "chimera_expectation",
    "conditional_on_brownian_filtration",
    "uncertain_expectation",
    "PathBundle",
    "gen_brownian",
    "gen_canonical",
    "simulate",
    "ContractionReport",
    "SolutionPair",
    "SolverConfig",
    "m2_distance",
    "solve_general",
    "solve_simple",
    "solve_xy_driver",
    "solve_y_driver",
    "verify_contraction",
]
