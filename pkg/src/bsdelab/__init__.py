"""Generalized backward equations on binomial lattices, their reflected and
penalized variants, stopping-problem oracles and a property-check suite."""
from .errors import (EnumerationTooLargeError, InvalidInputError, NonConvergenceError,
                     RepresentationError, SchemeInfeasibleError)
from .gbsde import GbsdeSolution, solve_backward, solve_linear_closed_form, solve_picard_global
from .lattice import (LatticeModel, MartingaleM, NodeId, Structure, build_lattice,
                      conditional_expectation, standard_walk_martingale)
from .limits import (GameSpec, LadderKind, PenalizationReport, TerminalMode, brute_force_dynkin,
                     brute_force_optimal_stop, constrained_snell, dynkin_value,
                     enumerate_stopping_rules, ladder_gbsde, ladder_reflected_down,
                     ladder_reflected_up, snell_of_gamma)
from .processes import AdaptedProcess, Driver, Generator, StoppingRule
from .rgbsde import RgbsdeSolution, solve_reflected
from .verify import PropertyConfig, PropertyReport, run_checks

__version__ = "0.1.0"
