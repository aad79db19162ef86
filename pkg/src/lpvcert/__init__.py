"""LMI certificates for polytopic linear parameter-varying systems."""

from .conditions import (CONDITIONS, LMI_CONDITIONS, Certificate, build, case_study,
                         count_decision_vars, solve_condition)
from .gains import GainSchedule, gain_from_certificate
from .lmi import LmiProblem
from .lpv import PolytopicSystem, load_system, save_system, system_from_dict
from .report import BisectionResult, bisect_gamma, run_report
from .sdpfeas import FeasibilityOutcome, SolveOptions, solve_feasibility
from .verify import VerificationReport, check_vertex_certificate, lti_ground_truth, monte_carlo_descent

__version__ = "0.1.0"
