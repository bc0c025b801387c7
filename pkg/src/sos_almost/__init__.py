"""Sum-of-squares approximations of nonnegative polynomials and moment lower bounds."""

__version__ = "0.1.0"

from .poly import Polynomial, basis, evaluate, l1_norm, parse, perturbation_series
from .moment import MomentSequence, build_moment_matrix, lin_functional, moments_from_atoms
from .relaxation import RelaxationConfig, build_primal, feasible_start
from .sdp import SdpSolution, solve
from .certificate import SosCertificate, find_r_eps, verify
from .convex_kkt import ConvexProgram, build_representation, verify_representation

__all__ = [
    "Polynomial", "basis", "evaluate", "l1_norm", "parse", "perturbation_series",
    "MomentSequence", "build_moment_matrix", "lin_functional", "moments_from_atoms",
    "RelaxationConfig", "build_primal", "feasible_start", "SdpSolution", "solve",
    "SosCertificate", "find_r_eps", "verify", "ConvexProgram", "build_representation",
    "verify_representation",
]
