"""Resummation and normal forms for singularly perturbed 2x2 systems at a regular singularity.

The systems have the form ``eps x dpsi/dx + A(x, eps) psi = 0``.
"""
from .errors import (ConvergenceError, DivergenceError, DomainError, GenericityError,
                     HypothesisError, ParseError, PoleOnRayError, ResonanceError,
                     Sps2Error, StiffnessError, StructuralError, ValidationError)
from .series_core import ArcSpec, EpsExpansion, XSeries, fit_gevrey
from .matrix_system import (ClassicalData, GaugeTransform, SpectralData, SystemSpec,
                            apply_gauge, classical_data, pre_diagonalise)
from .formal_solver import (FormalNormalForm, RiccatiProblem, fit_coefficient_bounds,
                            formal_normal_form, majorant_sequence, solve_formal_normal_form,
                            solve_formal_riccati)
from .borel_laplace import (BorelFunction, RegularSolution, borel_pade_sum, formal_borel,
                            laplace, resum_riccati, solve_borel_ode, solve_strip_pde,
                            straighten)
from .levelt import (LeveltFrame, TriangularSystem, coupling_c12, levelt_filtration,
                     solution_basis, triangularise)
from .verify import (OdeTrace, appendix_estimates_suite, integrate_fixed_eps,
                     random_polynomial_system, rearrangement_suite)

__version__ = "0.1.0"
