"""Exception hierarchy shared by all modules."""


class Sps2Error(Exception):
    """Base class. ``stage`` is filled in by the pipeline when re-raising."""

    stage = None
    exit_code = 3

    def __init__(self, message, **info):
        super().__init__(message)
        self.info = info


class StructuralError(Sps2Error, ValueError):
    """Mismatched truncations, arcs, grids or shapes."""

    exit_code = 2


class GenericityError(Sps2Error):
    """Coincident eigenvalues of the classical residue."""


class ResonanceError(Sps2Error):
    """The eigenvalue difference is not strictly ordered on the arc."""


class HypothesisError(Sps2Error):
    """Input violates a hypothesis of a construction (e.g. b0(0) = 0)."""


class ConvergenceError(Sps2Error):
    """A working disc had to shrink below the allowed fraction."""


class DivergenceError(Sps2Error):
    """Successive approximations did not settle within the term budget."""


class DomainError(Sps2Error):
    """Laplace integral requested outside its convergence domain."""


class PoleOnRayError(Sps2Error):
    """A Pade denominator vanishes on the integration ray."""


class StiffnessError(Sps2Error):
    """Step-size underflow in the fixed-epsilon integrator."""


class ValidationError(Sps2Error):
    """A post-condition residual exceeded its tolerance."""

    exit_code = 1


class ParseError(Sps2Error):
    """Malformed system-spec file; ``pointer`` is a JSON pointer."""

    exit_code = 2

    def __init__(self, message, pointer="", **info):
        super().__init__(f"{pointer or '/'}: {message}", pointer=pointer, **info)
        self.pointer = pointer
