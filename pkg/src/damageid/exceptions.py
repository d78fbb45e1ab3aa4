"""Exception hierarchy for damageid."""


class DamageIDError(Exception):
    """Base class for all errors raised by damageid."""


class InvalidDefinitionError(DamageIDError, ValueError):
    """A model definition violates its invariants."""


class AssemblyError(DamageIDError):
    """The constrained stiffness matrix is singular or a bar is degenerate."""


class NonPhysicalStiffnessError(DamageIDError, ValueError):
    """A stiffness variation coefficient would make an element stiffness non-positive."""


class EigenSolverError(DamageIDError):
    pass


class DegenerateModeError(DamageIDError):
    """Eigenvector derivatives are undefined for repeated eigenvalues."""


class ModeMatchError(DamageIDError):
    """A measured mode has no model mode with sufficient MAC."""


class DivergenceError(DamageIDError):
    """An iterative solver produced a non-finite iterate."""


class CovarianceError(DamageIDError):
    pass


class GridError(DamageIDError, ValueError):
    """The regularization grid cannot be built (e.g. an all-zero Jacobian)."""
