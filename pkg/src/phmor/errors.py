"""Exception hierarchy shared by all phmor modules."""


class PhMorError(Exception):
    """Base class; ``category`` is the machine-readable name used by the CLI."""

    category = "PhMorError"

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        cls.category = cls.__name__


class InputError(PhMorError, ValueError):
    pass


class InvalidSystem(InputError):
    """A matrix tuple violates the port-Hamiltonian structure conditions."""


class LengthMismatch(InputError):
    pass


class NotNormalized(PhMorError):
    pass


class SingularShift(PhMorError):
    """The shifted pencil is singular at the requested frequency."""


class IndexTooHigh(PhMorError):
    pass


class NoConvergence(PhMorError):
    pass


class NotStrictlyProper(PhMorError):
    pass


class EmptyGrid(InputError):
    pass


class NotPsd(PhMorError):
    pass


class DefectiveMatrix(PhMorError):
    """Eigenvalues are (numerically) repeated or not in the open left half-plane."""


class NotPositiveDefinite(PhMorError):
    pass


class UnstableA(PhMorError):
    pass


class OptimizerFailure(PhMorError):
    pass


class NonFiniteObjective(OptimizerFailure):
    pass
