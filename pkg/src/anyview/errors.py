"""Exception taxonomy shared by all modules.

Input problems raise subclasses of :class:`InputError`; computations that
cannot produce a meaningful answer raise subclasses of
:class:`DegenerateComputation`. The CLI maps these onto exit codes.
"""


class AnyviewError(Exception):
    """Base class for all package errors."""


class InputError(AnyviewError):
    """Malformed or inconsistent input (shapes, files, configs)."""


class DegenerateComputation(AnyviewError):
    """Input is well-formed but the requested quantity is undefined on it."""


class ShapeMismatch(InputError):
    pass


class ShapeTooSmall(InputError):
    pass


class InvalidConfig(InputError):
    pass


class LengthMismatch(InputError):
    pass


class EmptyInput(InputError):
    pass


class DegenerateInput(DegenerateComputation):
    pass


class NoValidPairs(DegenerateComputation):
    pass


class TooFewViews(DegenerateComputation):
    pass


class EmptyTarget(DegenerateComputation):
    pass


class EmptyCloud(DegenerateComputation):
    pass


class HeadDegenerate(DegenerateComputation):
    """Camera head produced a rank-deficient 9D rotation encoding."""


class NonSmoothPoint(DegenerateComputation):
    """Loss gradient requested at a kink; caller should re-sample."""


class NoIntersection(DegenerateComputation):
    """A synthetic camera sees none of the scene surface."""


class ContainerError(InputError):
    """Base class for tensor-container format violations."""


class BadMagic(ContainerError):
    pass


class BadVersion(ContainerError):
    pass


class CorruptHeader(ContainerError):
    pass


class BoundsViolation(ContainerError):
    pass
