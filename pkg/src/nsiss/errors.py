""" Exceptions raised by nsiss. All of them are ValueErrors, except IoError. """


class NsissError(Exception):
    """ Base class of every nsiss error. """


class NegativeArgument(NsissError, ValueError):
    pass


class OutOfRange(NsissError, ValueError):
    pass


class NotInvertible(NsissError, ValueError):
    pass


class TagMismatch(NsissError, ValueError):
    pass


class NonPositiveIntegrand(NsissError, ValueError):
    pass


class EmptyGrid(NsissError, ValueError):
    pass


class SmallGainViolated(NsissError, ValueError):
    pass


class ConstructionFailed(NsissError, ValueError):
    """ The σ interpolant could not be made to satisfy both strict inequalities. """


class NoRegionContains(NsissError, ValueError):
    """ A point lies in no region of a partition (covering violated beyond tolerance). """


class NoCrossingFound(NsissError, ValueError):
    pass


class DegenerateNormal(NsissError, ValueError):
    pass


class StepSizeUnderflow(NsissError, ValueError):
    """ Chattering below the event resolution of the simulator. """


class DimensionMismatch(NsissError, ValueError):
    pass


class PartitionMismatch(NsissError, ValueError):
    pass


class RatioUnbounded(NsissError, ValueError):
    pass


class NotSymmetric(NsissError, ValueError):
    pass


class UnverifiedDesign(NsissError, ValueError):
    pass


class ParameterOrder(NsissError, ValueError):
    pass


class SchemaError(NsissError, ValueError):
    pass


class UnsupportedForm(NsissError, ValueError):
    pass


class IoError(NsissError, OSError):
    pass
