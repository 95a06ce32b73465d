"""Exception hierarchy shared by all modules."""


class MpsError(Exception):
    """Base class for every error raised by this package."""


class NotHermitian(MpsError):
    pass


class Indefinite(MpsError):
    pass


class RankDeficient(MpsError):
    pass


class NoConvergence(MpsError):
    pass


class DegenerateDominant(MpsError):
    pass


class SingularSystem(MpsError):
    pass


class DimensionMismatch(MpsError, ValueError):
    pass


class ZeroState(MpsError):
    pass


class SingularGauge(MpsError):
    pass


class CorruptFormat(MpsError):
    pass


class InvariantViolation(MpsError):
    pass


class UnknownOperator(MpsError, KeyError):
    pass


class NotUnitary(MpsError):
    pass


class EnergyMismatch(MpsError):
    pass


class TooLarge(MpsError):
    pass


class WindowTooSmall(MpsError):
    pass
