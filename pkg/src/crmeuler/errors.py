"""Exception hierarchy shared by all modules."""


class CRMError(Exception):
    """Base class for errors raised by crmeuler."""


class CoincidentPoints(CRMError, ValueError):
    pass


class OutsideDomain(CRMError, ValueError):
    pass


class InvalidTruncation(CRMError, ValueError):
    pass


class EmptyInput(CRMError, ValueError):
    pass


class OverlappingSets(CRMError, ValueError):
    pass


class DomainMismatch(CRMError, ValueError):
    pass


class RankTooHigh(CRMError, ValueError):
    pass


class NonSymmetricKernel(CRMError, ValueError):
    pass


class NotPureAtomic(CRMError, ValueError):
    pass


class OutOfRange(CRMError, ValueError):
    pass


class NumericalError(CRMError, RuntimeError):
    """Base for failures of the numerics (collapse, non-convergence)."""


class NearCollapse(NumericalError):
    def __init__(self, pair, separation):
        self.pair = tuple(int(i) for i in pair)
        self.separation = float(separation)
        super().__init__(f"vortices {self.pair} at separation {self.separation:.3e}")


class CollapseDetected(NumericalError):
    def __init__(self, time, pair, separation):
        self.time = float(time)
        self.pair = tuple(int(i) for i in pair)
        self.separation = float(separation)
        super().__init__(
            f"collapse at t={self.time:.6g}: vortices {self.pair} "
            f"at separation {self.separation:.3e}"
        )
