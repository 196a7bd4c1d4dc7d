"""Exception and warning types raised across the package."""


class MdpConfError(Exception):
    """Base class for all package errors."""


class ValidationError(MdpConfError, ValueError):
    """An input matrix, vector or config failed validation."""


class ReducibleChain(MdpConfError):
    """The positive-entry graph of a transition matrix is not strongly connected."""


class UnreachableObservation(MdpConfError):
    def __init__(self, j):
        self.index = int(j)
        super().__init__(f"observation {self.index} has zero probability (C^T pi)_{self.index} = 0")


class Underdetermined(MdpConfError):
    """The two-state conic system carries no information (all coefficients vanish)."""


class NoConsistentSolution(MdpConfError):
    """No candidate survives intersection across actions."""


class InconsistentObservation(MdpConfError):
    """An observation has zero likelihood under every weighted support point."""


class IdentifiabilityError(MdpConfError):
    """The identifiability condition failed and the caller asked to abort."""


class NoConvergence(MdpConfError):
    """No optimizer start produced a usable minimum."""


class PeriodicChainWarning(UserWarning):
    pass


class RenormalizedWarning(UserWarning):
    pass


class IdentifiabilityWarning(UserWarning):
    pass
