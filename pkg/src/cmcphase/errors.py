"""Exception hierarchy shared by all workbench modules."""


class WorkbenchError(Exception):
    """Base class for every error raised by the package."""


class ConfigInvalid(WorkbenchError):
    pass


class NumericalFailure(WorkbenchError):
    """Base class for failures that map to CLI exit code 3."""


class InvalidParameter(WorkbenchError, ValueError):
    pass


class NonConvergence(NumericalFailure):
    pass


class StencilOutOfDomain(WorkbenchError, ValueError):
    pass


class MissingTauDerivatives(WorkbenchError):
    pass


class ProjectionNotUnique(NumericalFailure):
    pass


class NewtonDiverged(NumericalFailure):
    def __init__(self, message, last_residual=None):
        super().__init__(message)
        self.last_residual = last_residual


class BoxTooSmall(NumericalFailure):
    pass


class SingularSystem(NumericalFailure):
    pass


class NoRoot(NumericalFailure):
    pass


class OutsideTube(WorkbenchError, ValueError):
    pass


class GhostLayerMissing(WorkbenchError, ValueError):
    pass


class NotOrthogonal(WorkbenchError, ValueError):
    pass


class IllConditioned(NumericalFailure):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class SingularMatrix(NumericalFailure):
    pass


class NoContraction(NumericalFailure):
    def __init__(self, message, factor=None, last_iterate=None):
        super().__init__(message)
        self.factor = factor
        self.last_iterate = last_iterate


class ParallelEnds(WorkbenchError, ValueError):
    pass


class PerturbationTooLarge(WorkbenchError, ValueError):
    pass
