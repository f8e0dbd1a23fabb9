"""Exception hierarchy shared by the workbench modules.

Every exception carries the process exit code a management command should
return when the exception escapes a pipeline: configuration problems exit
with 1, failed assumption gates with 2, numerical failures with 3.
"""


class WorkbenchError(Exception):
    exit_code = 3

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class ConfigError(WorkbenchError):
    exit_code = 1


class AssumptionFailure(WorkbenchError):
    exit_code = 2


class NumericalError(WorkbenchError):
    exit_code = 3


class NewtonDivergence(NumericalError):
    pass


class DegenerateCritical(NumericalError):
    pass


class NearCriticalMu(NumericalError):
    pass


class StepFailure(NumericalError):
    pass


class BudgetExceeded(NumericalError):
    pass


class ContinuationStall(NumericalError):
    pass


class FoldDegenerate(NumericalError):
    pass


class NotFound(NumericalError):
    pass


class NonRegularLambda(NumericalError):
    pass


class TangentialConnection(NumericalError):
    pass


class AmbiguousDecay(NumericalError):
    pass


class GraphInconsistency(NumericalError):
    pass


class TraceFailure(NumericalError):
    pass


class BijectionMismatch(NumericalError):
    pass


class NoExit(NumericalError):
    pass
