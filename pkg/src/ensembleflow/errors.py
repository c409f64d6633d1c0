"""Exception types shared across the package."""


class EnsembleFlowError(Exception):
    """Base class for all package-specific errors."""


class ParseError(EnsembleFlowError):
    """A flow-spec, run-config, or criterion file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)


class InvalidFlow(EnsembleFlowError):
    """A flow failed validation; carries the full violation report."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(
            "invalid flow: " + "; ".join(str(v) for v in self.violations)
        )


class UnsatisfiableInput(EnsembleFlowError):
    """A task's input window cannot be covered by upstream outputs."""


class CoverageGap(EnsembleFlowError):
    """A required input window is not fully covered by available data."""


class EmptySample(EnsembleFlowError):
    """Sampling produced zero instances for a task that needs some."""


class ModelFailure(EnsembleFlowError):
    """A model function raised, or broke its output contract."""


class Divergence(EnsembleFlowError):
    """An integrator could not keep its state admissible."""


class UnknownParent(EnsembleFlowError):
    """An appended instance references a parent not in the graph."""


class DuplicateId(EnsembleFlowError):
    """An appended instance reuses an existing id."""


class UnknownInstance(EnsembleFlowError):
    """An operation referenced an instance id not in the graph."""


class UnknownVariable(EnsembleFlowError):
    """An operation referenced a model output variable that does not exist."""


class CorruptLog(EnsembleFlowError):
    """A run log record is truncated or malformed."""


class TooLarge(EnsembleFlowError):
    """The graph exceeds the exact-enumeration size limit."""


class InconsistentInput(EnsembleFlowError):
    """A predicate was called on a set violating its precondition."""


class RunExists(EnsembleFlowError):
    """A run directory with this id already exists."""
