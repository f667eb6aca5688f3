"""Exception hierarchy.

Every error carries a short machine-readable ``category`` that the CLI
reports alongside a nonzero exit status.
"""


class IomriError(Exception):
    category = "error"


class InvalidInputError(IomriError, ValueError):
    category = "invalid-input"


class InvalidArgumentError(IomriError, ValueError):
    category = "invalid-argument"


class InfeasibleTargetError(IomriError, ValueError):
    category = "infeasible-target"


class ConvergenceError(IomriError, RuntimeError):
    category = "convergence"


class InvalidMaskError(IomriError, ValueError):
    category = "invalid-mask"


class ModelShapeError(IomriError, ValueError):
    category = "model-shape"


class NumericalFailureError(IomriError, FloatingPointError):
    category = "numerical-failure"

    def __init__(self, message, example_id=None, checkpoint=None):
        super().__init__(message)
        self.example_id = example_id
        self.checkpoint = checkpoint


class DynamicRangeError(IomriError, ValueError):
    category = "invalid-dynamic-range"


class NoForegroundError(IomriError, ValueError):
    category = "no-foreground"


class DegenerateFitError(IomriError, ValueError):
    category = "degenerate-fit"


class DegenerateTestError(IomriError, ValueError):
    category = "degenerate-test"


class JoinError(IomriError, KeyError):
    category = "join"


class CorruptFileError(IomriError, IOError):
    category = "corrupt-file"


class VersionError(IomriError, ValueError):
    category = "version"


class MissingModelError(IomriError, FileNotFoundError):
    category = "missing-model"


class MissingFileError(IomriError, FileNotFoundError):
    category = "missing-file"


class FormatError(IomriError, ValueError):
    category = "format"


class UsageError(IomriError, ValueError):
    category = "usage"


class OutputExistsError(IomriError, FileExistsError):
    category = "output-exists"
