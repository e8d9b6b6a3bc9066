"""Exception taxonomy.

Every error carries a short machine-parsable ``category`` string; the CLI
prints failures as ``error:<category>: <message>`` and exits nonzero.
"""


class DoaBeamError(Exception):
    """Base class for all toolkit errors."""

    category = "error"


class ShapeError(DoaBeamError):
    """Operand shapes are incompatible for the requested operation."""

    category = "shape"


class ValidationError(DoaBeamError):
    """An input value violates a documented precondition."""

    category = "validation"


class NotHermitianError(ValidationError):
    """Matrix expected to be Hermitian is not, within tolerance."""

    category = "not-hermitian"


class SingularMatrixError(DoaBeamError):
    """Matrix is singular where an inverse-like solve is required."""

    category = "singular"


class ConvergenceError(DoaBeamError):
    """An iterative kernel failed to converge within its budget."""

    category = "convergence"


class InfeasibleError(DoaBeamError):
    """Constraint system exceeds the available degrees of freedom."""

    category = "infeasible"


class FormatError(DoaBeamError):
    """A binary file has a bad magic tag or unsupported version."""

    category = "format"


class TruncatedError(FormatError):
    """A binary file ends before its declared payload does."""

    category = "truncated"


class ChecksumError(FormatError):
    """A binary file's trailing CRC32 does not match its payload."""

    category = "checksum"


class ConfigError(DoaBeamError):
    """A run configuration fails schema validation."""

    category = "config"


class PaddingError(ValidationError):
    """Snapshot count does not match the model's trained length."""

    category = "padding"


class TrainingError(DoaBeamError):
    """Training aborted (non-finite loss or inconsistent dataset)."""

    category = "training"


class GradCheckError(DoaBeamError):
    """Gradient check could not run (e.g. non-deterministic closure)."""

    category = "grad-check"
