"""Exception hierarchy shared by the library and the command line.

Every class carries a short ``category`` string; the CLI reports it as the
machine-readable error kind and maps it to an exit code.
"""


class EncDecError(Exception):
    category = "error"


class ShapeError(EncDecError, ValueError):
    category = "shape_mismatch"


class NonFiniteError(EncDecError, ValueError):
    category = "non_finite"


class DivergenceError(EncDecError, RuntimeError):
    """Raised when a gradient or parameter update stops being finite."""

    category = "divergence"

    def __init__(self, message, block=None, epoch=None, batch=None):
        self.detail = message
        self.block = block
        self.epoch = epoch
        self.batch = batch
        parts = [message]
        if block is not None:
            parts.append(f"block={block}")
        if epoch is not None:
            parts.append(f"epoch={epoch}")
        if batch is not None:
            parts.append(f"batch={batch}")
        super().__init__(" ".join(parts))


class CovarianceDegenerateError(EncDecError, ValueError):
    category = "covariance_degenerate"


class NoVarianceError(EncDecError, ValueError):
    category = "no_variance"


class DegenerateValidationError(EncDecError, ValueError):
    category = "degenerate_validation_set"


class DataFormatError(EncDecError, ValueError):
    category = "data_format"


class ConfigError(EncDecError, ValueError):
    category = "config_invalid"


class ArtifactMismatchError(EncDecError, ValueError):
    category = "artifact_mismatch"
