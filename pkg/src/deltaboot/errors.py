"""Exception hierarchy shared by all deltaboot modules."""


class DeltaBootError(Exception):
    """Base class for every structured error raised by the package."""


class ShapeError(DeltaBootError, ValueError):
    def __init__(self, message, layer=None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


class TrainingAborted(DeltaBootError, RuntimeError):
    def __init__(self, message, step=None, replicate=None):
        self.step = step
        self.replicate = replicate
        parts = []
        if replicate is not None:
            parts.append(f"replicate {replicate}")
        if step is not None:
            parts.append(f"step {step}")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class InsufficientReplicatesError(DeltaBootError, ValueError):
    pass


class NonConvergenceError(DeltaBootError, RuntimeError):
    """Lanczos stopped before all requested pairs met the residual tolerance.

    ``converged`` holds the :class:`~deltaboot.delta.EigenPairs` that did
    converge; ``residuals`` holds the residuals of every requested pair.
    """

    def __init__(self, message, converged=None, residuals=None):
        self.converged = converged
        self.residuals = residuals
        super().__init__(message)


class NotPositiveDefiniteError(DeltaBootError, ValueError):
    pass


class DenseCapError(DeltaBootError, ValueError):
    pass


class DegenerateRegressorError(DeltaBootError, ValueError):
    pass


class InsufficientDataError(DeltaBootError, ValueError):
    pass


class IdxFormatError(DeltaBootError, ValueError):
    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class CheckpointError(DeltaBootError, ValueError):
    pass


class ConfigError(DeltaBootError, ValueError):
    pass


class StageError(DeltaBootError, RuntimeError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
