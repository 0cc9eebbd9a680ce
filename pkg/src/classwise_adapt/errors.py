"""Exception types shared across the package."""


class CorruptSampleError(RuntimeError):
    """An on-disk sample violates the dataset contract (shape/label range)."""


class GenerationFailedError(RuntimeError):
    """Toy-scene generator exhausted its rejection budget."""


class HolesNotFilledError(ValueError):
    """Depth requested as network input while depth holes are present."""


class InvalidParamError(ValueError):
    """Augmentation parameter outside its documented domain."""


class NoValidDepthError(ValueError):
    """Inpainting requested on an image with no valid depth at all."""


class ConfigError(ValueError):
    """Network or run configuration is internally inconsistent."""


class ShapeError(ValueError):
    """Tensor shape incompatible with the requested operation."""


class InvalidDistributionError(ValueError):
    """A probability map does not sum to one per pixel."""


class EmptyLossError(RuntimeError):
    """Every pixel of a batch is ignored; caller should skip the batch."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"training diverged at iteration {iteration}")


class EmptyDomainBatchError(RuntimeError):
    """A domain's sample source is empty."""


class UndefinedMetricError(ValueError):
    """Metric requested on an empty confusion matrix."""


class InvalidPoseError(ValueError):
    """Pose matrix is not a rigid camera-to-world transform."""


class CheckpointError(RuntimeError):
    """Checkpoint file is malformed or does not match the target config."""
