"""Exception hierarchy shared by every stage of the pipeline."""


class HapticManipError(Exception):
    """Base class for all package errors."""


class ConfigError(HapticManipError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class DomainError(HapticManipError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ResetExhausted(HapticManipError):
    """No valid grasp found within the reset budget."""


class StepOnDroppedState(HapticManipError, ValueError):
    """A dropped state cannot be stepped."""


class InsufficientEpisodes(HapticManipError):
    """Not enough episodes to honour a split policy."""


class VersionMismatch(HapticManipError):
    """Dataset or model container written by an incompatible format version."""


class MalformedRow(HapticManipError):
    """A dataset row (or the manifest/row-count pairing) failed validation."""

    def __init__(self, message, row=None, path=None):
        self.row = row
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class EmptyData(HapticManipError, ValueError):
    """Training called with no samples."""


class NonFiniteLoss(HapticManipError, FloatingPointError):
    """Training diverged."""

    def __init__(self, epoch):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}")


class DimensionMismatch(HapticManipError, ValueError):
    """Input shape does not match the model."""


class CorruptModel(HapticManipError):
    """Model container could not be decoded."""


class SpecMismatch(HapticManipError):
    """Model container parameters disagree with its declared spec."""


class EmptyHoldout(HapticManipError, ValueError):
    """Critic training called without holdout records."""


class MissingDataset(HapticManipError, FileNotFoundError):
    """A required dataset is not available."""


class PlanTimeout(HapticManipError):
    """Open-loop planning hit its step cap; ``plan`` holds the partial action sequence."""

    def __init__(self, message, plan=None):
        self.plan = plan
        super().__init__(message)
