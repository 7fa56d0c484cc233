from typing import Optional


class PriorRGError(Exception):
    """Base error carrying the process exit code for the CLI"""

    exit_code: int = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> str:
        return self.detail


class ConfigError(PriorRGError):
    exit_code = 2


class UsageError(PriorRGError):
    """Operation called with arguments that contradict its mode"""

    exit_code = 2


class DimensionError(PriorRGError):
    """Tensor extents incompatible with the requested operation"""

    exit_code = 2


class DataError(PriorRGError):
    exit_code = 3


class CheckpointLoadError(DataError):
    """Checkpoint missing, unreadable or built for another structure"""


class NumericError(PriorRGError):
    """NaN/Inf produced during a forward or backward pass"""

    exit_code = 4
