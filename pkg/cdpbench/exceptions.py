"""
Error types shared by every app. Management commands turn these into
CommandError so the process exits nonzero with the failing stage named.
"""


class CDPError(Exception):
    """Base class for workbench errors"""


class ParameterError(CDPError, ValueError):
    """A parameter lies outside its documented domain"""


class FormatError(CDPError):
    """A file on disk cannot be decoded into the expected artifact"""


class ManifestError(FormatError):
    """A dataset manifest is malformed or references missing files"""


class DimensionError(CDPError, ValueError):
    """Array shapes or resolutions are incompatible"""


class TrainingError(CDPError):
    """Estimator training diverged"""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class SolverError(CDPError):
    """The SVM dual solver hit its iteration cap"""


class ProtocolError(CDPError):
    """Not enough samples for the requested evaluation protocol"""


class StageError(CDPError):
    """A pipeline stage is missing the outputs of an earlier stage"""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage
