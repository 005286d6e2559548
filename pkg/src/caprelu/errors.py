"""
Exception hierarchy for the capped-ReLU toolkit.

Library code raises these; the CLI turns them into exit codes.
"""


class CapReluError(Exception):
    """Base class for every error raised by this package"""


class ShapeError(CapReluError, ValueError):
    """Array shapes or layer dimensions do not agree"""


class ActivationError(CapReluError, ValueError):
    """Invalid activation kind or parameter, or a cap applied to the wrong layer"""


class CheckpointError(CapReluError):
    """Checkpoint file is corrupt, truncated or of an unsupported version"""


class DatasetError(CapReluError):
    """IDX file missing, malformed or inconsistent"""


class ConfigError(CapReluError, ValueError):
    """Experiment or attack configuration violates its invariants"""


class ReportError(CapReluError):
    """Report rows are incomplete or duplicated"""
