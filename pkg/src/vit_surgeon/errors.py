"""Exception taxonomy shared across the engine.

The CLI maps these onto exit codes: DataError and subclasses -> 2,
ModelError and SurgeryError -> 3 (usage problems exit 1).
"""


class DataError(Exception):
    """A file, format, or dataset problem."""


class FormatError(DataError):
    """Malformed container or header bytes."""


class TruncationError(DataError):
    """A payload ended before its declared size."""


class UnsupportedError(DataError):
    """A feature the format allows but this engine does not implement."""


class ModelError(Exception):
    """A checkpoint or model-configuration problem."""


class SurgeryError(Exception):
    """Surgery resolution failed (detection, fusion width, entropy collapse)."""
