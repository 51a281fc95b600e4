"""Exception hierarchy for the simulator.

ConfigError maps to CLI exit code 2, every other SpadLinkError to exit
code 3.
"""


class SpadLinkError(Exception):
    """Base class for all simulator errors."""


class ConfigError(SpadLinkError):
    """Invalid configuration: bad file, unknown key, or violated precondition."""


class DomainError(SpadLinkError, ValueError):
    """Argument outside the physical or mathematical domain of an operation."""


class DegenerateSignalError(DomainError):
    """Signal has no usable structure (e.g. zero variance before clipping)."""


class FramingError(SpadLinkError):
    """Sequence lengths or boundaries inconsistent with the frame layout."""


class SyncError(SpadLinkError):
    """Preamble correlation peak too weak to establish timing."""


class DivergenceError(SpadLinkError):
    """Adaptive training produced non-finite updates."""


class FdeSingularityError(SpadLinkError):
    """Zero channel estimate on an active subcarrier."""
