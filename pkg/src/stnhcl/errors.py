"""Exception taxonomy shared across the package.

Callers can catch ``StnhclError`` to handle any package-raised failure;
the subclasses distinguish bad operand extents, bad configuration,
violated call contracts, and malformed serialized artifacts.
Out-of-bounds indices raise the builtin ``IndexError`` and file-system
problems surface as ``OSError``.
"""


class StnhclError(Exception):
    """Base class for package-specific failures."""


class ShapeError(StnhclError, ValueError):
    """Operand extents are incompatible with the requested operation."""


class ConfigError(StnhclError, ValueError):
    """A configuration value or combination of values is invalid."""


class ContractError(StnhclError, ValueError):
    """A documented call precondition was violated."""


class FormatError(StnhclError, ValueError):
    """A serialized artifact (checkpoint, image file, manifest) is malformed."""
