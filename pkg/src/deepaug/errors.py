"""Exception hierarchy shared by every module."""


class DeepAugError(Exception):
    """Base class for all toolkit errors."""


class ContractError(DeepAugError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes " + " and ".join(str(s) for s in self.shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class LayerIndexError(DeepAugError, IndexError):
    """Layer insertion point outside [-1, L-1]."""


class DegenerateInputError(ContractError):
    """Input carries no variance (or is otherwise degenerate) for the requested metric."""


class FormatError(DeepAugError, ValueError):
    """A binary file does not follow its declared layout."""


class TruncationError(FormatError):
    """A binary file ended before its declared payload."""


class VersionError(FormatError):
    """A binary file declares an unsupported format version."""


class InitError(DeepAugError, ValueError):
    """An initialization checkpoint does not fit the configured architecture."""


class ConfigError(DeepAugError, ValueError):
    """A configuration key is unknown or its value is out of range."""
