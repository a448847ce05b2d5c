"""Exception hierarchy shared by every module."""


class LeyoloError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(LeyoloError, ValueError):
    """Tensor shapes do not agree. ``layer`` names the offending layer when known."""

    def __init__(self, message, layer=None):
        self.layer = layer
        if layer is not None:
            message = f"[{layer}] {message}"
        super().__init__(message)


class ConfigError(LeyoloError, ValueError):
    """An architecture or block configuration violates its invariants."""


class PreconditionError(LeyoloError, ValueError):
    """Caller-supplied input does not satisfy an operation's precondition."""


class BindError(LeyoloError):
    """Weights could not be bound to a spec.

    ``missing`` lists absent tensor names, ``mismatched`` lists
    ``(name, expected_shape, actual_shape)`` triples. Both are complete.
    """

    def __init__(self, missing, mismatched):
        self.missing = list(missing)
        self.mismatched = list(mismatched)
        lines = []
        for name in self.missing:
            lines.append(f"missing tensor {name!r}")
        for name, expected, actual in self.mismatched:
            lines.append(f"shape mismatch for {name!r}: expected {tuple(expected)}, got {tuple(actual)}")
        super().__init__(f"{len(lines)} weight problem(s):\n  " + "\n  ".join(lines))


class StoreFormatError(LeyoloError):
    """A weight-store file is malformed."""


class BadMagicError(StoreFormatError):
    pass


class TruncatedStoreError(StoreFormatError):
    pass


class DuplicateNameError(StoreFormatError):
    pass


class ImageFormatError(LeyoloError):
    """An image file is in an unsupported format."""
