"""Exception types shared across the package."""


class DegenerateMaskError(ValueError):
    """The mask has no non-hole pixel, so distances are undefined."""


class NoReferenceError(RuntimeError):
    """Reference sampling produced no usable reference frame."""


class NoValidReferenceError(RuntimeError):
    """Every reference cell is masked out; there is nothing to match against."""


class RecursionCapError(RuntimeError):
    """The fill loop exceeded its recursion cap; this indicates a bug."""


class NonFiniteLossError(ArithmeticError):
    """A loss component became NaN or infinite."""


class SynthesisError(RuntimeError):
    """Training sample synthesis failed (e.g. masks kept covering the frame)."""
