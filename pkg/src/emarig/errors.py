class ParseError(ValueError):
    """Malformed input text. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)


class DegenerateError(ArithmeticError):
    """Geometry too degenerate for the requested numeric operation."""
