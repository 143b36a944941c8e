class ParseError(ValueError):
    """Malformed input record. ``line`` is 1-based."""

    def __init__(self, message: str, line: int, path: str | None = None):
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.path = path


class EmptyRippleError(ValueError):
    """Seed entities have no outgoing links, so not even hop 1 can be filled."""
