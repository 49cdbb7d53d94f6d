"""Exception hierarchy. The CLI maps each family to an exit code."""


class DentexError(Exception):
    exit_code = 1


class ParseError(DentexError):
    """Malformed input document. ``location`` names where parsing failed."""

    exit_code = 2

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class IntegrityError(DentexError):
    exit_code = 2


class RangeError(DentexError, ValueError):
    exit_code = 2


class ConfigError(DentexError):
    exit_code = 3


class CapacityError(DentexError):
    exit_code = 3
