"""Exception types shared across the package."""


class ProbekitError(Exception):
    """Base class for errors raised by this package."""


class FormatError(ProbekitError):
    """A file does not conform to one of the binary or JSON container formats."""


class ConfigError(ProbekitError):
    """Run configuration failed validation.

    ``diagnostics`` holds one human-readable message per offending field.
    """

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class ConvergenceError(ProbekitError):
    """A solver hit its iteration budget before reaching its tolerance."""
