from __future__ import annotations


class RandCountError(ValueError):
    """Base error. ``code`` is a stable machine-readable identifier."""

    code = "error"

    def __init__(self, message: str, *, code: str | None = None, index=None):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.index = index


class SpecError(RandCountError):
    code = "invalid_spec"


class NoConvergence(RandCountError):
    code = "no_convergence"


class CountingError(RandCountError):
    code = "counting_error"


class SeriesError(RandCountError):
    code = "series_error"


class ConfigError(RandCountError):
    code = "config_error"

    def __init__(self, message: str, *, code: str | None = None, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message, code=code)
        self.key = key
