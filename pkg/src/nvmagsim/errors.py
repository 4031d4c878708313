class ConfigError(ValueError):
    """Invalid run configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line else ""
        super().__init__(f"{message}{where}")


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or was ill-posed."""


class FitError(NumericalError):
    pass


class CalibrationError(ValueError):
    pass
