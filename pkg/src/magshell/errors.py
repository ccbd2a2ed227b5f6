"""Exception hierarchy shared by the numerical modules and the CLI."""


class MagshellError(Exception):
    pass


class ConfigError(MagshellError, ValueError):
    """Invalid or unknown configuration key."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class NumericalError(MagshellError, ArithmeticError):
    """A computation left its domain of validity (CLI exit code 3)."""


class DomainError(NumericalError, ValueError):
    pass


class NonInvertibleError(NumericalError):
    pass


class ProjectionError(NumericalError):
    """Closest-rotation projection undefined (rigidity hypothesis violated)."""


class IntegrationError(NumericalError):
    pass
