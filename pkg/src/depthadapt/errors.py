"""Exception types raised across the package."""


class DepthAdaptError(Exception):
    """Base class for all package errors."""


class ConfigError(DepthAdaptError, ValueError):
    pass


class DatasetError(DepthAdaptError):
    """Raised when manifest rows point at files that cannot be loaded.

    ``problems`` holds one ``(path, reason)`` tuple per failing item so the
    caller can report all of them at once.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"{path}: {reason}" for path, reason in self.problems]
        super().__init__("failed to load dataset items:\n  " + "\n  ".join(lines))


class ShapeError(DepthAdaptError, ValueError):
    pass


class PairingError(DepthAdaptError, ValueError):
    """Encoder/decoder architecture descriptors do not match."""


class ProviderError(DepthAdaptError):
    pass


class EvaluationError(DepthAdaptError, ValueError):
    pass


class AdaptationError(DepthAdaptError, RuntimeError):
    def __init__(self, message, step=None, breakdown=None):
        self.step = step
        self.breakdown = breakdown
        super().__init__(message)


class RegistryError(DepthAdaptError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""
