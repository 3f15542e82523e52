class FedMixError(Exception):
    """Base class for all errors raised by fedmix."""


class InputError(FedMixError, ValueError):
    """Invalid argument: wrong shape, label outside its domain, empty input."""


class ConvergenceError(FedMixError, RuntimeError):
    """An iterative solver hit its iteration cap.

    ``grad_norm`` carries the gradient norm at the last iterate.
    """

    def __init__(self, message, grad_norm):
        super().__init__(message)
        self.grad_norm = grad_norm


class ContractViolation(FedMixError, RuntimeError):
    """A surrogate objective broke one of its declared guarantees."""


class DatasetLoadError(InputError):
    """A federation directory is missing a file or holds a corrupt one."""


class ConfigError(InputError):
    """Malformed run configuration."""
