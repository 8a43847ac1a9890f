"""Exception hierarchy shared by every module in the package."""


class ProbCombError(Exception):
    """Base class for all errors raised by probcomb."""


class DuplicateAddress(ProbCombError):
    def __init__(self, address):
        super().__init__(f"address already recorded: {address!r}")
        self.address = address


class AddressCollision(ProbCombError):
    def __init__(self, address):
        super().__init__(f"traces share address {address!r}")
        self.address = address


class InvalidAddress(ProbCombError):
    pass


class InvalidValue(ProbCombError):
    pass


class InvalidParams(ProbCombError):
    pass


class OffSupport(ProbCombError):
    pass


class MissingLatent(ProbCombError):
    """A latent site was reached in score-only mode with no conditioning value."""

    def __init__(self, address):
        super().__init__(f"no conditioning value for latent {address!r} in score-only mode")
        self.address = address


class UnsupportedProposal(ProbCombError):
    pass


class AllWeightsZero(ProbCombError):
    def __init__(self, message="every log-weight is -inf", step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class NonFiniteGradient(ProbCombError):
    pass


class NumericalUnderflow(ProbCombError):
    pass


class InvalidGeometry(ProbCombError):
    pass


class ConfigError(ProbCombError):
    """Config validation failure; ``path`` is a JSON path like ``$.train.K``."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
