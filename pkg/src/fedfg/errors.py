"""Exception hierarchy shared by every fedfg module."""


class FedFGError(Exception):
    pass


class InvalidInputError(FedFGError, ValueError):
    """An argument violates an operation's precondition."""


class LayoutMismatchError(InvalidInputError):
    """Two parameter vectors (or a vector and a spec) disagree on layout."""


class NumericError(FedFGError, ArithmeticError):
    """Non-finite values reached a computation that cannot handle them."""


class ConfigError(FedFGError, ValueError):
    """A run configuration or preset is invalid."""


class EmptyBenignSetError(FedFGError):
    """Every client was filtered in a round; robust aggregation is undefined."""


class PrivacyViolation(FedFGError):
    """A private extractor segment crossed the client boundary."""


class IdxParseError(FedFGError, ValueError):
    pass


class IdxMagicError(IdxParseError):
    pass


class IdxTruncatedError(IdxParseError):
    pass


class IdxCountMismatchError(IdxParseError):
    pass
