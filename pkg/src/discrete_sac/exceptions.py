"""Exception types raised across the package."""


class ContractError(RuntimeError):
    """A caller violated an operation's precondition."""


class InvalidDimensionError(ValueError):
    pass


class InvalidProbabilityError(ValueError):
    pass


class MDPFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class ConvergenceError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class UnknownGroupError(KeyError):
    pass


class CheckpointVersionError(ValueError):
    pass


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class FixtureChecksumError(ValueError):
    pass


class DegenerateAnchorError(ValueError):
    """Human and random reference scores coincide, so normalization is undefined."""


class MissingAnchorsError(KeyError):
    def __init__(self, games):
        self.games = sorted(games)
        super().__init__(f"no anchors for games: {', '.join(self.games)}")
