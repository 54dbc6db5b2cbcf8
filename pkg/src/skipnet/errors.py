"""Exception hierarchy shared by every skipnet module."""


class SkipNetError(Exception):
    """Base class for all errors raised by skipnet."""


class DimensionError(SkipNetError, ValueError):
    pass


class NumericError(SkipNetError, FloatingPointError):
    pass


class ContractError(SkipNetError, ValueError):
    """A precondition of an operation was violated by the caller."""


class ConfigError(SkipNetError, ValueError):
    pass


class ValidationError(SkipNetError, ValueError):
    pass


class ParseError(SkipNetError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class UnknownTrackError(SkipNetError, KeyError):
    def __init__(self, track_id):
        self.track_id = track_id
        super().__init__(f"unknown track id {track_id!r}")

    def __str__(self):
        return self.args[0]


class CorruptCheckpointError(SkipNetError, ValueError):
    pass


class OracleError(SkipNetError, RuntimeError):
    """The finite-difference oracle itself could not be trusted."""


class TrainingError(SkipNetError, RuntimeError):
    pass
