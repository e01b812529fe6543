"""Exception hierarchy shared by all modules.

The CLI maps the three families onto exit codes: ``ConfigError`` -> 2,
``DataError`` -> 3, ``NumericalError`` -> 4.
"""


class AdvFilterError(Exception):
    pass


class ConfigError(AdvFilterError, ValueError):
    pass


class ContractError(ConfigError):
    """A caller broke an operation's precondition."""


class DataError(AdvFilterError, ValueError):
    pass


class DimensionError(DataError):
    pass


class DomainError(DataError):
    pass


class BoundsError(DataError):
    pass


class NyquistError(ConfigError):
    pass


class UnsupportedRateError(ConfigError):
    pass


class StratificationError(DataError):
    pass


class UndefinedClassError(DataError):
    pass


class FormatError(DataError):
    """Malformed file; ``offset`` is the byte (or line) position of the fault."""

    def __init__(self, message: str, offset: int | None = None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class NumericalError(AdvFilterError, ArithmeticError):
    pass


class TrainingError(NumericalError):
    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"{message} at epoch {epoch}")
