"""Exception types shared across the package.

Each exception carries the process exit code the command-line tool uses
when it escapes a subcommand.
"""


class ClanError(Exception):
    exit_code = 2


class UsageError(ClanError):
    exit_code = 1


class ConfigError(ClanError):
    exit_code = 1


class DimensionError(ClanError, ValueError):
    pass


class DegenerateInputError(ClanError, ValueError):
    pass


class ScheduleRangeError(ClanError, ValueError):
    pass


class ContractError(ClanError):
    pass


class DataError(ClanError):
    pass


class CheckpointError(ClanError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class DivergenceError(ClanError, FloatingPointError):
    exit_code = 3

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
