# -*- coding: utf-8 -*-

"""
Exception hierarchy.

Every error carries the exit code the command line reports for it.
"""


class MusseError(Exception):
    """
    Base class of all errors raised by this package.
    """
    exit_code = 1


class ConfigError(MusseError, ValueError):
    """
    Invalid configuration or call arguments.
    """
    exit_code = 2


class ParameterError(ConfigError):
    """
    A numeric parameter is out of its allowed range.
    """


class StepError(ParameterError):
    """
    A time step index is out of range.
    """


class ShapeError(ConfigError):
    """
    Grid shapes of the operands do not match.
    """


class FreezeViolationError(ConfigError):
    """
    A stage is trained while an earlier stage is still trainable.
    """


class InsufficientStagesError(ConfigError):
    """
    Stage selection needs displacements of at least two stages.
    """


class DataError(MusseError):
    """
    Input data can not be used.
    """
    exit_code = 3


class FormatError(DataError):
    """
    On-disk layout does not follow the sequence directory format.
    """


class InconsistentSequenceError(DataError):
    """
    Frames of a sequence disagree in shape or spacing.
    """


class CorruptDataError(DataError):
    """
    Samples are not finite.
    """


class StorageIOError(DataError, OSError):
    """
    Reading or writing a file failed.
    """


class NoDataError(DataError):
    """
    A dataset split has no sequences.
    """


class DegenerateError(DataError, ValueError):
    """
    A statistic is undefined for the given values.
    """


class DegenerateFrameError(DegenerateError):
    pass


class DegenerateROIError(DegenerateError):
    pass


class DegenerateMapError(DegenerateError):
    pass


class EmptySupportError(DegenerateError):
    pass


class CheckpointError(DataError):
    """
    A checkpoint is missing or unreadable.
    """


class IncompatibleCheckpointError(CheckpointError):
    """
    Checkpoint version or parameter table does not match.
    """


class DivergenceError(MusseError, ArithmeticError):
    """
    Training produced a non-finite loss.
    """
    exit_code = 4

    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
