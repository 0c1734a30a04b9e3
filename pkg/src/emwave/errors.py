"""Error taxonomy shared by the library and the command line.

Every exception carries an ``exit_code``; the CLI maps classes to codes 1:1.
"""


class EmwaveError(Exception):
    exit_code = 1


class NotFoundError(EmwaveError):
    exit_code = 10


class ParseError(EmwaveError):
    exit_code = 11


class ValidationError(EmwaveError):
    exit_code = 12


class InvalidParameter(EmwaveError):
    exit_code = 13


class InfeasiblePenetration(EmwaveError):
    exit_code = 14


class NoConvergence(EmwaveError):
    exit_code = 15


class InvalidDisturbance(EmwaveError):
    exit_code = 20


class NumericalBlowup(EmwaveError):
    exit_code = 21


class UnknownSensorBus(EmwaveError):
    exit_code = 22


class NoCrossing(EmwaveError):
    exit_code = 30


class InsufficientBaseline(EmwaveError):
    exit_code = 31


class TooFewArrivals(EmwaveError):
    exit_code = 32


class EmptySamples(EmwaveError):
    exit_code = 33


class DegenerateField(EmwaveError):
    exit_code = 34


class CollinearSensors(EmwaveError):
    exit_code = 35


class TimeOutOfRange(EmwaveError):
    exit_code = 36


class InsufficientCells(EmwaveError):
    exit_code = 37


class ZeroVariance(InsufficientCells):
    exit_code = 38


class EmptyRegion(EmwaveError):
    exit_code = 39


class ConfigError(EmwaveError):
    exit_code = 40


ALL_ERRORS = (
    NotFoundError, ParseError, ValidationError, InvalidParameter,
    InfeasiblePenetration, NoConvergence, InvalidDisturbance, NumericalBlowup,
    UnknownSensorBus, NoCrossing, InsufficientBaseline, TooFewArrivals,
    EmptySamples, DegenerateField, CollinearSensors, TimeOutOfRange,
    InsufficientCells, ZeroVariance, EmptyRegion, ConfigError,
)
