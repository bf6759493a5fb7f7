from __future__ import annotations

"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class AdcError(Exception):
    exit_code = 2


class UsageError(AdcError):
    exit_code = 1


class ConfigError(UsageError):
    pass


class DataError(AdcError):
    exit_code = 2


class FormatError(DataError):
    pass


class GeometryError(DataError):
    pass


class GridMismatchError(DataError):
    pass


class CategoricalResampleError(DataError):
    pass


class DuplicateError(DataError):
    pass


class PreconditionError(AdcError):
    exit_code = 3


class InsufficientDataError(PreconditionError):
    pass


class IllegalTransitionError(PreconditionError):
    pass


class UnknownAttributeError(PreconditionError):
    pass


__all__ = [
    "AdcError",
    "UsageError",
    "ConfigError",
    "DataError",
    "FormatError",
    "GeometryError",
    "GridMismatchError",
    "CategoricalResampleError",
    "DuplicateError",
    "PreconditionError",
    "InsufficientDataError",
    "IllegalTransitionError",
    "UnknownAttributeError",
]
