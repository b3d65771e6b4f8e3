# -*- coding: utf-8 -*-
"""Exceptions raised by hypnogrid. The CLI maps every HypnogridError to exit code 1."""


class HypnogridError(Exception):
    pass


class DimensionError(HypnogridError, ValueError):
    """Tensor shapes or signal lengths do not fit the operation."""


class DegenerateStatsError(DimensionError):
    """Batch statistics computed from a single value per channel."""


class ConfigError(HypnogridError, ValueError):
    pass


class DataError(HypnogridError, ValueError):
    pass


class FormatError(HypnogridError, IOError):
    """A container, checkpoint or manifest on disk is corrupt or truncated."""
