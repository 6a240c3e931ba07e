"""Error classes shared across the toolkit, mapped to CLI exit codes."""


class ConfigError(Exception):
    """Invalid configuration, architecture notation, or shapes."""

    exit_code = 2


class DataError(Exception):
    """Missing or malformed corpora / checkpoints."""

    exit_code = 3


class NumericError(Exception):
    """Non-finite values encountered during training or evaluation."""

    exit_code = 4
