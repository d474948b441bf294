"""Engine exception types, mapped onto CLI exit codes by the driver."""


class ConfigurationError(Exception):
    """Bad user input: specification file, unsupported order, invalid setup."""


class NumericalFailure(RuntimeError):
    """The run produced values the robustness layer could not recover from."""
