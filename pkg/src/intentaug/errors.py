"""Exception hierarchy. CLI exit codes are attached to each class."""


class IntentAugError(Exception):
    exit_code = 1


class ConfigError(IntentAugError, ValueError):
    exit_code = 1


class DataError(IntentAugError, ValueError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NumericalError(IntentAugError, ArithmeticError):
    exit_code = 3
