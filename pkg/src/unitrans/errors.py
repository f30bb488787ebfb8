"""Exception hierarchy shared by all unitrans modules."""


class UnitransError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(UnitransError, ValueError):
    exit_code = 2


class ParseError(UnitransError, ValueError):
    """Malformed input text. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelError(ParseError):
    pass


class BIOValidationError(UnitransError, ValueError):
    """A label sequence violates the BIO scheme."""

    def __init__(self, message, sentence=None, position=None):
        self.sentence = sentence
        self.position = position
        where = []
        if sentence is not None:
            where.append(f"sentence {sentence}")
        if position is not None:
            where.append(f"position {position}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class ValidationError(UnitransError, ValueError):
    pass


class NormalizationError(UnitransError, ValueError):
    def __init__(self, message, word=None):
        self.word = word
        super().__init__(message)


class AlignmentError(UnitransError):
    """Alignment cannot be computed (e.g. too few shared strings)."""

    exit_code = 3


class LookupFailure(UnitransError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class NumericError(UnitransError, ArithmeticError):
    pass


class TrainingError(NumericError):
    def __init__(self, message, epoch=None, batch=None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"epoch {epoch}, batch {batch}: {message}")


class FormatVersionError(ParseError):
    pass
