"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PuffGrammarError(Exception):
    exit_code = 1


class DimensionError(PuffGrammarError, ValueError):
    exit_code = 4


class DataError(PuffGrammarError, ValueError):
    exit_code = 4


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingError(PuffGrammarError, ArithmeticError):
    exit_code = 5


class ModelFileError(PuffGrammarError):
    exit_code = 4


class VersionError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass


class FamilyMismatchError(ModelFileError):
    pass


class CompatibilityError(PuffGrammarError):
    exit_code = 6
