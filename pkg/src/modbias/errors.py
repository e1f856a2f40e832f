"""Error taxonomy shared across the library.

Every failure mode callers are expected to handle gets its own class with a
stable ``code`` string. The CLI maps these to single-line messages and exit
code 1 (runtime) or 2 (usage).
"""


class ModbiasError(Exception):
    """Base class for all library errors."""

    code = "Error"

    def __init__(self, message=""):
        super().__init__(message)
        self.message = message

    def __str__(self):
        if self.message:
            return f"{self.code}: {self.message}"
        return self.code


# --- container / file formats ---

class BadMagic(ModbiasError):
    code = "BadMagic"


class Truncated(ModbiasError):
    code = "Truncated"


class DimMismatch(ModbiasError):
    code = "DimMismatch"


class SeedMissing(ModbiasError):
    code = "SeedMissing"


class StaleCache(ModbiasError):
    code = "StaleCache"


# --- margin estimation ---

class IndexOutOfRange(ModbiasError):
    code = "IndexOutOfRange"


class ParseError(ModbiasError):
    code = "ParseError"


class NegativeCount(ModbiasError):
    code = "NegativeCount"


# --- loss kernels ---

class DegenerateInput(ModbiasError):
    code = "DegenerateInput"


class MultiLabelUnsupported(ModbiasError):
    code = "MultiLabelUnsupported"


class RowLengthMismatch(ModbiasError):
    code = "RowLengthMismatch"


class InvalidProbability(ModbiasError):
    code = "InvalidProbability"


class DegenerateDenominator(ModbiasError):
    code = "DegenerateDenominator"


class InvalidTemperature(ModbiasError):
    code = "InvalidTemperature"


# --- models ---

class BadDimensions(ModbiasError):
    code = "BadDimensions"


class ShapeMismatch(ModbiasError):
    code = "ShapeMismatch"


# --- trainer ---

class MissingMarginTable(ModbiasError):
    code = "MissingMarginTable"


class ConfigInvalid(ModbiasError):
    code = "ConfigInvalid"


class NoRunsFound(ModbiasError):
    code = "NoRunsFound"


# --- diagnostics ---

class NotADistribution(ModbiasError):
    code = "NotADistribution"


class EmptyErrorSet(ModbiasError):
    code = "EmptyErrorSet"


class TooFewSamples(ModbiasError):
    code = "TooFewSamples"
