"""Exception hierarchy shared across the package."""


class CdfError(Exception):
    """Base class for every error raised by cdfcold."""


class ConfigError(CdfError):
    """Invalid run configuration (CLI exit code 2)."""


class DimensionMismatch(CdfError, ValueError):
    pass


# data
class MissingColumn(CdfError):
    pass


class NonNumericCell(CdfError):
    def __init__(self, row, col, token):
        super().__init__(f"non-numeric cell at row {row}, column {col!r}: {token!r}")
        self.row = row
        self.col = col
        self.token = token


class EmptyFile(CdfError):
    pass


class UnknownAttribute(CdfError, KeyError):
    pass


class CutOutOfRange(CdfError, IndexError):
    pass


class InvalidRange(CdfError, IndexError):
    pass


class SchemaMismatch(CdfError):
    pass


class PanelIoError(CdfError, OSError):
    pass


# preprocess
class ZeroWindow(CdfError, ValueError):
    pass


class TooShort(CdfError):
    pass


class InsufficientData(CdfError):
    pass


# causal
class SingularDesign(CdfError):
    pass


class InsufficientRows(CdfError):
    pass


class MaskedInput(CdfError):
    pass


class DegenerateColumn(CdfError):
    pass


class TooFewSamples(CdfError):
    pass


# nn / model
class MissingCache(CdfError):
    pass


class PanelTooShort(CdfError):
    pass


class EmptyTrainingSet(CdfError):
    pass


class EmptyGrid(CdfError):
    pass


class InsufficientHistory(CdfError):
    pass


class MissingKnownFuture(CdfError):
    pass


# similarity
class DegenerateCovariance(CdfError):
    pass


class LengthMismatch(CdfError):
    pass


# coldstart
class NoEligibleDonors(CdfError):
    pass


class StrategyPreconditionFailed(CdfError):
    pass


class EmptyCandidates(CdfError):
    pass


class EmptyDonorSet(CdfError):
    pass


# synth / eval
class InvalidSpec(CdfError, ValueError):
    pass


class AllTermsExcluded(CdfError):
    """Every MAPE term was excluded; ``report`` still carries MSE and MAE."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
