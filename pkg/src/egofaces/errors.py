"""Exception hierarchy shared across the package."""

from __future__ import annotations


class EgoFacesError(Exception):
    """Base class for every error raised by this package."""


# matching
class EmptyImage(EgoFacesError):
    pass


class DimensionMismatch(EgoFacesError):
    pass


class ZeroVector(EgoFacesError):
    pass


class MissingPair(EgoFacesError, KeyError):
    pass


class ScoreOutOfRange(EgoFacesError, ValueError):
    pass


class ParseError(EgoFacesError, ValueError):
    """A file did not conform to its format.

    ``line`` is 1-based when the format is line oriented, otherwise it is the
    record position inside the document (or None when unknown).
    """

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class MatcherFailure(EgoFacesError):
    """A matcher could not score a pair of face-examples."""

    def __init__(self, message: str, pair: tuple[str, str] | None = None):
        self.pair = pair
        if pair is not None:
            message = f"{message} (pair {pair[0]!r}, {pair[1]!r})"
        super().__init__(message)


# dissimilarity / clustering
class OrderMismatch(EgoFacesError, ValueError):
    pass


class InvalidMatrix(EgoFacesError, ValueError):
    pass


class MissingDescriptor(EgoFacesError):
    def __init__(self, example_id: str):
        self.example_id = example_id
        super().__init__(f"face-example {example_id!r} has no descriptor")


# calibration
class NoPositiveSamples(EgoFacesError):
    pass


class CalibrationLeakage(EgoFacesError):
    """Calibration and evaluation would use the same (or an untagged) dataset."""


# metrics
class LabelUniverseMismatch(EgoFacesError, ValueError):
    pass


class EmptyTable(EgoFacesError, ValueError):
    pass


class FewerThanTwoItems(EgoFacesError, ValueError):
    pass


# synth
class InfeasibleGeometry(EgoFacesError):
    pass


# pipeline
class ConfigError(EgoFacesError, ValueError):
    pass


class ValidationFailed(EgoFacesError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"dataset failed validation: {lines}{more}")


class StageError(EgoFacesError):
    """Wraps an error raised inside a pipeline stage with the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


class IoFailure(EgoFacesError, OSError):
    pass
