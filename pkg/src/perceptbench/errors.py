"""Exception hierarchy shared across the pipeline stages."""


class PerceptBenchError(Exception):
    """Base class for every error raised by this package."""

    code = "Error"


class ConfigError(PerceptBenchError):
    """Invalid run configuration detected before any work starts."""

    code = "ConfigError"


class MissingCredential(ConfigError):
    code = "MissingCredential"


class TemplateError(ConfigError):
    code = "TemplateError"


# dataset
class DatasetError(ConfigError):
    code = "DatasetError"


class ParseError(DatasetError):
    code = "ParseError"


class DuplicateId(DatasetError):
    code = "DuplicateId"


class ScoreOutOfRange(DatasetError):
    code = "ScoreOutOfRange"


class MissingImageFile(DatasetError):
    code = "MissingImageFile"


class DegenerateRange(DatasetError):
    code = "DegenerateRange"


class ImageTooLarge(DatasetError):
    code = "ImageTooLarge"


# schedule
class ScheduleError(ConfigError):
    code = "ScheduleError"


class TooFewItems(ScheduleError):
    code = "TooFewItems"


class InfeasibleBudget(ScheduleError):
    code = "InfeasibleBudget"


class AlreadyBalanced(ScheduleError):
    code = "AlreadyBalanced"


# verdict parsing
class VerdictError(PerceptBenchError):
    code = "VerdictError"


class MissingPrinciple(VerdictError):
    code = "MissingPrinciple"


class MalformedVerdict(VerdictError):
    code = "MalformedVerdict"


class DuplicatePrinciple(VerdictError):
    code = "DuplicatePrinciple"


# judging
class JudgeError(PerceptBenchError):
    code = "JudgeError"


class EncodingError(JudgeError):
    code = "EncodingError"


class TransportError(JudgeError):
    code = "TransportError"


class RateLimited(TransportError):
    """HTTP 429 from the backend; retried with backoff before surfacing."""

    code = "RateLimited"

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class JudgeFailure(JudgeError):
    """The backend kept answering outside the verdict grammar."""

    code = "JudgeFailure"


class MissingLatentScore(JudgeError):
    code = "MissingLatentScore"


class CacheCorrupt(JudgeError):
    code = "CacheCorrupt"


# aggregation
class AggregationError(PerceptBenchError):
    code = "AggregationError"


class UnknownItem(AggregationError):
    code = "UnknownItem"


class EmptyMatrix(AggregationError):
    code = "EmptyMatrix"


class DisconnectedGraph(AggregationError):
    code = "DisconnectedGraph"


class NoConvergence(UserWarning):
    """Bradley-Terry iteration hit max_iter; the last iterate is still returned."""


# metrics
class MetricError(PerceptBenchError):
    code = "MetricError"


class LengthMismatch(MetricError):
    code = "LengthMismatch"


class ConstantVector(MetricError):
    code = "ConstantVector"


class TooFewSamples(MetricError):
    code = "TooFewSamples"


class NoLabeledItems(MetricError):
    code = "NoLabeledItems"


# reporting
class ReportError(PerceptBenchError):
    code = "ReportError"


class EmptyReport(ReportError):
    code = "EmptyReport"


class TooFewAxes(ReportError):
    code = "TooFewAxes"


class SummaryInvariantError(ReportError):
    code = "SummaryInvariantError"
