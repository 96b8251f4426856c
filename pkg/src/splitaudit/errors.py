"""Exception hierarchy shared across the toolkit."""


class SplitAuditError(Exception):
    """Base class for every error raised by this package."""


class ManifestError(SplitAuditError):
    """Dataset manifest could not be loaded or is inconsistent."""


class ZeroImagesError(ManifestError):
    """No images were found under the dataset root."""


class MalformedLabelError(ManifestError):
    """A label line does not follow the KITTI column convention."""


class UnknownClassError(ManifestError):
    """A label names a class outside the configured class list."""


class UnknownImageError(ManifestError):
    """A prediction or split references an image id not in the manifest."""


class SplitError(SplitAuditError):
    """A split could not be constructed from the given parameters."""


class EmptySideError(SplitError):
    """A split strategy produced an empty train or test side."""


class UnknownSequenceError(SplitError):
    """A sequence name does not occur in the manifest."""


class AllHashesFailedError(SplitAuditError):
    """Every image in a hashing batch failed to decode."""


class EmptyCorpusError(SplitAuditError):
    """An index or scan was requested over an empty hash corpus."""


class PlanError(SplitAuditError):
    """A leakage plan could not be generated."""


class InconsistentStepError(PlanError):
    """A leakage step does not belong to the split it is applied to."""


class OutputDirError(SplitAuditError):
    """Refusing to write into an existing non-empty directory."""


class RunError(SplitAuditError):
    """A train/evaluate run failed."""


class ExternalCommandError(RunError):
    """The external adapter command exited with a failure."""


class AdapterTimeoutError(ExternalCommandError):
    """The external adapter command hit its timeout."""


class MalformedMetricsError(RunError):
    """The adapter metrics file is missing, unparsable or out of range."""


class AuditError(SplitAuditError):
    """Run records could not be aggregated into a verdict."""


class StepInvalidError(AuditError):
    """A leakage step has fewer successful repetitions than the quorum."""


class DegenerateBaselineError(AuditError):
    """A relative increase was requested against a non-positive baseline."""


class MissingStepsError(AuditError):
    """The summaries do not cover the percents the decision rule needs."""


class ProvenanceMismatchError(AuditError):
    """Run records and plan disagree about the base split."""


class ConfigError(SplitAuditError):
    """Invalid tool configuration."""
