"""Exception hierarchy. CLI exit codes map onto these classes."""


class XmragError(Exception):
    """Base class for all engine errors."""


class ValidationError(XmragError):
    """Bad input data: manifests, feature files, shapes, value ranges."""


class ManifestError(ValidationError):
    """Corpus manifest cannot be loaded."""


class FeatureFormatError(ValidationError):
    """Feature file violates the XMRG binary format."""


class DecompositionError(ValidationError):
    """Query decomposition produced no usable subqueries."""


class ServiceError(XmragError):
    """External service (LLM or image generator) failed."""


class LlmParseError(ServiceError):
    """LLM completion could not be parsed into an entity list."""

    def __init__(self, message: str, completion: str = ""):
        super().__init__(message)
        self.completion = completion
