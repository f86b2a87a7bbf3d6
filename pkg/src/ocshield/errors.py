"""Exception hierarchy.  Every error carries a short machine-readable ``code``."""


class OcShieldError(Exception):
    code = "error"


class MalformedModel(OcShieldError, ValueError):
    code = "malformed_model"


class LimitExceeded(OcShieldError, ValueError):
    code = "limit_exceeded"


class FeatureIndexOutOfRange(OcShieldError, ValueError):
    code = "feature_index_out_of_range"


class DimensionMismatch(OcShieldError, ValueError):
    code = "dimension_mismatch"


class NonFiniteInput(OcShieldError, ValueError):
    code = "non_finite_input"


class LengthMismatch(OcShieldError, ValueError):
    code = "length_mismatch"


class EmptyClassPartition(OcShieldError, ValueError):
    code = "empty_class_partition"


class MalformedReferenceFile(OcShieldError, ValueError):
    code = "malformed_reference_file"


class DegenerateData(OcShieldError, ValueError):
    code = "degenerate_data"


class DegenerateLabels(OcShieldError, ValueError):
    code = "degenerate_labels"


class ConfigLimit(OcShieldError, ValueError):
    code = "config_limit"


class EnumerationCapExceeded(OcShieldError, RuntimeError):
    code = "enumeration_cap_exceeded"


class NoAdversarialExists(OcShieldError, LookupError):
    code = "no_adversarial_exists"


class EmptyList(OcShieldError, ValueError):
    code = "empty_list"


class TooFewExamples(OcShieldError, ValueError):
    code = "too_few_examples"


class InsufficientCorrect(OcShieldError, ValueError):
    code = "insufficient_correct"


class SingleClass(OcShieldError, ValueError):
    code = "single_class"


class BatchItemError(OcShieldError):
    """Wraps an error raised while processing element ``index`` of a batch."""

    code = "batch_item_error"

    def __init__(self, index, error):
        super().__init__(f"item {index}: {error}")
        self.index = index
        self.error = error
