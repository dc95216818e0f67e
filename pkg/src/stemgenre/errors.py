"""Exception hierarchy shared by every stage of the pipeline.

Each exception carries a short machine-readable ``code`` which the command
line front end prints on failure.
"""


class StemGenreError(Exception):
    code = "STEMGENRE_ERROR"


class DecodeError(StemGenreError):
    code = "DECODE_ERROR"


class UnsupportedFormat(StemGenreError):
    code = "UNSUPPORTED_FORMAT"


class InsufficientAudio(StemGenreError):
    code = "INSUFFICIENT_AUDIO"


class StemMismatch(StemGenreError):
    code = "STEM_MISMATCH"


class InvalidConfig(StemGenreError, ValueError):
    code = "INVALID_CONFIG"


class ConfigError(InvalidConfig):
    code = "CONFIG_ERROR"


class ShapeError(StemGenreError, ValueError):
    code = "SHAPE_ERROR"


class LabelError(StemGenreError, ValueError):
    code = "LABEL_ERROR"


class DataError(StemGenreError, ValueError):
    code = "DATA_ERROR"


class DivergenceError(StemGenreError):
    code = "DIVERGENCE_ERROR"


class StratificationError(StemGenreError):
    code = "STRATIFICATION_ERROR"


class LayoutError(StemGenreError):
    code = "LAYOUT_ERROR"


class PipelineError(StemGenreError):
    code = "PIPELINE_ERROR"


class StaleArtifact(PipelineError):
    code = "STALE_ARTIFACT"
