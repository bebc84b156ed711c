"""Exception types raised across the package."""


class HoiLayoutError(Exception):
    """Base class; ``code`` is what the CLI puts in its error JSON."""

    code = "error"


class EmptyGeometryError(HoiLayoutError):
    code = "empty-geometry"


class InvalidMeshError(HoiLayoutError):
    code = "invalid-mesh"


class InvalidCameraError(HoiLayoutError):
    code = "invalid-camera"


class BehindCameraError(HoiLayoutError):
    code = "behind-camera"


class SignUndecidableError(HoiLayoutError):
    code = "sign-undecidable"


class ResolutionError(HoiLayoutError):
    code = "resolution"


class ConfigError(HoiLayoutError):
    code = "config"


class DimensionMismatchError(HoiLayoutError):
    code = "dimension-mismatch"


class PreconditionError(HoiLayoutError):
    code = "precondition"


class EvaluationError(HoiLayoutError):
    """Objective returned a non-finite value."""

    code = "evaluation"

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class DivergenceError(HoiLayoutError):
    code = "divergence"

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class NoFitError(HoiLayoutError):
    code = "no-fit"


class NoMatchError(HoiLayoutError):
    code = "no-match"


class ProviderError(HoiLayoutError):
    code = "provider"


class PipelineError(HoiLayoutError):
    code = "pipeline"


class SceneFormatError(HoiLayoutError):
    """Malformed scene document or referenced file; carries file and line."""

    code = "scene-format"

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = None if path is None else str(path)
        self.line = line


class MissingFileError(SceneFormatError):
    code = "missing-file"


class EmptyCorpusError(HoiLayoutError):
    code = "empty-corpus"
