"""Exception hierarchy shared by all spectramin modules."""


class SpectraminError(Exception):
    """Base class; the CLI maps these to exit code 1 (validation) or 2."""


class ValidationError(SpectraminError, ValueError):
    pass


class InvalidSpectrum(ValidationError):
    pass


class ZeroVector(ValidationError):
    pass


class EmptyClass(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class ManifestError(ValidationError):
    pass


class EmptyIntersection(ValidationError):
    pass


class SingleClassError(ValidationError):
    pass


class ArchError(ValidationError):
    pass


class FormulaError(ValidationError):
    pass


class MissingLines(ValidationError):
    pass


class NoPeaksError(ValidationError):
    pass


class ModelFormatError(ValidationError):
    pass


class ClassMismatch(ValidationError):
    pass


class DivergedError(SpectraminError, RuntimeError):
    pass


class ExperimentError(SpectraminError, RuntimeError):
    """Wraps a failure inside one evaluation run; ``run_index`` says which."""

    def __init__(self, run_index: int, cause: BaseException):
        super().__init__(f"run {run_index}: {cause}")
        self.run_index = run_index
        self.cause = cause
