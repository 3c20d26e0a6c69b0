"""
Error hierarchy shared by every app.

Each error carries the ``module`` it was raised from so the command layer
can print module-tagged messages (``[lawfit] ...``).
"""


class CPLawError(Exception):
    module = "cplaw"

    def __init__(self, message, *, module=None, details=None):
        super().__init__(message)
        if module is not None:
            self.module = module
        self.details = details if details is not None else {}

    def __str__(self):
        return self.args[0] if self.args else ""

    def tagged(self):
        return f"[{self.module}] {self}"


class SchemaError(CPLawError):
    """Unknown categorical value, missing field or violated config invariant."""

    module = "configs"

    def __init__(self, message, *, field=None, **kwargs):
        super().__init__(message, **kwargs)
        self.field = field


class ArgumentError(CPLawError, ValueError):
    pass


class FormatError(CPLawError):
    module = "ingest"


class SplitError(CPLawError):
    module = "ingest"


class FitError(CPLawError):
    module = "lawfit"


class ScopeError(CPLawError):
    module = "lawfit"


class ShapeError(CPLawError):
    module = "regressor"


class TrainingError(CPLawError):
    """Raised when training hits a non-finite value.

    ``predictor`` holds the predictor restored to the last finite state.
    """

    module = "regressor"

    def __init__(self, message, *, predictor=None, **kwargs):
        super().__init__(message, **kwargs)
        self.predictor = predictor


class SweepError(CPLawError):
    module = "selection"
