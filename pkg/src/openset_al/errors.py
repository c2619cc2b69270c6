"""Exception types shared across the package."""


class OpensetALError(Exception):
    """Base class for all package errors."""


class DegenerateInputError(OpensetALError, ValueError):
    """An input is numerically unusable (zero vector, empty sequence, NaN)."""


class ParameterError(OpensetALError, ValueError):
    """A parameter is outside its valid range."""


class ShapeError(OpensetALError, ValueError):
    """Array dimensions do not line up."""


class IngestionError(OpensetALError, ValueError):
    """A dataset file is malformed or inconsistent."""


class ConsistencyError(OpensetALError, ValueError):
    """A pool/label-state invariant would be violated."""


class ConfigError(OpensetALError, ValueError):
    """Configuration file is invalid; message lists every offending key."""


class TemplateError(OpensetALError, ValueError):
    """A prompt template is missing its placeholder."""


class TrainingError(OpensetALError, ValueError):
    """The classifier head cannot be trained on the given data."""


class MissingClassError(OpensetALError, ValueError):
    """Some ID class has no labeled sample yet."""

    def __init__(self, missing: list[int]):
        self.missing = list(missing)
        super().__init__(f"no labeled samples for ID classes {self.missing}")
