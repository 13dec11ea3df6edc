"""Exception hierarchy.

Every error carries a short ``category`` string that the command line
prints as the first token of its one-line failure message.
"""


class PetPhysError(Exception):
    category = "error"


class DimensionError(PetPhysError, ValueError):
    category = "dimension"


class FormatError(PetPhysError, ValueError):
    category = "format"


class DomainError(PetPhysError, ValueError):
    category = "domain"


class GeometryError(PetPhysError, ValueError):
    category = "geometry"


class ShapeError(PetPhysError, ValueError):
    category = "shape"


class CalibrationError(PetPhysError, RuntimeError):
    category = "calibration"


class TrainingError(PetPhysError, RuntimeError):
    category = "training"

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ConfigError(PetPhysError, ValueError):
    """Raised with the full list of violated keys, not just the first."""

    category = "config"

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
