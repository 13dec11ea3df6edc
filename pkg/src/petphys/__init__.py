"""Physics-informed, uncertainty-aware low-dose PET toolkit."""
from .errors import (CalibrationError, ConfigError, DimensionError, DomainError, FormatError, GeometryError,
                     PetPhysError, ShapeError, TrainingError)
from .rng import Rng, rng_poisson
from .tensor import Image, MultimodalStack, Sinogram, image_new

__version__ = "0.1.0"

__all__ = [
    "CalibrationError", "ConfigError", "DimensionError", "DomainError", "FormatError", "GeometryError", "Image",
    "MultimodalStack", "PetPhysError", "Rng", "ShapeError", "Sinogram", "TrainingError", "image_new", "rng_poisson",
]
