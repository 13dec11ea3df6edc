"""Grid containers shared by every stage of the pipeline.

Images and sinograms wrap a read-only 2D float64 array.  Both expose
``__array__`` so they can be handed straight to numpy routines.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ShapeError

MODALITIES = ("PET", "T1", "T2")
SLICE_OFFSETS = (-2, -1, 0, 1, 2)


def _frozen_array(data, ndim=2):
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise DimensionError(f"expected a {ndim}D array, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError("empty array")
    if not np.all(np.isfinite(arr)):
        raise DimensionError("array contains NaN or Inf")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Image:
    """Square-voxel 2D scalar field, indexed ``data[row, col]``."""

    data: np.ndarray
    voxel_size: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen_array(self.data))
        if not (self.voxel_size > 0 and np.isfinite(self.voxel_size)):
            raise DimensionError(f"voxel_size must be positive, got {self.voxel_size}")
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)

    def with_data(self, data) -> "Image":
        return Image(data, self.voxel_size)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.voxel_size == other.voxel_size and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Line integrals indexed ``data[angle, bin]``."""

    data: np.ndarray
    bin_size: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen_array(self.data))
        if not (self.bin_size > 0 and np.isfinite(self.bin_size)):
            raise DimensionError(f"bin_size must be positive, got {self.bin_size}")
        object.__setattr__(self, "bin_size", float(self.bin_size))

    @property
    def num_angles(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)

    __hash__ = None


@dataclass(frozen=True)
class MultimodalStack:
    """Channel stack of co-registered images tagged by (modality, slice offset).

    Channel order is modality-major: all offsets of the first modality,
    then all offsets of the second, and so on.
    """

    channels: tuple
    tags: tuple
    slice_offsets: tuple = SLICE_OFFSETS
    modalities: tuple = MODALITIES

    def __post_init__(self):
        channels = tuple(self.channels)
        if len(channels) == 0:
            raise ShapeError("stack needs at least one channel")
        if len(channels) != len(self.modalities) * len(self.slice_offsets):
            raise ShapeError(
                f"{len(channels)} channels for {len(self.modalities)} modalities x "
                f"{len(self.slice_offsets)} offsets"
            )
        ref = channels[0]
        for img in channels[1:]:
            if img.shape != ref.shape or img.voxel_size != ref.voxel_size:
                raise ShapeError("all channels must share shape and voxel size")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "tags", tuple(tuple(t) for t in self.tags))

    @property
    def num_channels(self) -> int:
        return len(self.channels)

    @property
    def shape(self):
        return self.channels[0].shape

    def to_array(self) -> np.ndarray:
        """Return a ``(C, H, W)`` float64 array."""
        return np.stack([c.data for c in self.channels])


def image_new(width: int, height: int, voxel_size: float, fill: float = 0.0) -> Image:
    if int(width) != width or int(height) != height or width < 1 or height < 1:
        raise DimensionError(f"image dimensions must be positive integers, got {width}x{height}")
    if not np.isfinite(fill):
        raise DimensionError("fill value must be finite")
    return Image(np.full((int(height), int(width)), float(fill)), voxel_size)


def as_array(x) -> np.ndarray:
    """float64 view of an Image, Sinogram or array-like."""
    return np.asarray(x, dtype=np.float64)
