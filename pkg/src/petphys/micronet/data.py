"""2.5D input assembly: neighbouring slices of each modality stacked as channels."""
from __future__ import annotations

import numpy as np

from ..errors import DomainError, ShapeError
from ..tensor import MODALITIES, SLICE_OFFSETS, Image, MultimodalStack


def assemble_25d(volumes, center_index: int, offsets=SLICE_OFFSETS, modalities=MODALITIES) -> MultimodalStack:
    """Stack ``center_index + offset`` slices of every modality.

    ``volumes`` is one slice list per modality, in the order of
    ``modalities``.  Offsets that fall outside the volume are clamped to the
    nearest edge slice.
    """
    volumes = [list(v) for v in volumes]
    if len(volumes) != len(modalities):
        raise ShapeError(f"expected {len(modalities)} modality volumes, got {len(volumes)}")
    n = len(volumes[0])
    if any(len(v) != n for v in volumes):
        raise ShapeError("modality volumes differ in slice count")
    if not 0 <= center_index < n:
        raise DomainError(f"center index {center_index} outside [0, {n})")
    channels, tags = [], []
    for name, vol in zip(modalities, volumes):
        for off in offsets:
            channels.append(vol[min(max(center_index + off, 0), n - 1)])
            tags.append((name, int(off)))
    return MultimodalStack(tuple(channels), tuple(tags), tuple(offsets), tuple(modalities))


def stack_inputs(pet, t1, t2, unimodal: bool = False) -> np.ndarray:
    """``(S, C, H, W)`` network inputs for every slice of one subject.

    With ``unimodal`` the MRI channels are dropped and only the five PET
    offsets remain.
    """
    vols = [[im if isinstance(im, Image) else Image(im) for im in v] for v in ([pet] if unimodal else [pet, t1, t2])]
    mods = MODALITIES[:1] if unimodal else MODALITIES
    return np.stack([assemble_25d(vols, i, modalities=mods).to_array() for i in range(len(pet))])


def image_stack(images) -> np.ndarray:
    return np.stack([np.asarray(im, dtype=np.float64) for im in images])


def to_images(arr, voxel_size: float):
    return [Image(a, voxel_size) for a in np.asarray(arr)]
