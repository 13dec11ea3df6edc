"""PVOL binary volume files.

Layout (all little-endian)::

    b"PVOL1"
    u32 num_slices, u32 height, u32 width, u32 num_channels
    f64 voxel_size_mm
    u32 metadata_len, metadata_len bytes of UTF-8 JSON
    f32 data[num_slices][num_channels][height][width]

Voxels are stored as float32, so a round trip is bit-exact only for
values already representable in single precision.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import Image

MAGIC = b"PVOL1"
_HEADER = struct.Struct("<IIIId")
_U32 = struct.Struct("<I")


def encode_metadata(metadata) -> bytes:
    return json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_array(path, data, voxel_size: float, metadata=None) -> None:
    """Write a ``(slices, channels, H, W)`` array."""
    data = np.asarray(data)
    if data.ndim != 4 or data.shape[0] == 0 or data.shape[1] == 0:
        raise FormatError(f"expected a nonempty (S, C, H, W) array, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise FormatError("volume contains NaN or Inf")
    s, c, h, w = data.shape
    meta = encode_metadata(metadata)
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(s, h, w, c, float(voxel_size)))
        fh.write(_U32.pack(len(meta)))
        fh.write(meta)
        fh.write(payload)


def read_array(path):
    """Return ``(data[S, C, H, W] float64, voxel_size, metadata)``."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    pos = len(MAGIC)
    if len(raw) < pos + _HEADER.size + _U32.size:
        raise FormatError(f"{path}: truncated header")
    s, h, w, c, voxel_size = _HEADER.unpack_from(raw, pos)
    pos += _HEADER.size
    (meta_len,) = _U32.unpack_from(raw, pos)
    pos += _U32.size
    if len(raw) < pos + meta_len:
        raise FormatError(f"{path}: truncated metadata")
    try:
        metadata = json.loads(raw[pos : pos + meta_len].decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable metadata ({exc})") from None
    pos += meta_len
    expected = s * c * h * w * 4
    if len(raw) - pos != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, found {len(raw) - pos}")
    data = np.frombuffer(raw, dtype="<f4", count=s * c * h * w, offset=pos)
    return data.reshape(s, c, h, w).astype(np.float64), voxel_size, metadata


def volume_write(path, images, metadata=None, num_channels: int = 1) -> None:
    """Write a flat, slice-major/channel-minor list of images."""
    images = list(images)
    if not images:
        raise FormatError("cannot write an empty volume")
    if len(images) % num_channels:
        raise FormatError(f"{len(images)} images do not split into {num_channels} channels")
    shape, vs = images[0].shape, images[0].voxel_size
    for img in images:
        if img.shape != shape or img.voxel_size != vs:
            raise FormatError("all images in a volume must share shape and voxel size")
    stack = np.stack([img.data for img in images]).reshape(-1, num_channels, *shape)
    write_array(path, stack, vs, metadata)


def volume_read(path):
    """Return ``(images, metadata)`` with images flattened slice-major."""
    data, vs, metadata = read_array(path)
    s, c, h, w = data.shape
    images = [Image(data[i, j], vs) for i in range(s) for j in range(c)]
    return images, metadata
