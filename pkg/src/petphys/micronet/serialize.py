"""PNET1 parameter files.

Layout: magic ``PNET1``, little-endian u32 header length, UTF-8 JSON
header (network config, parameter and buffer names with shapes), then the
f32 blobs of every parameter followed by every batch-norm buffer, each in
declaration order.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np

from ..errors import FormatError
from .model import MicroNet, MicroNetConfig

MAGIC = b"PNET1"


def save(path, net: MicroNet, extra: dict | None = None) -> None:
    entries = list(net.params.items()) + list(net.buffers.items())
    header = {
        "config": net.config.to_dict(),
        "params": [[k, list(v.shape)] for k, v in net.params.items()],
        "buffers": [[k, list(v.shape)] for k, v in net.buffers.items()],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, v in entries:
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load(path):
    """Return ``(net, extra)``; values come back as float64."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:5] != MAGIC:
        raise FormatError(f"{path}: not a PNET1 file")
    if len(raw) < 9:
        raise FormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[5:9])
    try:
        header = json.loads(raw[9 : 9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from None
    cfg = header["config"]
    cfg["widths"] = tuple(cfg["widths"])
    config = MicroNetConfig(**cfg)
    offset = 9 + hlen
    out = []
    for group in ("params", "buffers"):
        d = OrderedDict()
        for name, shape in header[group]:
            size = int(np.prod(shape)) * 4
            if offset + size > len(raw):
                raise FormatError(f"{path}: truncated at {name}")
            d[name] = np.frombuffer(raw, "<f4", int(np.prod(shape)), offset).astype(np.float64).reshape(shape)
            offset += size
        out.append(d)
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return MicroNet(config, *out), header.get("extra", {})
