"""Parallel-beam ray-traced sinogram operator and its adjoint.

Every detector bin contributes one ray through the bin centre.  Ray/pixel
intersection lengths are computed exactly with Siddon's parametric
traversal and stored once per geometry as a sparse system matrix, so the
forward projector and the backprojector use literally the same weights.

Coordinates: pixel ``(row, col)`` has centre
``x = (col - (W-1)/2) * voxel``, ``y = (row - (H-1)/2) * voxel`` (mm).
Angle ``k`` is ``k*pi/num_angles``; the ray for angle ``theta`` and
signed detector offset ``s`` is ``s*(cos, sin) + t*(-sin, cos)``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, GeometryError
from .tensor import Image, Sinogram, as_array


@dataclass(frozen=True)
class ProjectorGeometry:
    num_angles: int
    num_bins: int
    bin_size: float
    image_width: int
    image_height: int
    voxel_size: float

    def __post_init__(self):
        problems = []
        for name in ("num_angles", "num_bins", "image_width", "image_height"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                problems.append(f"{name} must be a positive integer (got {v})")
        for name in ("bin_size", "voxel_size"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                problems.append(f"{name} must be positive (got {v})")
        if problems:
            raise GeometryError("; ".join(problems))
        diag = self.voxel_size * math.hypot(self.image_width, self.image_height)
        # small slack so that ceil(diag / bin) always qualifies
        if self.num_bins * self.bin_size < diag * (1 - 1e-12):
            raise GeometryError(
                f"detector span {self.num_bins * self.bin_size:.3f} mm does not cover "
                f"the image diagonal {diag:.3f} mm"
            )

    @classmethod
    def for_image(cls, width, height, voxel_size, num_angles, bin_size=None):
        """Smallest detector covering the field of view.

        The bin count takes the parity of the image width, so that with
        ``bin_size == voxel_size`` the 0-degree rays pass through pixel
        centres instead of along pixel edges.
        """
        bin_size = float(voxel_size if bin_size is None else bin_size)
        diag = voxel_size * math.hypot(width, height)
        nb = math.ceil(diag / bin_size - 1e-9)
        if nb % 2 != width % 2:
            nb += 1
        return cls(int(num_angles), nb, bin_size, int(width), int(height), float(voxel_size))

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.num_angles) * (math.pi / self.num_angles)

    @property
    def bin_centers(self) -> np.ndarray:
        return (np.arange(self.num_bins) - (self.num_bins - 1) / 2.0) * self.bin_size

    @property
    def image_shape(self):
        return (self.image_height, self.image_width)

    @property
    def sino_shape(self):
        return (self.num_angles, self.num_bins)

    def to_metadata(self) -> dict:
        return {
            "num_angles": self.num_angles,
            "num_bins": self.num_bins,
            "bin_size_mm": self.bin_size,
            "voxel_size_mm": self.voxel_size,
            "image_width": self.image_width,
            "image_height": self.image_height,
        }

    @classmethod
    def from_metadata(cls, meta: dict, width=None, height=None):
        return cls(
            int(meta["num_angles"]),
            int(meta["num_bins"]),
            float(meta["bin_size_mm"]),
            int(meta.get("image_width", width)),
            int(meta.get("image_height", height)),
            float(meta["voxel_size_mm"]),
        )


@dataclass(frozen=True)
class SubsetPartition:
    num_subsets: int
    assignment: tuple

    def __post_init__(self):
        seen = sorted(a for subset in self.assignment for a in subset)
        if len(self.assignment) != self.num_subsets:
            raise DomainError("assignment length differs from num_subsets")
        if seen != list(range(len(seen))):
            raise DomainError("subsets must be disjoint and cover every angle")
        sizes = [len(s) for s in self.assignment]
        if min(sizes) == 0 or max(sizes) - min(sizes) > 1:
            raise DomainError(f"unbalanced subset sizes {sizes}")


def make_partition(num_angles: int, num_subsets: int) -> SubsetPartition:
    """Interleaved partition: angle ``i`` goes to subset ``i % num_subsets``."""
    if num_subsets < 1 or num_subsets > num_angles:
        raise DomainError(f"cannot split {num_angles} angles into {num_subsets} subsets")
    return SubsetPartition(
        num_subsets,
        tuple(tuple(range(s, num_angles, num_subsets)) for s in range(num_subsets)),
    )


def nearest_divisor(n: int, target: int) -> int:
    """Divisor of ``n`` closest to ``target``; ties go to the smaller one."""
    divisors = [d for d in range(1, n + 1) if n % d == 0]
    return min(divisors, key=lambda d: (abs(d - target), d))


def _siddon_angle(geom: ProjectorGeometry, theta: float):
    """Intersection lengths of every ray at one angle.

    Returns ``(bin_index, pixel_index, length)`` arrays.
    """
    W, H, vs = geom.image_width, geom.image_height, geom.voxel_size
    s = geom.bin_centers
    c, sn = math.cos(theta), math.sin(theta)
    # snap trig noise so that axis-aligned rays take the exact branch
    if abs(c) < 1e-14:
        c = 0.0
    if abs(sn) < 1e-14:
        sn = 0.0
    dx, dy = -sn, c
    px, py = s * c, s * sn

    x_planes = (np.arange(W + 1) - W / 2.0) * vs
    y_planes = (np.arange(H + 1) - H / 2.0) * vs
    nb = s.size
    lo = np.full(nb, -np.inf)
    hi = np.full(nb, np.inf)
    ts = []
    for d, p, planes in ((dx, px, x_planes), (dy, py, y_planes)):
        if d != 0.0:
            t = (planes[None, :] - p[:, None]) / d
            lo = np.maximum(lo, np.minimum(t[:, 0], t[:, -1]))
            hi = np.minimum(hi, np.maximum(t[:, 0], t[:, -1]))
            ts.append(t)
        else:
            outside = (p < planes[0]) | (p >= planes[-1])
            hi = np.where(outside, -np.inf, hi)

    hit = hi > lo
    if not np.any(hit):
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    lo_h, hi_h = lo[hit], hi[hit]
    t = np.concatenate([tt[hit] for tt in ts], axis=1)
    t = np.clip(t, lo_h[:, None], hi_h[:, None])
    t.sort(axis=1)
    seg = np.diff(t, axis=1)
    mid = 0.5 * (t[:, 1:] + t[:, :-1])
    keep = seg > 1e-9 * vs
    rows = np.broadcast_to(np.flatnonzero(hit)[:, None], seg.shape)[keep]
    mid = mid[keep]
    seg = seg[keep]
    px_h = np.broadcast_to(px[hit][:, None], keep.shape)[keep]
    py_h = np.broadcast_to(py[hit][:, None], keep.shape)[keep]
    col = np.floor((px_h + mid * dx - x_planes[0]) / vs).astype(np.int64)
    row = np.floor((py_h + mid * dy - y_planes[0]) / vs).astype(np.int64)
    np.clip(col, 0, W - 1, out=col)
    np.clip(row, 0, H - 1, out=row)
    return rows, row * W + col, seg


def system_matrix(geom: ProjectorGeometry) -> sp.csr_matrix:
    """Sparse ``(num_angles*num_bins, H*W)`` matrix of intersection lengths in mm."""
    r_all, c_all, v_all = [], [], []
    for k, theta in enumerate(geom.angles):
        r, c, v = _siddon_angle(geom, theta)
        r_all.append(r + k * geom.num_bins)
        c_all.append(c)
        v_all.append(v)
    shape = (geom.num_angles * geom.num_bins, geom.image_width * geom.image_height)
    A = sp.coo_matrix(
        (np.concatenate(v_all), (np.concatenate(r_all), np.concatenate(c_all))), shape=shape
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


class Projector:
    """Cached operator pair for one geometry.

    ``fp``/``bp`` work on plain arrays and accept leading batch axes:
    ``(..., H, W) -> (..., num_angles, num_bins)`` and back.
    """

    def __init__(self, geom: ProjectorGeometry):
        self.geom = geom
        self.A = system_matrix(geom)
        self.AT = self.A.T.tocsr()
        self._subsets = {}

    def _check(self, x, shape, what):
        if x.shape[-2:] != tuple(shape):
            raise GeometryError(f"{what} shape {x.shape[-2:]} does not match geometry {tuple(shape)}")

    @staticmethod
    def _apply(M, x, in_shape, out_shape):
        lead = x.shape[:-2]
        flat = x.reshape(-1, in_shape[0] * in_shape[1])
        if flat.shape[0] == 1:
            out = M @ flat[0]
        else:
            out = (M @ flat.T).T
        return np.ascontiguousarray(out).reshape(*lead, *out_shape)

    def fp(self, x) -> np.ndarray:
        x = as_array(x)
        self._check(x, self.geom.image_shape, "image")
        return self._apply(self.A, x, self.geom.image_shape, self.geom.sino_shape)

    def bp(self, y) -> np.ndarray:
        y = as_array(y)
        self._check(y, self.geom.sino_shape, "sinogram")
        return self._apply(self.AT, y, self.geom.sino_shape, self.geom.image_shape)

    def subset_ops(self, partition: SubsetPartition, index: int):
        """``(A_b, A_b^T)`` restricted to the angles of subset ``index``."""
        if not 0 <= index < partition.num_subsets:
            raise DomainError(f"subset index {index} out of range [0, {partition.num_subsets})")
        key = (partition.assignment, index)
        if key not in self._subsets:
            nb = self.geom.num_bins
            angles = np.asarray(partition.assignment[index])
            if angles.size and angles.max() >= self.geom.num_angles:
                raise DomainError("partition refers to angles outside the geometry")
            rows = (angles[:, None] * nb + np.arange(nb)[None, :]).ravel()
            Ab = self.A[rows]
            self._subsets[key] = (Ab, Ab.T.tocsr())
        return self._subsets[key]

    def fp_subset(self, partition, index, x) -> np.ndarray:
        x = as_array(x)
        self._check(x, self.geom.image_shape, "image")
        Ab, _ = self.subset_ops(partition, index)
        n = len(partition.assignment[index])
        return self._apply(Ab, x, self.geom.image_shape, (n, self.geom.num_bins))

    def bp_subset(self, partition, index, y) -> np.ndarray:
        y = as_array(y)
        n = len(partition.assignment[index]) if 0 <= index < partition.num_subsets else -1
        _, AbT = self.subset_ops(partition, index)
        self._check(y, (n, self.geom.num_bins), "subset sinogram")
        return self._apply(AbT, y, (n, self.geom.num_bins), self.geom.image_shape)


@functools.lru_cache(maxsize=8)
def get_projector(geom: ProjectorGeometry) -> Projector:
    return Projector(geom)


def _check_image(geom, img):
    if isinstance(img, Image) and img.voxel_size != geom.voxel_size:
        raise GeometryError(f"image voxel size {img.voxel_size} != geometry {geom.voxel_size}")


def forward(geom: ProjectorGeometry, img) -> Sinogram:
    _check_image(geom, img)
    return Sinogram(get_projector(geom).fp(img), geom.bin_size)


def adjoint(geom: ProjectorGeometry, sino) -> Image:
    return Image(get_projector(geom).bp(sino), geom.voxel_size)


def forward_subset(geom, partition, subset_index, img) -> Sinogram:
    _check_image(geom, img)
    return Sinogram(get_projector(geom).fp_subset(partition, subset_index, img), geom.bin_size)


def adjoint_subset(geom, partition, subset_index, sino) -> Image:
    return Image(get_projector(geom).bp_subset(partition, subset_index, sino), geom.voxel_size)
