"""OSEM / MLEM reconstruction with optional resolution modelling and post-smoothing."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DomainError, GeometryError
from .projector import ProjectorGeometry, SubsetPartition, get_projector, make_partition, nearest_divisor
from .tensor import Image, as_array

log = logging.getLogger(__name__)

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class ReconConfig:
    num_iterations: int = 3
    num_subsets: int = 21
    psf_fwhm: float = 4.0
    post_smooth_fwhm: float = 4.0
    init_value: float = 1.0
    epsilon_div: float = 1e-12

    def __post_init__(self):
        problems = []
        if int(self.num_iterations) != self.num_iterations or self.num_iterations < 1:
            problems.append("num_iterations must be a positive integer")
        if int(self.num_subsets) != self.num_subsets or self.num_subsets < 1:
            problems.append("num_subsets must be a positive integer")
        for key in ("psf_fwhm", "post_smooth_fwhm"):
            v = getattr(self, key)
            if not (v >= 0 and math.isfinite(v)):
                problems.append(f"{key} must be nonnegative")
        if not self.init_value > 0:
            problems.append("init_value must be positive")
        if not self.epsilon_div > 0:
            problems.append("epsilon_div must be positive")
        if problems:
            raise ConfigError(problems)

    def to_dict(self):
        return asdict(self)


def resolve_partition(geom: ProjectorGeometry, num_subsets: int) -> SubsetPartition:
    """Interleaved partition, snapping to the nearest divisor of the angle count."""
    n = nearest_divisor(geom.num_angles, num_subsets)
    if n != num_subsets:
        log.info("%d subsets do not divide %d angles; using %d", num_subsets, geom.num_angles, n)
    return make_partition(geom.num_angles, n)


def gaussian_smooth(img, fwhm: float, voxel_size: float | None = None):
    """Separable Gaussian blur with edge replication.

    ``fwhm`` is in mm; ``voxel_size`` defaults to the image's own.  Accepts
    an :class:`Image` (returns an Image) or an array with the voxel size
    given explicitly (returns an array, batch axes allowed).
    """
    if not (fwhm >= 0 and math.isfinite(fwhm)):
        raise DomainError(f"fwhm must be nonnegative, got {fwhm}")
    is_image = isinstance(img, Image)
    if voxel_size is None:
        if not is_image:
            raise DomainError("voxel_size is required for plain arrays")
        voxel_size = img.voxel_size
    arr = as_array(img)
    if fwhm == 0:
        return img
    sigma = fwhm * FWHM_TO_SIGMA / voxel_size
    sig = (0,) * (arr.ndim - 2) + (sigma, sigma)
    out = ndimage.gaussian_filter(arr, sig, mode="nearest", truncate=4.0)
    return Image(out, voxel_size) if is_image else out


def poisson_loglik(expected, counts) -> float:
    """Sum over bins of ``y log(ybar) - ybar``, with ``0 log 0 = 0``."""
    expected = np.asarray(expected, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    pos = counts > 0
    return float(np.sum(counts[pos] * np.log(expected[pos])) - np.sum(expected))


def osem(geom: ProjectorGeometry, partition: SubsetPartition | None, sino, cfg: ReconConfig, callback=None):
    """Ordered-subsets EM.

    Each sub-iteration applies
    ``x <- x * A_b^T(y_b / (A_b x + eps)) / (A_b^T 1 + eps)``, with the
    Gaussian PSF folded in as ``A_b G`` when ``cfg.psf_fwhm > 0``.
    ``partition=None`` builds one from ``cfg.num_subsets``.  ``callback``,
    if given, is called as ``callback(iteration, x)`` after each full pass.
    """
    y = as_array(sino)
    if y.shape != geom.sino_shape:
        raise GeometryError(f"sinogram shape {y.shape} does not match geometry {geom.sino_shape}")
    if np.any(y < 0):
        raise DomainError("sinogram contains negative counts")
    if partition is None:
        partition = resolve_partition(geom, cfg.num_subsets)
    P = get_projector(geom)
    eps = cfg.epsilon_div
    vs = geom.voxel_size

    def blur(a):
        return gaussian_smooth(a, cfg.psf_fwhm, vs) if cfg.psf_fwhm > 0 else a

    rows = [np.asarray(s) for s in partition.assignment]
    sens = []
    for b in range(partition.num_subsets):
        ones = np.ones((len(rows[b]), geom.num_bins))
        sens.append(blur(P.bp_subset(partition, b, ones)))

    x = np.full(geom.image_shape, float(cfg.init_value))
    for it in range(cfg.num_iterations):
        for b in range(partition.num_subsets):
            yb = y[rows[b]]
            ybar = P.fp_subset(partition, b, blur(x))
            ratio = yb / (ybar + eps)
            x = x * blur(P.bp_subset(partition, b, ratio)) / (sens[b] + eps)
        if callback is not None:
            callback(it, x)

    if cfg.post_smooth_fwhm > 0:
        x = gaussian_smooth(x, cfg.post_smooth_fwhm, vs)
    return Image(np.maximum(x, 0.0), vs)


def mlem(geom, sino, num_iterations: int, callback=None, **kw):
    """Plain MLEM: OSEM with one subset, no PSF, no smoothing."""
    cfg = ReconConfig(num_iterations=num_iterations, num_subsets=1, psf_fwhm=0.0, post_smooth_fwhm=0.0, **kw)
    return osem(geom, make_partition(geom.num_angles, 1), sino, cfg, callback=callback)
