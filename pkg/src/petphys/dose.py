"""Reduced-count PET simulation and count-level calibration.

A low-dose image is produced by scaling the expected sinogram of a
reference activity map, drawing Poisson counts, and reconstructing with
OSEM.  Reconstructions are divided by the count scale so that every dose
level lives in the reference's intensity units.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, ConfigError, DomainError
from .metrics import psnr
from .projector import ProjectorGeometry, get_projector
from .recon import ReconConfig, osem, resolve_partition
from .rng import Rng
from .tensor import Image, as_array

log = logging.getLogger(__name__)

DOSE_TARGETS_DB = {"LD": 21.0, "vLD": 17.0, "uLD": 13.0}
DOSE_LABELS = ("LD", "vLD", "uLD", "custom")
TARGET_RANGE_DB = (5.0, 60.0)
SCALE_BRACKET = (1e-6, 1e8)


@dataclass(frozen=True)
class DoseSpec:
    count_scale: float = 1.0
    label: str = "custom"
    target_psnr_db: float | None = None

    def __post_init__(self):
        problems = []
        if not (self.count_scale > 0 and math.isfinite(self.count_scale)):
            problems.append(f"count_scale must be positive and finite (got {self.count_scale})")
        if self.label not in DOSE_LABELS:
            problems.append(f"label must be one of {DOSE_LABELS} (got {self.label!r})")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def for_label(cls, label: str, count_scale: float = 1.0) -> "DoseSpec":
        return cls(count_scale, label, DOSE_TARGETS_DB.get(label))


def _reference_array(reference):
    ref = as_array(reference)
    if np.any(ref < 0):
        raise DomainError("reference activity must be nonnegative")
    return ref


def simulate_counts(geom: ProjectorGeometry, reference, count_scale: float, rng: Rng) -> np.ndarray:
    """Poisson draw of ``count_scale * S reference``."""
    if not count_scale > 0:
        raise DomainError(f"count_scale must be positive, got {count_scale}")
    expected = count_scale * get_projector(geom).fp(_reference_array(reference))
    # clip the -0.0 / rounding dust that sparse products can leave behind
    return rng.poisson(np.maximum(expected, 0.0)).astype(np.float64)


def simulate_low_dose(geom, partition, reference, spec: DoseSpec, recon_cfg: ReconConfig, rng: Rng) -> Image:
    """OSEM reconstruction of reduced-count data, in reference units."""
    if partition is None:
        partition = resolve_partition(geom, recon_cfg.num_subsets)
    counts = simulate_counts(geom, reference, spec.count_scale, rng)
    recon = osem(geom, partition, counts, recon_cfg)
    return Image(recon.data / spec.count_scale, geom.voxel_size)


def mean_psnr_at(geom, partition, references, scale, recon_cfg, seed, compare_to=None) -> float:
    """Mean PSNR over ``references`` at one count scale.

    Member ``i`` always draws from stream ``(seed, i)``, so repeated calls
    at different scales share their random numbers.
    """
    spec = DoseSpec(scale)
    compare_to = references if compare_to is None else compare_to
    values = []
    for i, (ref, cmp) in enumerate(zip(references, compare_to)):
        img = simulate_low_dose(geom, partition, ref, spec, recon_cfg, Rng(seed, stream_id=i))
        values.append(psnr(img, cmp))
    return float(np.mean(values))


def calibrate_scale(geom, partition, references, target_psnr_db: float, recon_cfg: ReconConfig, rng: Rng,
                    compare_to=None, tolerance_db: float = 0.25, max_steps: int = 40, trace=None) -> float:
    """Count scale whose mean post-reconstruction PSNR hits ``target_psnr_db``.

    Bisection in log10(scale) over a fixed bracket.  ``rng`` only supplies
    the base seed; each evaluation re-seeds identically.  If ``trace`` is a
    list, ``(scale, mean_psnr)`` pairs are appended to it.
    """
    references = list(references)
    if not references:
        raise DomainError("calibration needs at least one reference image")
    lo_db, hi_db = TARGET_RANGE_DB
    if not lo_db <= target_psnr_db <= hi_db:
        raise CalibrationError(f"target {target_psnr_db} dB outside [{lo_db}, {hi_db}] dB")
    if partition is None:
        partition = resolve_partition(geom, recon_cfg.num_subsets)
    seed = rng.seed * 65_537 + rng.stream_id

    def f(log_scale):
        scale = 10.0**log_scale
        value = mean_psnr_at(geom, partition, references, scale, recon_cfg, seed, compare_to)
        log.debug("scale %.6g -> %.3f dB", scale, value)
        if trace is not None:
            trace.append((scale, value))
        return value

    lo, hi = (math.log10(s) for s in SCALE_BRACKET)
    f_lo, f_hi = f(lo), f(hi)
    if not f_lo <= target_psnr_db <= f_hi:
        raise CalibrationError(
            f"target {target_psnr_db} dB not bracketed: {f_lo:.2f} dB at scale {SCALE_BRACKET[0]:g}, "
            f"{f_hi:.2f} dB at scale {SCALE_BRACKET[1]:g}"
        )
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        value = f(mid)
        if abs(value - target_psnr_db) <= tolerance_db:
            return 10.0**mid
        if value < target_psnr_db:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"no scale within {tolerance_db} dB of {target_psnr_db} dB after {max_steps} steps")
