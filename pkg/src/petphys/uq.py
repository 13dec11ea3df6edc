"""Monte-Carlo dropout aggregation and thresholded uncertainty maps."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .rng import Rng
from .tensor import Image, MultimodalStack, as_array

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UqConfig:
    num_passes: int = 50
    delta_r: float = 0.25
    delta_u: float = 0.03

    def __post_init__(self):
        problems = []
        if int(self.num_passes) != self.num_passes or self.num_passes < 1:
            problems.append("num_passes must be an integer >= 1")
        for k in ("delta_r", "delta_u"):
            if not getattr(self, k) > 0:
                problems.append(f"{k} must be > 0")
        if problems:
            raise ConfigError(problems)

    def to_dict(self):
        return asdict(self)


@dataclass
class McResult:
    """Averages over dropout passes; arrays are ``(N, H, W)``.

    ``y_spread`` is the across-pass standard deviation of the mean head,
    kept apart from ``c_mean``.  ``passes`` holds ``(y, c)`` per pass when
    retention was requested.
    """

    y_mean: np.ndarray
    c_mean: np.ndarray
    y_spread: np.ndarray
    passes: list | None = None


def mc_infer(net, x, num_passes: int, rng: Rng, retain: bool = False, batch_size: int = 8) -> McResult:
    """Average ``num_passes`` forward passes, each with a fresh dropout mask.

    Pass ``m`` draws its masks from ``rng.spawn(m)``, so results do not
    depend on batching.  Batch norm uses its running statistics.
    """
    if int(num_passes) != num_passes or num_passes < 1:
        raise ConfigError("num_passes must be an integer >= 1")
    if isinstance(x, MultimodalStack):
        x = x.to_array()[None]
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    log.info("MC dropout inference with %d passes on %d inputs", num_passes, len(x))
    n = len(x)
    y_sum = c_sum = y_sq = None
    kept = [] if retain else None
    for m in range(num_passes):
        masks = net.sample_mask(n, rng.spawn(m))
        ys, cs = [], []
        for s in range(0, n, batch_size):
            y, c, _ = net.forward(x[s : s + batch_size], mask=masks[s : s + batch_size], training=False)
            ys.append(y)
            cs.append(c)
        y, c = np.concatenate(ys), np.concatenate(cs)
        if y_sum is None:
            y_sum, c_sum, y_sq = np.zeros_like(y), np.zeros_like(c), np.zeros_like(y)
        y_sum += y
        c_sum += c
        y_sq += y * y
        if retain:
            kept.append((y, c))
    y_mean = y_sum / num_passes
    spread = np.sqrt(np.maximum(y_sq / num_passes - y_mean * y_mean, 0.0))
    return McResult(y_mean, c_sum / num_passes, spread, kept)


def uncertainty_map(c_mean):
    """Per-voxel standard deviation ``sqrt(c)``; Images stay Images."""
    c = as_array(c_mean)
    if np.any(c < 0):
        raise DomainError("variance map has negative voxels")
    s = np.sqrt(c)
    return c_mean.with_data(s) if isinstance(c_mean, Image) else s


def q_maps(sigma, residual_abs, cfg: UqConfig):
    """Return ``(q1, q2, bm1, bm2)``.

    ``bm1`` marks voxels whose absolute residual reaches ``delta_r`` and
    ``bm2`` those whose uncertainty reaches ``delta_u``; each q map is the
    uncertainty restricted to its mask.
    """
    s, r = as_array(sigma), as_array(residual_abs)
    if s.shape != r.shape:
        raise ShapeError(f"uncertainty {s.shape} and residual {r.shape} shapes differ")
    bm1 = (r >= cfg.delta_r).astype(np.float64)
    bm2 = (s >= cfg.delta_u).astype(np.float64)
    out = (s * bm1, s * bm2, bm1, bm2)
    if isinstance(sigma, Image):
        return tuple(sigma.with_data(a) for a in out)
    return out


def containment_fraction(q1, q2) -> float:
    """Share of Q1's support that also lies in Q2's support; NaN when Q1 is empty."""
    a, b = as_array(q1) != 0, as_array(q2) != 0
    n = int(a.sum())
    return float((a & b).sum() / n) if n else float("nan")
