"""Image quality metrics and the paired t-test used to compare methods."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DomainError, ShapeError
from .tensor import as_array

PSNR_CAP = 99.0
PSNR_PEAK_CONVENTION = "peak = max(reference)"
SSIM_RANGE_CONVENTION = "range = max(reference) - min(reference)"


def _pair(test, reference):
    a, b = as_array(test), as_array(reference)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(test, reference) -> float:
    """``10 log10(peak^2 / MSE)`` with ``peak = max(reference)``, capped at 99 dB."""
    a, b = _pair(test, reference)
    peak = float(b.max())
    if peak <= 0:
        raise DomainError("reference must have a positive maximum")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x, g):
    # separable 'valid' correlation along the last two axes
    n = g.size
    h, w = x.shape[-2:]
    rows = sum(g[i] * x[..., i : h - n + 1 + i, :] for i in range(n))
    return sum(g[i] * rows[..., :, i : w - n + 1 + i] for i in range(n))


def ssim(test, reference, joint_range: bool = False, k1=0.01, k2=0.03, win_size=11, sigma=1.5) -> float:
    """Mean structural similarity over all fully-contained 11x11 Gaussian windows.

    The dynamic range comes from the reference alone, or from both images
    when ``joint_range`` is set (which makes the index symmetric).
    """
    a, b = _pair(test, reference)
    if a.ndim != 2 or min(a.shape) < win_size:
        raise DomainError(f"SSIM needs 2D images of at least {win_size}x{win_size}, got {a.shape}")
    if joint_range:
        data_range = max(a.max(), b.max()) - min(a.min(), b.min())
    else:
        data_range = b.max() - b.min()
    if data_range <= 0:
        raise DomainError("SSIM dynamic range is zero")
    g = _gaussian_window(win_size, sigma)
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    s_aa = _filter_valid(a * a, g) - mu_a * mu_a
    s_bb = _filter_valid(b * b, g) - mu_b * mu_b
    s_ab = _filter_valid(a * b, g) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (s_aa + s_bb + c2)
    return float(np.mean(num / den))


def paired_ttest(a, b):
    """Two-sided paired t-test; returns ``(t, p)`` with ``n - 1`` degrees of freedom."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("paired samples must be 1D and of equal length")
    n = a.size
    if n < 2:
        raise DomainError("paired t-test needs at least two pairs")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    # differences that are constant up to rounding leave t undefined
    if sd <= 1e-12 * max(1.0, abs(mean)):
        raise DomainError("degenerate paired t-test: differences have zero spread")
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), n - 1)
    return float(t), float(p)


@dataclass
class MetricReport:
    """Per-slice PSNR/SSIM for one method on one test set."""

    label: str = ""
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    comparisons: dict = field(default_factory=dict)

    def add(self, test, reference):
        self.psnr.append(psnr(test, reference))
        self.ssim.append(ssim(test, reference))

    @property
    def psnr_capped(self):
        return [v >= PSNR_CAP for v in self.psnr]

    def summary(self) -> dict:
        p, s = np.asarray(self.psnr), np.asarray(self.ssim)
        return {
            "psnr_mean": float(p.mean()) if p.size else float("nan"),
            "psnr_std": float(p.std(ddof=1)) if p.size > 1 else 0.0,
            "ssim_mean": float(s.mean()) if s.size else float("nan"),
            "ssim_std": float(s.std(ddof=1)) if s.size > 1 else 0.0,
            "n": int(p.size),
        }

    def compare(self, other: "MetricReport", name=None):
        """Paired t-tests of this report against ``other`` on both metrics."""
        out = {}
        for metric in ("psnr", "ssim"):
            try:
                t, p = paired_ttest(getattr(self, metric), getattr(other, metric))
                out[metric] = {"t": t, "p": p}
            except DomainError as exc:
                out[metric] = {"t": None, "p": None, "error": str(exc)}
        self.comparisons[name or other.label] = out
        return out

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "psnr": list(self.psnr),
            "ssim": list(self.ssim),
            "psnr_capped": self.psnr_capped,
            "summary": self.summary(),
            "comparisons": self.comparisons,
            "conventions": {"psnr": PSNR_PEAK_CONVENTION, "psnr_cap_db": PSNR_CAP, "ssim": SSIM_RANGE_CONVENTION},
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "slice", "psnr_db", "ssim", "psnr_capped"])
            for i, (p, s) in enumerate(zip(self.psnr, self.ssim)):
                w.writerow([self.label, i, repr(p), repr(s), int(p >= PSNR_CAP)])
