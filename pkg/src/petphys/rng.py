"""Seeded random streams and an exact Poisson sampler.

Uniform and normal variates come from numpy's PCG64 bit generator, which
is specified bit-for-bit and therefore reproducible across platforms.
Poisson variates are built on top of those uniforms here: sequential
inversion for small means, Hormann's PTRS transformed rejection for
large ones.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from .errors import DomainError

INVERSION_LIMIT = 30.0


class Rng:
    """Single-owner random stream identified by ``(seed, stream_id)``.

    Parallel consumers must not share one instance; call :meth:`spawn` to
    derive an independent stream per worker.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence([seed, self.stream_id])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream_id={self.stream_id})"

    def spawn(self, stream_id: int) -> "Rng":
        # Mixing the parent stream id keeps grandchildren distinct from children.
        return Rng(self.seed, self.stream_id * 1_000_003 + int(stream_id) + 1)

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def bernoulli(self, p, size=None):
        return self._gen.random(size) < p

    def poisson(self, lam):
        """Poisson draw(s) with mean ``lam`` (scalar or array), as int64."""
        lam_arr = np.asarray(lam, dtype=np.float64)
        if not np.all(np.isfinite(lam_arr)) or np.any(lam_arr < 0):
            raise DomainError("Poisson mean must be finite and nonnegative")
        flat = lam_arr.ravel()
        out = np.zeros(flat.shape, dtype=np.int64)
        small = np.flatnonzero(flat < INVERSION_LIMIT)
        large = np.flatnonzero(flat >= INVERSION_LIMIT)
        if small.size:
            out[small] = _poisson_inversion(self, flat[small])
        if large.size:
            out[large] = _poisson_ptrs(self, flat[large])
        if lam_arr.ndim == 0:
            return int(out[0])
        return out.reshape(lam_arr.shape)


def rng_poisson(rng: Rng, lam: float) -> int:
    lam = float(lam)
    if not math.isfinite(lam) or lam < 0:
        raise DomainError(f"Poisson mean must be finite and nonnegative, got {lam}")
    return rng.poisson(lam)


def _poisson_inversion(rng, lam):
    """Sequential search of the CDF; one uniform per variate."""
    u = rng.uniform(lam.shape)
    k = np.zeros(lam.shape, dtype=np.int64)
    p = np.exp(-lam)
    cdf = p.copy()
    active = u > cdf
    step = 0
    while np.any(active):
        step += 1
        idx = np.flatnonzero(active)
        p[idx] *= lam[idx] / step
        cdf[idx] += p[idx]
        k[idx] = step
        # p underflows to 0 once far in the tail; stop there rather than loop on rounding.
        active[idx] = (u[idx] > cdf[idx]) & (p[idx] > 0)
    return k


def _poisson_ptrs(rng, lam):
    """Transformed rejection with squeeze (Hormann 1993), vectorised over pending draws."""
    slam = np.sqrt(lam)
    loglam = np.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)

    out = np.empty(lam.shape, dtype=np.int64)
    pending = np.arange(lam.size)
    while pending.size:
        n = pending.size
        uv = rng.uniform((2, n))
        U = uv[0] - 0.5
        V = uv[1]
        us = 0.5 - np.abs(U)
        aa, bb = a[pending], b[pending]
        k = np.floor((2.0 * aa / us + bb) * U + lam[pending] + 0.43)

        quick = (us >= 0.07) & (V <= vr[pending])
        reject = (k < 0) | ((us < 0.013) & (V > us))
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.log(V) + np.log(invalpha[pending]) - np.log(aa / (us * us) + bb)
            rhs = -lam[pending] + k * loglam[pending] - gammaln(k + 1.0)
        accept = quick | (~reject & (lhs <= rhs))
        out[pending[accept]] = k[accept].astype(np.int64)
        pending = pending[~accept]
    return out
