"""Dual-head U-Net with bottleneck dropout, forward and backward by hand.

Topology (widths ``w0, w1, w2``)::

    enc1  conv3x3 -> BN -> ReLU              H      (skip)
    pool  2x2 average
    enc2  conv3x3 -> BN -> ReLU              H/2    (skip)
    pool
    enc3  conv3x3 -> BN -> ReLU -> dropout   H/4    bottleneck
    dec1  up2, concat enc2, conv3x3 -> BN -> ReLU   H/2
    dec2  up2, concat enc1, conv3x3 -> BN -> ReLU   H
    dec3  conv3x3 -> BN -> ReLU                     H
    head_y  1x1 conv -> ReLU   (mean, >= 0)
    head_c  1x1 conv -> exp    (variance, > 0)

Dropout zeroes whole bottleneck channels and rescales survivors by
``1/(1-p)``; it stays active at inference, which is what makes repeated
passes differ.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from ..losses import LossConfig, objective
from ..rng import Rng
from ..tensor import MultimodalStack
from . import layers as L

CONV_BLOCKS = ("enc1", "enc2", "enc3", "dec1", "dec2", "dec3")
HEADS = ("head_y", "head_c")
EXP_CLIP = 40.0
# Mean-head bias at init: mid-range of max-normalised activity, so the ReLU
# head starts active instead of settling into the dead region.
HEAD_Y_BIAS_INIT = 0.5


@dataclass(frozen=True)
class MicroNetConfig:
    in_channels: int = 15
    widths: tuple = (8, 16, 32)
    dropout_p: float = 1.0 / 32.0
    bn_momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.in_channels < 1:
            problems.append("in_channels must be positive")
        if len(self.widths) != 3 or min(self.widths) < 1:
            problems.append("widths must be three positive integers")
        if not 0.0 <= self.dropout_p < 1.0:
            problems.append("dropout_p must lie in [0, 1)")
        if not 0.0 <= self.bn_momentum < 1.0:
            problems.append("bn_momentum must lie in [0, 1)")
        if problems:
            raise ConfigError(problems)
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    def block_channels(self):
        w0, w1, w2 = self.widths
        return {
            "enc1": (self.in_channels, w0),
            "enc2": (w0, w1),
            "enc3": (w1, w2),
            "dec1": (w2 + w1, w1),
            "dec2": (w1 + w0, w0),
            "dec3": (w0, w0),
        }


class MicroNet:
    """Parameters, batch-norm running statistics, and the two passes."""

    def __init__(self, config: MicroNetConfig, params=None, buffers=None):
        self.config = config
        self.params = params if params is not None else self._init_params()
        self.buffers = buffers if buffers is not None else self._init_buffers()

    # -- construction -------------------------------------------------
    def _init_params(self):
        rng = Rng(self.config.seed, stream_id=101)
        p = OrderedDict()
        for name, (cin, cout) in self.config.block_channels().items():
            bound = math.sqrt(6.0 / (cin * 9))
            p[f"{name}.w"] = (2 * rng.uniform((cin, 3, 3, cout)) - 1) * bound
            p[f"{name}.gamma"] = np.ones(cout)
            p[f"{name}.beta"] = np.zeros(cout)
        w0 = self.config.widths[0]
        bound = math.sqrt(6.0 / w0)
        for head in HEADS:
            p[f"{head}.w"] = (2 * rng.uniform((w0, 1)) - 1) * bound
            p[f"{head}.b"] = np.full(1, HEAD_Y_BIAS_INIT if head == "head_y" else 0.0)
        return p

    def _init_buffers(self):
        b = OrderedDict()
        for name, (_, cout) in self.config.block_channels().items():
            b[f"{name}.running_mean"] = np.zeros(cout)
            b[f"{name}.running_var"] = np.ones(cout)
        return b

    def copy(self) -> "MicroNet":
        return MicroNet(
            self.config,
            OrderedDict((k, v.copy()) for k, v in self.params.items()),
            OrderedDict((k, v.copy()) for k, v in self.buffers.items()),
        )

    @property
    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    @property
    def bottleneck_channels(self) -> int:
        return self.config.widths[2]

    # -- forward ------------------------------------------------------
    def _prepare_input(self, x):
        if isinstance(x, MultimodalStack):
            x = x.to_array()[None]
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected (N, {self.config.in_channels}, H, W) input, got {x.shape}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ShapeError(f"spatial size {x.shape[2:]} must be divisible by 4")
        return np.ascontiguousarray(x.transpose(0, 2, 3, 1))

    def sample_mask(self, n: int, rng: Rng):
        """Keep-flags ``(n, bottleneck_channels)`` drawn from Bernoulli(1 - p)."""
        return (~rng.bernoulli(self.config.dropout_p, (n, self.bottleneck_channels))).astype(np.float64)

    def _dropout_scale(self, n, mask, rng):
        p = self.config.dropout_p
        cb = self.bottleneck_channels
        if mask is None:
            if p == 0.0:
                return np.ones((n, cb))
            if rng is None:
                raise ConfigError("dropout needs either an explicit mask or an rng")
            mask = self.sample_mask(n, rng)
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape == (cb,):
            mask = np.broadcast_to(mask, (n, cb))
        if mask.shape != (n, cb):
            raise ShapeError(f"dropout mask must have shape ({cb},) or ({n}, {cb}), got {mask.shape}")
        return mask / (1.0 - p)

    def _block(self, name, x, training, update_stats, cache):
        p = self.params
        z, cols = L.conv3x3_forward(x, p[f"{name}.w"])
        rm = self.buffers[f"{name}.running_mean"] if (update_stats or not training) else None
        rv = self.buffers[f"{name}.running_var"] if (update_stats or not training) else None
        a, bn_cache = L.batchnorm_forward(z, p[f"{name}.gamma"], p[f"{name}.beta"], rm, rv,
                                          training, self.config.bn_momentum)
        cache[name] = (x.shape, cols, bn_cache, a)
        return np.maximum(a, 0.0)

    def forward(self, x, mask=None, rng=None, training=False, update_stats=None):
        """Return ``(y_hat, c_hat, cache)`` with heads shaped ``(N, H, W)``.

        ``training`` selects batch statistics for batch norm; dropout is
        applied either way.  Running statistics are updated only when
        ``update_stats`` (default: ``training``) is true.
        """
        if update_stats is None:
            update_stats = training
        h = self._prepare_input(x)
        n = h.shape[0]
        cache = {}
        e1 = self._block("enc1", h, training, update_stats, cache)
        e2 = self._block("enc2", L.avgpool2_forward(e1), training, update_stats, cache)
        e3 = self._block("enc3", L.avgpool2_forward(e2), training, update_stats, cache)
        scale = self._dropout_scale(n, mask, rng)
        cache["dropout"] = scale
        b = e3 * scale[:, None, None, :]
        d1 = self._block("dec1", np.concatenate([L.upsample2_forward(b), e2], axis=-1), training, update_stats, cache)
        d2 = self._block("dec2", np.concatenate([L.upsample2_forward(d1), e1], axis=-1), training, update_stats, cache)
        d3 = self._block("dec3", d2, training, update_stats, cache)
        p = self.params
        zy = L.conv1x1_forward(d3, p["head_y.w"], p["head_y.b"])
        zc = L.conv1x1_forward(d3, p["head_c.w"], p["head_c.b"])
        y = np.maximum(zy, 0.0)
        c = np.exp(np.clip(zc, -EXP_CLIP, EXP_CLIP))
        cache["heads"] = (d3, zy, zc, c)
        cache["widths"] = (e1.shape[-1], e2.shape[-1])
        return y[..., 0], c[..., 0], cache

    # -- backward -----------------------------------------------------
    def _block_backward(self, name, dout, cache, grads):
        x_shape, cols, bn_cache, a = cache[name]
        da = dout * (a > 0)
        dz, grads[f"{name}.gamma"], grads[f"{name}.beta"] = L.batchnorm_backward(da, bn_cache)
        dx, grads[f"{name}.w"] = L.conv3x3_backward(dz, cols, self.params[f"{name}.w"], x_shape)
        return dx

    def backward(self, cache, grad_y, grad_c):
        """Parameter gradients given loss gradients w.r.t. both head outputs."""
        p = self.params
        grads = OrderedDict()
        d3, zy, zc, c = cache["heads"]
        gzy = np.asarray(grad_y, dtype=np.float64)[..., None] * (zy > 0)
        gzc = np.asarray(grad_c, dtype=np.float64)[..., None] * c * (np.abs(zc) < EXP_CLIP)
        dd3_y, grads["head_y.w"], grads["head_y.b"] = L.conv1x1_backward(gzy, d3, p["head_y.w"])
        dd3_c, grads["head_c.w"], grads["head_c.b"] = L.conv1x1_backward(gzc, d3, p["head_c.w"])
        dd2 = self._block_backward("dec3", dd3_y + dd3_c, cache, grads)
        dcat = self._block_backward("dec2", dd2, cache, grads)
        w0, w1 = cache["widths"]
        dd1 = L.upsample2_backward(dcat[..., :-w0])
        de1 = dcat[..., -w0:]
        dcat = self._block_backward("dec1", dd1, cache, grads)
        db = L.upsample2_backward(dcat[..., :-w1])
        de2 = dcat[..., -w1:]
        de3 = db * cache["dropout"][:, None, None, :]
        dx3 = self._block_backward("enc3", de3, cache, grads)
        de2 = de2 + L.avgpool2_backward(dx3)
        dx2 = self._block_backward("enc2", de2, cache, grads)
        de1 = de1 + L.avgpool2_backward(dx2)
        self._block_backward("enc1", de1, cache, grads)
        return OrderedDict((k, grads[k]) for k in p)

    def relu_pattern(self, cache):
        """Signs of every ReLU pre-activation; used to spot kinks in finite differences."""
        parts = [cache[name][3] > 0 for name in CONV_BLOCKS]
        parts.append(cache["heads"][1] > 0)
        return np.concatenate([p.ravel() for p in parts])


def loss_and_grads(net: MicroNet, x, target, mode: str, geom=None, loss_cfg: LossConfig | None = None,
                   mask=None, rng=None, training=True, update_stats=None, encoder=None):
    """One forward/backward pass through the selected objective.

    Returns ``(loss_value, grads, (y_hat, c_hat))``.
    """
    loss_cfg = loss_cfg or LossConfig()
    y, c, cache = net.forward(x, mask=mask, rng=rng, training=training, update_stats=update_stats)
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 2:
        target = target[None]
    value, gy, gc = objective(mode, (y, c), target, geom, loss_cfg, encoder)
    return value, net.backward(cache, gy, gc), (y, c)


def backward(net: MicroNet, x, target, mode, geom=None, cfg: LossConfig | None = None, mask=None, rng=None):
    """``(loss value, parameter gradients)`` for one batch."""
    value, grads, _ = loss_and_grads(net, x, target, mode, geom, cfg, mask=mask, rng=rng,
                                     update_stats=False)
    return value, grads
