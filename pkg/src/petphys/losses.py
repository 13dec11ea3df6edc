"""Training objectives and their exact gradients.

All losses take plain arrays (or Images) shaped ``(..., H, W)``; leading
axes are treated as independent subjects and summed over.  Each returns
the loss value together with the gradient with respect to the predicted
mean (and, for the heteroscedastic losses, the predicted variance).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .projector import ProjectorGeometry, get_projector
from .tensor import as_array

LOSS_MODES = ("U", "SU", "MSE", "MSE+S", "MSE+E")


@dataclass(frozen=True)
class HeteroPrediction:
    """Predicted mean ``y_hat`` (>= 0) and variance ``c_hat`` (> 0)."""

    y_hat: np.ndarray
    c_hat: np.ndarray

    def __post_init__(self):
        y, c = as_array(self.y_hat), as_array(self.c_hat)
        if y.shape != c.shape:
            raise ShapeError(f"mean {y.shape} and variance {c.shape} shapes differ")
        object.__setattr__(self, "y_hat", y)
        object.__setattr__(self, "c_hat", c)


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 1e-6
    tau: float = 1e-6
    lambda_s: float = 0.003
    lambda_e: float = 0.002
    lambda_s_mse: float = 0.003

    def __post_init__(self):
        problems = [f"{k} must be >= 0" for k, v in asdict(self).items() if not v >= 0]
        problems += [f"{k} must be > 0" for k in ("epsilon", "tau") if not getattr(self, k) > 0]
        if problems:
            raise ConfigError(problems)

    def to_dict(self):
        return asdict(self)


def _unpack(pred, target):
    if not isinstance(pred, HeteroPrediction):
        pred = HeteroPrediction(*pred)
    u = as_array(target)
    if u.shape != pred.y_hat.shape:
        raise ShapeError(f"prediction {pred.y_hat.shape} and target {u.shape} shapes differ")
    return pred.y_hat, pred.c_hat, u


def _same_shape(y_hat, target):
    y, u = as_array(y_hat), as_array(target)
    if y.shape != u.shape:
        raise ShapeError(f"prediction {y.shape} and target {u.shape} shapes differ")
    return y, u


def _gauss_nll(r, v):
    """Sum of ``r^2/v + log v`` and its partials in ``r`` and ``v``."""
    inv = 1.0 / v
    value = float(np.sum(r * r * inv + np.log(v)))
    return value, 2.0 * r * inv, inv - (r * inv) ** 2


def loss_u(pred, target, eps: float = 1e-6):
    """Heteroscedastic Gaussian negative log-likelihood over voxels."""
    y, c, u = _unpack(pred, target)
    if np.any(c <= 0):
        raise DomainError("predicted variance must be strictly positive")
    return _gauss_nll(y - u, c + eps)


def loss_s(pred, target, geom: ProjectorGeometry, tau: float = 1e-6):
    """The same likelihood applied to projections, with variance ``S c_hat``.

    Sinogram elements are treated as independent; the covariance that
    ``S`` induces between them is ignored.
    """
    y, c, u = _unpack(pred, target)
    if np.any(c <= 0):
        raise DomainError("predicted variance must be strictly positive")
    P = get_projector(geom)
    value, gp, gv = _gauss_nll(P.fp(y) - P.fp(u), P.fp(c) + tau)
    return value, P.bp(gp), P.bp(gv)


def loss_su(pred, target, geom: ProjectorGeometry, cfg: LossConfig):
    vu, gyu, gcu = loss_u(pred, target, cfg.epsilon)
    if cfg.lambda_s == 0:
        return vu, gyu, gcu
    vs, gys, gcs = loss_s(pred, target, geom, cfg.tau)
    lam = cfg.lambda_s
    return vu + lam * vs, gyu + lam * gys, gcu + lam * gcs


def loss_mse(y_hat, target):
    """Per-image mean squared error (summed over any leading axes)."""
    y, u = _same_shape(y_hat, target)
    k = y.shape[-1] * y.shape[-2]
    r = y - u
    return float(np.sum(r * r) / k), (2.0 / k) * r


def loss_sinogram_mse(y_hat, target, geom: ProjectorGeometry):
    """Squared Frobenius distance between projections."""
    y, u = _same_shape(y_hat, target)
    P = get_projector(geom)
    r = P.fp(y - u)
    return float(np.sum(r * r)), 2.0 * P.bp(r)


class AvgPoolEncoder:
    """Block-average pooling by ``factor``, flattened per image.

    Linear, so its transposed Jacobian is exact and input-independent.
    """

    def __init__(self, factor: int = 4):
        self.factor = int(factor)

    def _check(self, x):
        h, w = x.shape[-2:]
        if h % self.factor or w % self.factor:
            raise ShapeError(f"image {h}x{w} not divisible by pooling factor {self.factor}")

    def encode(self, x):
        x = as_array(x)
        self._check(x)
        f = self.factor
        h, w = x.shape[-2:]
        pooled = x.reshape(*x.shape[:-2], h // f, f, w // f, f).mean(axis=(-3, -1))
        return pooled.reshape(*x.shape[:-2], -1)

    def vjp(self, x, g):
        """Pull a feature-space cotangent back to image space."""
        x = as_array(x)
        self._check(x)
        f = self.factor
        h, w = x.shape[-2:]
        g = np.asarray(g).reshape(*x.shape[:-2], h // f, 1, w // f, 1)
        return np.broadcast_to(g / (f * f), (*x.shape[:-2], h // f, f, w // f, f)).reshape(x.shape).copy()


def loss_manifold(y_hat, target, encoder=None):
    """Squared distance between encodings; ``encoder`` needs ``encode`` and ``vjp``."""
    y, u = _same_shape(y_hat, target)
    encoder = encoder or AvgPoolEncoder()
    d = encoder.encode(y) - encoder.encode(u)
    return float(np.sum(d * d)), encoder.vjp(y, 2.0 * d)


def objective(mode: str, pred, target, geom, cfg: LossConfig, encoder=None):
    """Loss selected by training mode; returns ``(value, grad_y, grad_c)``.

    MSE-family modes ignore the variance head, so ``grad_c`` is zero.
    """
    if mode == "U":
        return loss_u(pred, target, cfg.epsilon)
    if mode == "SU":
        return loss_su(pred, target, geom, cfg)
    if not isinstance(pred, HeteroPrediction):
        pred = HeteroPrediction(*pred)
    y = pred.y_hat
    value, gy = loss_mse(y, target)
    if mode == "MSE+S":
        v2, g2 = loss_sinogram_mse(y, target, geom)
        value, gy = value + cfg.lambda_s_mse * v2, gy + cfg.lambda_s_mse * g2
    elif mode == "MSE+E":
        v2, g2 = loss_manifold(y, target, encoder)
        value, gy = value + cfg.lambda_e * v2, gy + cfg.lambda_e * g2
    elif mode != "MSE":
        raise ConfigError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")
    return value, gy, np.zeros_like(pred.c_hat)
