"""Adam with cosine-annealed step size and best-validation-SSIM model selection."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, ShapeError, TrainingError
from ..losses import LOSS_MODES, LossConfig, objective
from ..metrics import psnr, ssim
from ..rng import Rng
from .model import MicroNet, loss_and_grads

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    lr_init: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 4
    loss_mode: str = "SU"
    seed: int = 0
    cosine_annealing: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        problems = []
        if int(self.epochs) != self.epochs or self.epochs < 1:
            problems.append("epochs must be an integer >= 1")
        if not self.lr_init > 0:
            problems.append("lr_init must be > 0")
        if not self.weight_decay >= 0:
            problems.append("weight_decay must be >= 0")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            problems.append("batch_size must be an integer >= 1")
        if self.loss_mode not in LOSS_MODES:
            problems.append(f"loss_mode must be one of {LOSS_MODES}")
        if problems:
            raise ConfigError(problems)

    def to_dict(self):
        return asdict(self)


def cosine_lr(lr_init: float, epoch: int, epochs: int, enabled: bool = True) -> float:
    """Half-cosine from ``lr_init`` at epoch 0 down to 0 at the last epoch."""
    if not enabled or epochs == 1:
        return lr_init
    return lr_init * 0.5 * (1.0 + math.cos(math.pi * epoch / (epochs - 1)))


class Adam:
    """Adam whose gradient includes an L2 penalty on convolution weights."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.beta1, self.beta2, self.eps, self.wd = beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for k, p in params.items():
            g = grads[k]
            if self.wd and k.endswith(".w"):
                g = g + self.wd * p
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainingData:
    """Network inputs ``(N, C, H, W)`` and targets ``(N, H, W)`` per split."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    def __post_init__(self):
        for a, b, name in ((self.x_train, self.y_train, "train"), (self.x_val, self.y_val, "val")):
            if len(a) == 0:
                raise ShapeError(f"{name} split is empty")
            if len(a) != len(b) or a.shape[2:] != b.shape[1:]:
                raise ShapeError(f"{name} inputs {a.shape} and targets {b.shape} disagree")


def predict(net: MicroNet, x, batch_size: int = 8, mask=None, rng: Rng | None = None):
    """Inference-mode forward pass in batches.

    Without ``rng`` or ``mask`` dropout is switched off (all channels kept
    at unit scale), giving the expected network.
    """
    x = np.asarray(x, dtype=np.float64)
    keep = None
    if rng is None and mask is None:
        keep = np.ones(net.bottleneck_channels) * (1.0 - net.config.dropout_p)
    ys, cs = [], []
    for s in range(0, len(x), batch_size):
        m = mask if mask is not None else keep
        y, c, _ = net.forward(x[s : s + batch_size], mask=m, rng=rng, training=False)
        ys.append(y)
        cs.append(c)
    return np.concatenate(ys), np.concatenate(cs)


def evaluate(net: MicroNet, x, target, mode, geom, loss_cfg, batch_size=8):
    y, c = predict(net, x, batch_size)
    loss = objective(mode, (y, c), target, geom, loss_cfg)[0] / len(x)
    p = [psnr(a, b) for a, b in zip(y, target)]
    s = [ssim(a, b) for a, b in zip(y, target)]
    return loss, float(np.mean(p)), float(np.mean(s))


def train(data: TrainingData, net: MicroNet, cfg: TrainConfig, geom=None, loss_cfg: LossConfig | None = None,
          progress=None):
    """Train a copy of ``net``; return ``(best_net, epoch_log)``.

    ``best_net`` holds the weights from the epoch with the highest mean
    validation SSIM.  Each log row records the epoch, step size, mean
    train loss per sample, validation loss per sample, PSNR and SSIM.
    """
    loss_cfg = loss_cfg or LossConfig()
    net = net.copy()
    opt = Adam(net.params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
    rng = Rng(cfg.seed, stream_id=11)
    n = len(data.x_train)
    best, best_ssim, history = net.copy(), -np.inf, []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg.lr_init, epoch, cfg.epochs, cfg.cosine_annealing)
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = np.sort(order[s : s + cfg.batch_size])
            value, grads, _ = loss_and_grads(net, data.x_train[idx], data.y_train[idx], cfg.loss_mode, geom,
                                             loss_cfg, rng=rng, training=True)
            if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(f"non-finite loss or gradient in {cfg.loss_mode} training", epoch)
            total += value
            opt.step(net.params, grads, lr)
        val_loss, val_psnr, val_ssim = evaluate(net, data.x_val, data.y_val, cfg.loss_mode, geom, loss_cfg,
                                                cfg.batch_size)
        if not math.isfinite(val_loss):
            raise TrainingError("non-finite validation loss", epoch)
        row = {"epoch": epoch, "lr": lr, "train_loss": total / n, "val_loss": val_loss,
               "val_psnr": val_psnr, "val_ssim": val_ssim}
        history.append(row)
        log.info("epoch %d lr %.3g train %.6g val %.6g psnr %.3f ssim %.4f", epoch, lr, row["train_loss"],
                 val_loss, val_psnr, val_ssim)
        if progress is not None:
            progress(row)
        if val_ssim > best_ssim:
            best_ssim, best = val_ssim, net.copy()
            row["selected"] = True
    return best, history
