"""Forward/backward primitives on channel-last ``(N, H, W, C)`` arrays."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5


def conv3x3_forward(x, w):
    """Same-padded 3x3 convolution (cross-correlation), no bias.

    ``w`` has shape ``(C_in, 3, 3, C_out)``.  Returns the output and the
    im2col matrix needed by the backward pass.
    """
    n, h, wd, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(n * h * wd, c * 9)
    out = cols @ w.reshape(c * 9, -1)
    return out.reshape(n, h, wd, -1), cols


def conv3x3_backward(dout, cols, w, x_shape):
    n, h, wd, c = x_shape
    cout = w.shape[-1]
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    dcols = (d2 @ w.reshape(c * 9, cout).T).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, h + 2, wd + 2, c))
    for i in range(3):
        for j in range(3):
            dxp[:, i : i + h, j : j + wd, :] += dcols[..., i, j]
    return dxp[:, 1:-1, 1:-1, :], dw


def conv1x1_forward(x, w, b):
    return x @ w + b


def conv1x1_backward(dout, x, w):
    c = x.shape[-1]
    dw = x.reshape(-1, c).T @ dout.reshape(-1, w.shape[-1])
    db = dout.reshape(-1, w.shape[-1]).sum(axis=0)
    return dout @ w.T, dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training, momentum):
    """Per-channel normalisation.

    In training mode the batch statistics are used and the running
    averages (passed in, updated in place) move toward them with weight
    ``1 - momentum``.
    """
    axes = (0, 1, 2)
    if training:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        if running_mean is not None:
            m = x.size // x.shape[-1]
            running_mean *= momentum
            running_mean += (1 - momentum) * mu
            running_var *= momentum
            running_var += (1 - momentum) * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma, training)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, training = cache
    axes = (0, 1, 2)
    dgamma = np.sum(dout * xhat, axis=axes)
    dbeta = np.sum(dout, axis=axes)
    dxhat = dout * gamma
    if not training:
        return dxhat * inv_std, dgamma, dbeta
    m = dout.size // dout.shape[-1]
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * np.sum(dxhat * xhat, axis=axes))
    return dx, dgamma, dbeta


def avgpool2_forward(x):
    n, h, w, c = x.shape
    return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def avgpool2_backward(dout):
    return 0.25 * np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2)


def upsample2_forward(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2_backward(dout):
    n, h, w, c = dout.shape
    return dout.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))
