"""Independent reference computations used by the tests.

None of these share code with the package: the ray/pixel lengths come from
per-pixel slab clipping rather than an incremental traversal, the disk
projection is the closed-form chord, and the statistics lean on scipy.
"""
import math

import numpy as np


def pixel_chord_lengths(theta, s, width, height, voxel):
    """Length of the line ``s*(c, sn) + t*(-sn, c)`` inside every pixel, by clipping each square."""
    c, sn = math.cos(theta), math.sin(theta)
    px, py = s * c, s * sn
    dx, dy = -sn, c
    cols = (np.arange(width) - (width - 1) / 2.0) * voxel
    rows = (np.arange(height) - (height - 1) / 2.0) * voxel
    yc, xc = np.meshgrid(rows, cols, indexing="ij")
    lo = np.full(xc.shape, -np.inf)
    hi = np.full(xc.shape, np.inf)
    for p, d, centre in ((px, dx, xc), (py, dy, yc)):
        a, b = centre - voxel / 2 - p, centre + voxel / 2 - p
        if abs(d) < 1e-15:
            outside = (a > 0) | (b < 0)
            lo = np.where(outside, np.inf, lo)
        else:
            t1, t2 = a / d, b / d
            lo = np.maximum(lo, np.minimum(t1, t2))
            hi = np.minimum(hi, np.maximum(t1, t2))
    return np.clip(hi - lo, 0.0, None)


def dense_system_matrix(geom):
    rows = []
    for th in geom.angles:
        for s in geom.bin_centers:
            rows.append(pixel_chord_lengths(th, s, geom.image_width, geom.image_height, geom.voxel_size).ravel())
    return np.array(rows)


def disk_chord(s, radius):
    """Line integral of a unit-density disk at offset ``s``."""
    s = np.asarray(s, dtype=float)
    return 2.0 * np.sqrt(np.clip(radius**2 - s**2, 0.0, None))


def area_weighted_disk(size, voxel, radius, supersample=8):
    """Unit disk sampled by the fraction of each pixel it covers."""
    n = size * supersample
    c = (np.arange(n) - (n - 1) / 2.0) * voxel / supersample
    yy, xx = np.meshgrid(c, c, indexing="ij")
    fine = (xx**2 + yy**2 <= radius**2).astype(float)
    return fine.reshape(size, supersample, size, supersample).mean(axis=(1, 3))


def psnr_reference(test, reference):
    mse = np.mean((np.asarray(test) - np.asarray(reference)) ** 2)
    return 10.0 * math.log10(np.max(reference) ** 2 / mse)


def central_difference(f, x, direction, h):
    return (f(x + h * direction) - f(x - h * direction)) / (2 * h)


def network_gradient_check(net, x, target, mode, geom, loss_cfg, mask, h=1e-4):
    """Compare backprop against central differences on every parameter element.

    Batch norm runs on batch statistics without touching the running
    buffers, and the dropout mask is fixed, so the loss is a deterministic
    function of the parameters.  Elements whose +h and -h evaluations see
    different ReLU sign patterns straddle a kink and are skipped.  The
    error of an element is ``|a - b| / max(|a|, |b|, 1e-3 * max|g|)`` with
    ``g`` the analytic gradient of the whole tensor.

    Returns ``{param_name: (worst_error, checked, skipped)}``.
    """
    from petphys.losses import objective
    from petphys.micronet import loss_and_grads

    _, grads, _ = loss_and_grads(net, x, target, mode, geom, loss_cfg, mask=mask, training=True, update_stats=False)
    t = np.asarray(target, dtype=np.float64)

    def evaluate():
        y, c, cache = net.forward(x, mask=mask, training=True, update_stats=False)
        return objective(mode, (y, c), t, geom, loss_cfg)[0], net.relu_pattern(cache)

    out = {}
    for name, p in net.params.items():
        g = grads[name]
        floor = 1e-3 * float(np.max(np.abs(g))) if g.size else 0.0
        worst, checked, skipped = 0.0, 0, 0
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            f_plus, pat_plus = evaluate()
            flat[i] = old - h
            f_minus, pat_minus = evaluate()
            flat[i] = old
            if not np.array_equal(pat_plus, pat_minus):
                skipped += 1
                continue
            fd = (f_plus - f_minus) / (2 * h)
            an = float(g.reshape(-1)[i])
            denom = max(abs(fd), abs(an), floor)
            err = abs(fd - an) / denom if denom > 0 else 0.0
            worst = max(worst, err)
            checked += 1
        out[name] = (worst, checked, skipped)
    return out
