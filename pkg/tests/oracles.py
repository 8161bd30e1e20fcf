"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (scalar loops, direct formulas) and
stays separate from the library code it checks.
"""

from __future__ import annotations

import numpy as np


def naive_conv2d(x, w, b, stride, pad_rows, pad_cols, mode):
    """Quadruple-loop cross-correlation over an explicitly padded input."""
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    width = ((0, 0), (0, 0), pad_rows, pad_cols)
    xp = np.pad(x, width) if mode == "zero" else np.pad(x, width, mode="reflect")
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for ni in range(n):
        for co in range(cout):
            for oi in range(ho):
                for oj in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for ki in range(k):
                            for kj in range(k):
                                acc += float(xp[ni, ci, oi * stride + ki, oj * stride + kj]) * float(
                                    w[co, ci, ki, kj]
                                )
                    out[ni, co, oi, oj] = acc + float(b[co])
    return out


def scalar_bilinear_upsample2x(x):
    """Per-element half-pixel-center interpolation with edge clamping."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, 2 * h, 2 * w), dtype=np.float64)
    for ni in range(n):
        for ci in range(c):
            for oi in range(2 * h):
                for oj in range(2 * w):
                    yi = (oi + 0.5) / 2.0 - 0.5
                    xj = (oj + 0.5) / 2.0 - 0.5
                    y0 = int(np.floor(yi))
                    x0 = int(np.floor(xj))
                    fy = yi - y0
                    fx = xj - x0
                    y0c = min(max(y0, 0), h - 1)
                    y1c = min(max(y0 + 1, 0), h - 1)
                    x0c = min(max(x0, 0), w - 1)
                    x1c = min(max(x0 + 1, 0), w - 1)
                    top = (1 - fx) * float(x[ni, ci, y0c, x0c]) + fx * float(x[ni, ci, y0c, x1c])
                    bot = (1 - fx) * float(x[ni, ci, y1c, x0c]) + fx * float(x[ni, ci, y1c, x1c])
                    out[ni, ci, oi, oj] = (1 - fy) * top + fy * bot
    return out


def central_difference(loss_fn, arrays, index, h=1e-3):
    """Central finite differences of ``loss_fn(arrays)`` w.r.t. one array."""
    base = arrays[index]
    grad = np.zeros_like(base, dtype=np.float64)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = loss_fn(arrays)
        flat[i] = orig - h
        lo = loss_fn(arrays)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def gradcheck(loss_fn, analytic_grads, arrays, h=1e-3, tol=1e-3):
    """Assert |analytic - fd| <= tol * max(1, |fd|) elementwise for all inputs."""
    worst = 0.0
    for index, analytic in enumerate(analytic_grads):
        if analytic is None:
            continue
        fd = central_difference(loss_fn, arrays, index, h=h)
        denom = np.maximum(1.0, np.abs(fd))
        dev = np.abs(np.asarray(analytic, dtype=np.float64) - fd) / denom
        worst = max(worst, float(dev.max()))
    assert worst < tol, f"gradient deviation {worst:.3e} exceeds {tol}"
    return worst
