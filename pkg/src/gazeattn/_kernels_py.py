"""Pure numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` signature for signature. Convolutions are
"same" zero-padded, stride 1, odd kernel sizes, channels-last layout
``(batch, rows, cols, channels)``.
"""
import numpy as np


def conv2d_forward(x, w, b):
    n, h, wd, _ = x.shape
    kh, kw, _, cout = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.empty((n, h, wd, cout))
    out[...] = b
    for di in range(kh):
        for dj in range(kw):
            out += xp[:, di:di + h, dj:dj + wd, :] @ w[di, dj]
    return out


def conv2d_grad_input(dout, w):
    n, h, wd, _ = dout.shape
    kh, kw, cin, _ = w.shape
    ph, pw = kh // 2, kw // 2
    dxp = np.zeros((n, h + 2 * ph, wd + 2 * pw, cin))
    for di in range(kh):
        for dj in range(kw):
            dxp[:, di:di + h, dj:dj + wd, :] += dout @ w[di, dj].T
    return dxp[:, ph:ph + h, pw:pw + wd, :].copy()


def conv2d_grad_weight(x, dout, kh, kw):
    n, h, wd, cin = x.shape
    cout = dout.shape[3]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    dw = np.empty((kh, kw, cin, cout))
    for di in range(kh):
        for dj in range(kw):
            dw[di, dj] = np.tensordot(xp[:, di:di + h, dj:dj + wd, :], dout, axes=([0, 1, 2], [0, 1, 2]))
    return dw


def rank_counts(pos, neg):
    """Return ``(#(p > q), #(p == q))`` over all pairs of positives and negatives."""
    neg = np.sort(np.asarray(neg, dtype=np.float64))
    pos = np.asarray(pos, dtype=np.float64)
    lo = np.searchsorted(neg, pos, side="left")
    hi = np.searchsorted(neg, pos, side="right")
    return int(lo.sum()), int((hi - lo).sum())
