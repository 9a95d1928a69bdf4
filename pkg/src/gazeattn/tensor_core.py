"""Dense map types and the attention-application primitive.

Maps are plain float64 numpy arrays. Feature maps are ``(rows, cols,
channels)``; attention, significance and density maps are ``(rows, cols)``.
The ``as_*`` helpers validate and coerce; they never copy more than needed.
"""
import numpy as np


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


def _finite(a, what):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")
    return a


def as_feature_map(z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3 or min(z.shape) < 1:
        raise ShapeError(f"feature map must be (rows, cols, channels), got shape {z.shape}")
    return _finite(z, "feature map")


def as_significance_map(y):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or min(y.shape) < 1:
        raise ShapeError(f"map must be 2-D and non-empty, got shape {y.shape}")
    return _finite(y, "map")


def as_attention_map(a):
    a = as_significance_map(a)
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("attention map values must lie in [0, 1]")
    return a


def as_density_map(d):
    d = as_significance_map(d)
    if d.min() < 0.0:
        raise ValueError("density map must be nonnegative")
    return d


def apply_attention(z, a):
    """Glimpse ``G[i, j, d] = A[i, j] * Z[i, j, d]``."""
    z = as_feature_map(z)
    a = as_attention_map(a)
    if a.shape != z.shape[:2]:
        raise ShapeError(f"attention map {a.shape} does not match feature map {z.shape[:2]}")
    return a[:, :, None] * z


def _axis_weights(n_in, n_out):
    # half-pixel centres, clamped at the borders
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resample_map(m, new_height, new_width):
    """Bilinear resampling of a 2-D map to ``(new_height, new_width)``.

    Output is clamped to the source value range, so constant maps stay
    exactly constant and bounds are preserved.
    """
    m = as_significance_map(m)
    if new_height < 1 or new_width < 1:
        raise ShapeError(f"target dims must be positive, got {(new_height, new_width)}")
    if m.shape == (new_height, new_width):
        return m.copy()
    r0, r1, fr = _axis_weights(m.shape[0], new_height)
    c0, c1, fc = _axis_weights(m.shape[1], new_width)
    fr = fr[:, None]
    fc = fc[None, :]
    top = m[r0][:, c0] * (1.0 - fc) + m[r0][:, c1] * fc
    bottom = m[r1][:, c0] * (1.0 - fc) + m[r1][:, c1] * fc
    out = top * (1.0 - fr) + bottom * fr
    return np.clip(out, m.min(), m.max())
