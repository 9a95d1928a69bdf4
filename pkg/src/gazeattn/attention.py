"""Attention kernels for the five baselines and the supervision loss.

Baselines:

* ``activation_posthoc`` - channel statistics of |Z|^p, no trainable parts
* ``softmax``            - softmax over all spatial cells of a significance map
* ``sigmoid``            - independent per-cell sigmoid
* ``supervised``         - softmax/sigmoid attention plus a KL term pulling it
                           toward human gaze density
* ``human``              - the gaze density itself replaces the learned map
"""
import warnings
from dataclasses import dataclass

import numpy as np

from .tensor_core import as_density_map, as_feature_map, as_significance_map, resample_map

KINDS = ("activation_posthoc", "softmax", "sigmoid", "supervised", "human")
IMPLICIT_KINDS = ("activation_posthoc", "softmax", "sigmoid")


class DegenerateMapWarning(UserWarning):
    """A map carried no mass (e.g. an all-zero gaze density)."""


@dataclass(frozen=True)
class AttentionConfig:
    kind: str = "sigmoid"
    activation_exponent: float = 2.0
    supervision_weight: float = 0.01
    eps_norm: float = 1e-9
    # activation used by the learned branch of the supervised baseline
    supervised_activation: str = "sigmoid"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attention kind {self.kind!r}; expected one of {KINDS}")
        if not self.activation_exponent > 0:
            raise ValueError("activation_exponent must be > 0")
        if not self.supervision_weight >= 0:
            raise ValueError("supervision_weight must be >= 0")
        if not self.eps_norm > 0:
            raise ValueError("eps_norm must be > 0")
        if self.supervised_activation not in ("sigmoid", "softmax"):
            raise ValueError("supervised_activation must be 'sigmoid' or 'softmax'")

    @property
    def activation(self):
        """Squashing function of the learned branch, or None if there is none."""
        if self.kind in ("softmax", "sigmoid"):
            return self.kind
        if self.kind == "supervised":
            return self.supervised_activation
        return None


def softmax_attention(y):
    y = as_significance_map(y)
    e = np.exp(y - y.max())
    return e / e.sum()


def sigmoid_attention(y):
    y = as_significance_map(y)
    # split by sign so exp never overflows
    out = np.empty_like(y)
    pos = y >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-y[pos]))
    ey = np.exp(y[~pos])
    out[~pos] = ey / (1.0 + ey)
    return out


def activation_attention(z, p=2.0):
    """Unnormalised post-hoc map ``sum_d |Z[..., d]|**p``."""
    if not p > 0:
        raise ValueError("exponent p must be > 0")
    z = as_feature_map(z)
    az = np.abs(z)
    powered = az * az if p == 2 else az**p
    # channel-by-channel accumulation keeps the summation order fixed
    out = np.zeros(z.shape[:2])
    for d in range(z.shape[2]):
        out += powered[:, :, d]
    return out


def normalize_to_unit(a_raw):
    """Divide a nonnegative map by its maximum (the zero map stays zero)."""
    a_raw = as_significance_map(a_raw)
    if a_raw.min() < 0:
        raise ValueError("normalize_to_unit expects a nonnegative map")
    top = a_raw.max()
    if top == 0:
        return np.zeros_like(a_raw)
    return a_raw / top


def human_attention(density, target_dims):
    """Gaze density resampled to ``target_dims`` and max-normalised to [0, 1].

    An all-zero density yields the zero map and a ``DegenerateMapWarning``.
    """
    d = as_density_map(density)
    d = resample_map(d, *target_dims)
    if d.max() == 0:
        warnings.warn("gaze density has no mass; human attention is the zero map", DegenerateMapWarning, stacklevel=2)
    return normalize_to_unit(d)


def to_distribution(m, eps):
    s = np.asarray(m, dtype=np.float64) + eps
    return s / s.sum()


def attention_kl_loss(a, h, eps_norm=1e-9):
    """KL(human || attention) in nats between eps-regularised, sum-normalised maps.

    ``h`` is resampled to the attention grid when the dimensions differ.
    """
    a = as_density_map(a)
    h = as_density_map(h)
    if h.shape != a.shape:
        h = resample_map(h, *a.shape)
    p = to_distribution(h, eps_norm)
    q = to_distribution(a, eps_norm)
    kl = float(np.sum(p * (np.log(p) - np.log(q))))
    return max(kl, 0.0)


def attention_kl_grad(a, h, eps_norm=1e-9):
    """Gradient of :func:`attention_kl_loss` with respect to the attention map."""
    s = np.asarray(a, dtype=np.float64) + eps_norm
    p = to_distribution(h, eps_norm)
    return 1.0 / s.sum() - p / s
