"""A small attentive classifier with hand-written gradients.

Architecture (channels-last, one image ``(k, k, c_in)``)::

    X -> conv3x3(frozen) -> ReLU -> Z            [-> 2x2 avg pool for late fusion]
    Z/gain -> conv3x3(D -> D//2) -> ReLU -> conv1x1(-> 1) -> Y -> sigmoid / softmax -> A
    G = A * Z  ->  spatial mean  ->  linear  ->  softmax

The attention branch is bypassed by the ``human`` baseline (A is the
max-normalised gaze density) and by ``activation_posthoc`` (A = 1; the
post-hoc map is only reported). Batch normalisation is left out.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .attention import (
    AttentionConfig,
    activation_attention,
    attention_kl_grad,
    attention_kl_loss,
    human_attention,
    normalize_to_unit,
)
from .tensor_core import ShapeError, resample_map

PROB_FLOOR = 1e-12
TRAINABLE = ("attn1_w", "attn1_b", "attn2_w", "attn2_b", "cls_w", "cls_b")
FROZEN = ("feat_w", "feat_b")
PARAM_NAMES = FROZEN + TRAINABLE
CHECKPOINT_MAGIC = "gazeattn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    grid: int = 8
    in_channels: int = 3
    features: int = 16
    num_classes: int = 4
    fusion: str = "early"
    # output scale of the frozen random feature conv
    feature_gain: float = 32.0

    def __post_init__(self):
        if self.fusion not in ("early", "late"):
            raise ValueError("fusion must be 'early' or 'late'")
        if self.features < 2:
            raise ValueError("need at least 2 feature channels")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if not self.feature_gain > 0:
            raise ValueError("feature_gain must be > 0")
        if self.fusion == "late" and self.grid % 2:
            raise ValueError("late fusion needs an even grid")

    @property
    def attention_dims(self):
        k = self.grid // 2 if self.fusion == "late" else self.grid
        return (k, k)


@dataclass
class ModelParams:
    config: ModelConfig
    feat_w: np.ndarray
    feat_b: np.ndarray
    attn1_w: np.ndarray
    attn1_b: np.ndarray
    attn2_w: np.ndarray
    attn2_b: np.ndarray
    cls_w: np.ndarray
    cls_b: np.ndarray
    trained_steps: int = 0

    def tensors(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self):
        return replace(self, **{k: v.copy() for k, v in self.tensors().items()})

    def check_finite(self):
        for name, t in self.tensors().items():
            if not np.all(np.isfinite(t)):
                raise FloatingPointError(f"parameter {name} became non-finite")


def init_params(config, seed=0):
    rng = np.random.default_rng(seed)
    c, d, h, k = config.in_channels, config.features, config.features // 2, config.num_classes

    def he(*shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    feat_w = he(3, 3, c, d, fan_in=9 * c)
    # zero-mean filters ignore flat background, so pooled features carry texture
    feat_w -= feat_w.mean(axis=(0, 1, 2), keepdims=True)
    return ModelParams(
        config=config,
        feat_w=config.feature_gain * feat_w,
        feat_b=np.zeros(d),
        attn1_w=he(3, 3, d, h, fan_in=9 * d),
        attn1_b=np.zeros(h),
        attn2_w=rng.normal(0.0, 0.1, size=h),
        attn2_b=np.zeros(()),
        # zero classifier: every baseline starts at loss ln(num_classes)
        cls_w=np.zeros((d, k)),
        cls_b=np.zeros(k),
    )


@dataclass
class ForwardPass:
    logits: np.ndarray  # (N, classes)
    probs: np.ndarray  # (N, classes)
    attention: np.ndarray  # (N, K, K') map reported for analysis
    features: np.ndarray  # (N, K, K', D) attended feature map Z
    cache: dict = field(repr=False, default_factory=dict)


def _softmax_rows(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(y):
    out = np.empty_like(y)
    pos = y >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-y[pos]))
    ey = np.exp(y[~pos])
    out[~pos] = ey / (1.0 + ey)
    return out


def _avg_pool2(z):
    n, h, w, d = z.shape
    return z.reshape(n, h // 2, 2, w // 2, 2, d).mean(axis=(2, 4))


def _avg_unpool2(dz):
    return np.repeat(np.repeat(dz, 2, axis=1), 2, axis=2) / 4.0


def gaze_targets(densities, dims):
    """Gaze densities resampled to the attention grid (for the human map and KL term)."""
    return np.stack([resample_map(d, *dims) for d in densities])


def forward_batch(params, images, attn, densities=None):
    """Forward pass on a batch ``(N, k, k, c_in)``.

    ``densities`` ``(N, k, k)`` are required by the ``human`` and
    ``supervised`` baselines.
    """
    cfg = params.config
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != (cfg.grid, cfg.grid, cfg.in_channels):
        raise ShapeError(f"images must be (N, {cfg.grid}, {cfg.grid}, {cfg.in_channels}), got {x.shape}")
    if attn.kind in ("human", "supervised") and densities is None:
        raise ValueError(f"baseline {attn.kind!r} needs gaze densities")
    n = len(x)
    pre_z = kernels.conv2d_forward(x, params.feat_w, params.feat_b)
    z_full = np.maximum(pre_z, 0.0)
    z = _avg_pool2(z_full) if cfg.fusion == "late" else z_full
    dims = z.shape[1:3]
    cache = {"x": x, "pre_z": pre_z, "z": z}

    targets = None
    if densities is not None:
        targets = gaze_targets(densities, dims)
        cache["targets"] = targets

    if attn.kind == "activation_posthoc":
        applied = np.ones((n,) + dims)
        raw = np.stack([activation_attention(zi, attn.activation_exponent) for zi in z])
        reported = np.stack([normalize_to_unit(r) for r in raw])
    elif attn.kind == "human":
        applied = np.stack([human_attention(t, dims) for t in targets])
        reported = applied
    else:
        # the branch sees gain-normalised features, standing in for the omitted BN
        pre_h = kernels.conv2d_forward(z / cfg.feature_gain, params.attn1_w, params.attn1_b)
        h = np.maximum(pre_h, 0.0)
        y = h @ params.attn2_w + params.attn2_b
        if attn.activation == "sigmoid":
            applied = _sigmoid(y)
        else:
            applied = _softmax_rows(y.reshape(n, -1)).reshape(y.shape)
        reported = applied
        cache.update(pre_h=pre_h, h=h)
    cache["a"] = applied

    g = applied[..., None] * z
    v = g.mean(axis=(1, 2))
    logits = v @ params.cls_w + params.cls_b
    probs = _softmax_rows(logits)
    cache.update(v=v, probs=probs)
    return ForwardPass(logits, probs, reported, z, cache)


def forward(params, image, attn, density=None):
    """Single-image forward; returns ``(logits, probs, attention_map, feature_map)``."""
    dens = None if density is None else np.asarray(density)[None]
    fp = forward_batch(params, np.asarray(image)[None], attn, dens)
    return fp.logits[0], fp.probs[0], fp.attention[0], fp.features[0]


def supervision_weight(attn):
    return attn.supervision_weight if attn.kind == "supervised" else 0.0


def loss(probs, label, attention_map, gaze_density, lam, eps_norm=1e-9):
    """Cross-entropy plus ``lam`` times KL(gaze || attention); returns ``(total, ce, kl)``."""
    probs = np.asarray(probs, dtype=np.float64)
    ce = -float(np.log(max(probs[int(label)], PROB_FLOOR)))
    kl = 0.0
    if lam > 0:
        kl = attention_kl_loss(attention_map, gaze_density, eps_norm)
    return ce + lam * kl, ce, kl


def batch_losses(fp, labels, attn):
    """Per-sample ``(total, ce, kl)`` arrays for a forward pass."""
    labels = np.asarray(labels)
    p_true = fp.probs[np.arange(len(labels)), labels]
    ce = -np.log(np.maximum(p_true, PROB_FLOOR))
    lam = supervision_weight(attn)
    kl = np.zeros_like(ce)
    if lam > 0:
        a, t = fp.cache["a"], fp.cache["targets"]
        kl = np.array([attention_kl_loss(a[i], t[i], attn.eps_norm) for i in range(len(labels))])
    return ce + lam * kl, ce, kl


def backward_batch(params, fp, labels, attn):
    """Gradients of the batch-mean loss.

    Returns a dict with one entry per parameter (frozen ones included) and
    ``"input"`` for the gradient with respect to the images.
    """
    cfg = params.config
    c = fp.cache
    x, pre_z, z, a, v = c["x"], c["pre_z"], c["z"], c["a"], c["v"]
    labels = np.asarray(labels)
    n = len(labels)
    cells = z.shape[1] * z.shape[2]

    idx = np.arange(n)
    dlogits = fp.probs.copy()
    dlogits[idx, labels] -= 1.0
    floored = fp.probs[idx, labels] < PROB_FLOOR
    dlogits[floored] = 0.0
    dlogits /= n

    grads = {}
    grads["cls_w"] = v.T @ dlogits
    grads["cls_b"] = dlogits.sum(axis=0)
    dv = dlogits @ params.cls_w.T
    dg = np.broadcast_to(dv[:, None, None, :] / cells, z.shape)
    dz = a[..., None] * dg

    grads["attn1_w"] = np.zeros_like(params.attn1_w)
    grads["attn1_b"] = np.zeros_like(params.attn1_b)
    grads["attn2_w"] = np.zeros_like(params.attn2_w)
    grads["attn2_b"] = np.zeros_like(params.attn2_b)
    if attn.activation is not None:
        da = np.einsum("nijd,nijd->nij", dg, z)
        lam = supervision_weight(attn)
        if lam > 0:
            t = c["targets"]
            da = da + (lam / n) * np.stack([attention_kl_grad(a[i], t[i], attn.eps_norm) for i in range(n)])
        if attn.activation == "sigmoid":
            dy = da * a * (1.0 - a)
        else:
            dy = a * (da - (a * da).sum(axis=(1, 2), keepdims=True))
        h, pre_h = c["h"], c["pre_h"]
        grads["attn2_w"] = np.einsum("nijc,nij->c", h, dy)
        grads["attn2_b"] = np.asarray(dy.sum())
        dpre_h = dy[..., None] * params.attn2_w * (pre_h > 0)
        grads["attn1_w"] = kernels.conv2d_grad_weight(z / cfg.feature_gain, dpre_h, 3, 3)
        grads["attn1_b"] = dpre_h.sum(axis=(0, 1, 2))
        dz = dz + kernels.conv2d_grad_input(dpre_h, params.attn1_w) / cfg.feature_gain

    if cfg.fusion == "late":
        dz = _avg_unpool2(dz)
    dpre_z = dz * (pre_z > 0)
    grads["feat_w"] = kernels.conv2d_grad_weight(x, dpre_z, 3, 3)
    grads["feat_b"] = dpre_z.sum(axis=(0, 1, 2))
    grads["input"] = kernels.conv2d_grad_input(dpre_z, params.feat_w)
    return grads


def backward(params, image, label, attn, density=None):
    """Gradients for one sample; see :func:`backward_batch`."""
    dens = None if density is None else np.asarray(density)[None]
    fp = forward_batch(params, np.asarray(image)[None], attn, dens)
    grads = backward_batch(params, fp, [label], attn)
    grads["input"] = grads["input"][0]
    return grads


def predict(params, images, attn, densities=None, batch_size=256):
    """Class probabilities and reported attention maps for many images."""
    probs, maps = [], []
    for s in range(0, len(images), batch_size):
        dens = None if densities is None else densities[s:s + batch_size]
        fp = forward_batch(params, images[s:s + batch_size], attn, dens)
        probs.append(fp.probs)
        maps.append(fp.attention)
    return np.concatenate(probs), np.concatenate(maps)


def save_checkpoint(params, path, meta=None):
    """Write parameters as a versioned text file with one shape header per tensor.

    Values use ``repr`` so they round-trip exactly.
    """
    cfg = params.config
    lines = [
        f"# {CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}",
        f"config grid={cfg.grid} in_channels={cfg.in_channels} features={cfg.features} "
        f"num_classes={cfg.num_classes} fusion={cfg.fusion} feature_gain={cfg.feature_gain!r}",
        f"trained_steps {params.trained_steps}",
    ]
    for key, val in sorted((meta or {}).items()):
        lines.append(f"meta {key}={val}")
    for name, t in params.tensors().items():
        shape = " ".join(str(s) for s in t.shape)
        lines.append(f"tensor {name} {t.ndim} {shape}".rstrip())
        lines.append(" ".join(repr(float(x)) for x in t.ravel()))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`; returns ``(params, meta)``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"# {CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: line 1: not a v{CHECKPOINT_VERSION} checkpoint")
    cfg_fields, tensors, meta, steps = {}, {}, {}, 0
    i = 1
    while i < len(lines):
        line = lines[i]
        head, _, rest = line.partition(" ")
        if head == "config":
            for kv in rest.split():
                k, _, val = kv.partition("=")
                if k == "fusion":
                    cfg_fields[k] = val
                elif k == "feature_gain":
                    cfg_fields[k] = float(val)
                else:
                    cfg_fields[k] = int(val)
        elif head == "trained_steps":
            steps = int(rest)
        elif head == "meta":
            k, _, val = rest.partition("=")
            meta[k] = val
        elif head == "tensor":
            parts = rest.split()
            name, ndim = parts[0], int(parts[1])
            shape = tuple(int(s) for s in parts[2:2 + ndim])
            if i + 1 >= len(lines):
                raise ValueError(f"{path}: line {i + 1}: tensor {name} has no values")
            body = lines[i + 1].split()
            try:
                vals = np.array([float(s) for s in body])
            except ValueError as exc:
                raise ValueError(f"{path}: line {i + 2}: {exc}") from None
            if vals.size != int(np.prod(shape)):
                raise ValueError(f"{path}: line {i + 2}: expected {int(np.prod(shape))} values, got {vals.size}")
            tensors[name] = vals.reshape(shape)
            i += 1
        elif line.strip():
            raise ValueError(f"{path}: line {i + 1}: unexpected record {head!r}")
        i += 1
    missing = set(PARAM_NAMES) - set(tensors)
    if missing:
        raise ValueError(f"{path}: missing tensors {sorted(missing)}")
    return ModelParams(config=ModelConfig(**cfg_fields), trained_steps=steps, **tensors), meta


def default_attention(kind, supervision_weight=0.01):
    return AttentionConfig(kind=kind, supervision_weight=supervision_weight)
