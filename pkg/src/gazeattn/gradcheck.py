"""Central finite-difference audit of the toy model's hand-derived gradients."""
from dataclasses import dataclass, field

import numpy as np

from .attention import KINDS
from .synthetic import generate_synthetic_task
from .toy_model import TRAINABLE, ModelConfig, backward_batch, batch_losses, default_attention, forward_batch, init_params

STEP = 1e-5
# relative error denominators never drop below this, so near-zero entries
# are judged on absolute error instead
ABS_FLOOR = 1e-6
TOLERANCE = 1e-4


def relative_error(analytic, numeric, floor=ABS_FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _randomized_params(config, seed):
    """Small model with every group nonzero, so no gradient path is trivially dead."""
    rng = np.random.default_rng([seed, 7])
    p = init_params(config, seed)
    p.feat_b = rng.normal(0.0, 0.1, size=p.feat_b.shape)
    p.attn1_b = rng.normal(0.0, 0.1, size=p.attn1_b.shape)
    p.attn2_w = rng.normal(0.0, 1.0, size=p.attn2_w.shape)
    p.attn2_b = np.asarray(rng.normal(0.0, 0.5))
    p.cls_w = rng.normal(0.0, 1.0, size=p.cls_w.shape)
    p.cls_b = rng.normal(0.0, 0.1, size=p.cls_b.shape)
    return p


def _mean_loss(params, x, y, attn, dens):
    total, _, _ = batch_losses(forward_batch(params, x, attn, dens), y, attn)
    return float(total.mean())


@dataclass
class GradcheckReport:
    errors: dict = field(default_factory=dict)  # (baseline, fusion, group) -> max relative error

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    def passed(self, tol=TOLERANCE):
        return self.max_error < tol

    def lines(self):
        out = [f"{b:<18} {f:<5} {g:<8} {e:.3e}" for (b, f, g), e in sorted(self.errors.items())]
        out.append(f"max relative error {self.max_error:.3e}")
        return out


def run_gradcheck(seed=0, samples=5, step=STEP, kinds=KINDS, fusions=("early", "late")):
    """Compare analytic gradients with central differences for every trainable group and the input.

    Uses ``samples`` seeded synthetic images on a small randomized model.
    """
    data = generate_synthetic_task(num_classes=3, grid=6, samples=samples, seed=seed, channels=2, patch=2)
    x, y, dens = data.images, data.labels, data.densities
    report = GradcheckReport()
    for fusion in fusions:
        config = ModelConfig(grid=6, in_channels=2, features=4, num_classes=3, fusion=fusion, feature_gain=1.0)
        base = _randomized_params(config, seed)
        for kind in kinds:
            attn = default_attention(kind)
            analytic = backward_batch(base, forward_batch(base, x, attn, dens), y, attn)
            for group in TRAINABLE:
                p = base.copy()
                t = getattr(p, group)
                num = np.zeros_like(t)
                for i in np.ndindex(t.shape):
                    old = t[i]
                    t[i] = old + step
                    up = _mean_loss(p, x, y, attn, dens)
                    t[i] = old - step
                    down = _mean_loss(p, x, y, attn, dens)
                    t[i] = old
                    num[i] = (up - down) / (2 * step)
                report.errors[(kind, fusion, group)] = float(relative_error(analytic[group], num).max(initial=0.0))
            xi = x.copy()
            num = np.zeros_like(xi)
            for i in np.ndindex(xi.shape):
                old = xi[i]
                xi[i] = old + step
                up = _mean_loss(base, xi, y, attn, dens)
                xi[i] = old - step
                down = _mean_loss(base, xi, y, attn, dens)
                xi[i] = old
                num[i] = (up - down) / (2 * step)
            report.errors[(kind, fusion, "input")] = float(relative_error(analytic["input"], num).max())
    return report
