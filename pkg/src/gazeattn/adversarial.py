"""Untargeted FGSM against the toy model and per-baseline fooling rates."""
from dataclasses import dataclass

import numpy as np

from .report import ReportTable
from .task_metrics import LabelPair, fooling_rate
from .toy_model import backward_batch, forward_batch


@dataclass(frozen=True)
class AttackConfig:
    eps: float
    clamp_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError("eps must be >= 0")
        lo, hi = self.clamp_range
        if not lo < hi:
            raise ValueError("clamp_range must satisfy min < max")


def input_gradient(params, images, labels, attn, densities=None):
    """d(loss)/d(input) per image (not averaged over the batch)."""
    fp = forward_batch(params, images, attn, densities)
    grads = backward_batch(params, fp, labels, attn)
    # backward_batch differentiates the batch mean
    return grads["input"] * len(labels)


def fgsm_perturb(params, image, label, cfg, attn, density=None):
    """``clip(x + eps * sign(dL/dx))`` for a single image at its true label."""
    dens = None if density is None else np.asarray(density)[None]
    return fgsm_batch(params, np.asarray(image)[None], [label], cfg, attn, dens)[0]


def fgsm_batch(params, images, labels, cfg, attn, densities=None):
    x = np.asarray(images, dtype=np.float64)
    if cfg.eps == 0:
        return x.copy()
    g = input_gradient(params, x, labels, attn, densities)
    lo, hi = cfg.clamp_range
    xp = np.clip(x + cfg.eps * np.sign(g), lo, hi)
    # x + eps can round one ulp past the ball; step those cells back toward x
    over = np.abs(xp - x) > cfg.eps
    while np.any(over):
        xp[over] = np.nextafter(xp[over], x[over])
        over = np.abs(xp - x) > cfg.eps
    return xp


@dataclass
class RobustnessResult:
    fooling_rates: dict  # baseline -> fooling rate
    clean_accuracy: dict  # baseline -> accuracy on clean inputs
    pairs: dict  # baseline -> list[LabelPair]

    def table(self, metadata=None):
        rows = sorted(self.fooling_rates)
        cells = [[self.clean_accuracy[b], self.fooling_rates[b]] for b in rows]
        return ReportTable(
            title="Fooling rates under FGSM",
            row_labels=rows,
            col_labels=["clean_accuracy", "fooling_rate"],
            cells=cells,
            metadata=dict(metadata or {}),
        )


def evaluate_robustness(params_per_baseline, dataset, cfg, attn_per_baseline, batch_size=128):
    """Clean vs FGSM-perturbed predictions for every baseline.

    ``params_per_baseline`` and ``attn_per_baseline`` are keyed by baseline
    name. Untrained parameters (``trained_steps == 0``) are refused.
    """
    fooling, clean_acc, pairs = {}, {}, {}
    for name in sorted(params_per_baseline):
        params = params_per_baseline[name]
        if params.trained_steps <= 0:
            raise ValueError(f"baseline {name!r} has untrained parameters")
        attn = attn_per_baseline[name]
        items = []
        correct = 0
        for s in range(0, len(dataset), batch_size):
            sl = slice(s, s + batch_size)
            x, y, d = dataset.images[sl], dataset.labels[sl], dataset.densities[sl]
            clean = np.argmax(forward_batch(params, x, attn, d).probs, axis=1)
            xp = fgsm_batch(params, x, y, cfg, attn, d)
            pert = np.argmax(forward_batch(params, xp, attn, d).probs, axis=1)
            correct += int(np.sum(clean == y))
            items.extend(
                LabelPair(i, int(c), int(p)) for i, c, p in zip(dataset.ids[sl], clean, pert)
            )
        pairs[name] = items
        fooling[name] = fooling_rate(items)
        clean_acc[name] = correct / len(dataset)
    return RobustnessResult(fooling, clean_acc, pairs)
