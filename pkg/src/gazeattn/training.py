"""Seeded minibatch training of the toy model."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionConfig
from .toy_model import (
    TRAINABLE,
    ModelConfig,
    backward_batch,
    batch_losses,
    forward_batch,
    init_params,
)

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    baseline: str = "sigmoid"
    learning_rate: float = 0.01
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 200
    batch_size: int = 32
    seed: int = 0
    supervision_weight: float = 0.01
    # classifier step size relative to the attention branch
    classifier_lr_scale: float = 10.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not self.classifier_lr_scale > 0:
            raise ValueError("classifier_lr_scale must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "plain_gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        self.attention()  # validates baseline / weight

    def attention(self):
        return AttentionConfig(kind=self.baseline, supervision_weight=self.supervision_weight)

    def rates(self):
        """Per-parameter learning rates."""
        return {
            k: self.learning_rate * (self.classifier_lr_scale if k.startswith("cls_") else 1.0)
            for k in TRAINABLE
        }


@dataclass
class TrainResult:
    params: object
    loss_trace: list  # (step, total, ce, kl) per step, batch means
    epoch_metrics: list = field(default_factory=list)
    initial_loss: float = math.nan  # full-dataset mean loss before the first step
    final_loss: float = math.nan  # full-dataset mean loss after the last step


def dataset_loss(params, dataset, attn, batch_size=256):
    """Mean total loss and accuracy over the whole dataset."""
    totals, correct = [], 0
    for s in range(0, len(dataset), batch_size):
        sl = slice(s, s + batch_size)
        fp = forward_batch(params, dataset.images[sl], attn, dataset.densities[sl])
        total, _, _ = batch_losses(fp, dataset.labels[sl], attn)
        totals.append(total)
        correct += int(np.sum(np.argmax(fp.probs, axis=1) == dataset.labels[sl]))
    return float(np.concatenate(totals).mean()), correct / len(dataset)


class Adam:
    """``lr`` is a scalar or a dict keyed by parameter name."""

    def __init__(self, params, lr, beta1, beta2, eps):
        self.lr = lr if isinstance(lr, dict) else dict.fromkeys(TRAINABLE, lr)
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(getattr(params, k)) for k in TRAINABLE}
        self.v = {k: np.zeros_like(getattr(params, k)) for k in TRAINABLE}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in TRAINABLE:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            upd = self.lr[k] * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            setattr(params, k, getattr(params, k) - upd)


class PlainGD:
    def __init__(self, lr):
        self.lr = lr if isinstance(lr, dict) else dict.fromkeys(TRAINABLE, lr)

    def step(self, params, grads):
        for k in TRAINABLE:
            setattr(params, k, getattr(params, k) - self.lr[k] * grads[k])


def train(dataset, config, params=None, model_config=None):
    """Train one baseline; frozen feature-conv parameters are never touched.

    ``params`` defaults to :func:`init_params` seeded by ``config.seed``.
    Raises :class:`TrainingDivergedError` on a non-finite loss.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    attn = config.attention()
    if params is None:
        if model_config is None:
            k = dataset.images.shape[1]
            model_config = ModelConfig(grid=k, in_channels=dataset.images.shape[3], num_classes=dataset.num_classes)
        params = init_params(model_config, config.seed)
    else:
        params = params.copy()
    if config.optimizer == "adam":
        opt = Adam(params, config.rates(), config.beta1, config.beta2, config.adam_eps)
    else:
        opt = PlainGD(config.rates())

    rng = np.random.default_rng([config.seed, 1])
    n = len(dataset)
    initial, _ = dataset_loss(params, dataset, attn)
    trace, epochs = [], []
    order, pos, epoch = rng.permutation(n), 0, 0
    for step in range(1, config.steps + 1):
        if pos >= n:
            epoch += 1
            loss_val, acc = dataset_loss(params, dataset, attn)
            epochs.append({"epoch": epoch, "step": step - 1, "loss": loss_val, "accuracy": acc})
            order, pos = rng.permutation(n), 0
        # sorted so a batch's loss does not depend on its draw order
        batch = np.sort(order[pos:pos + config.batch_size])
        pos += config.batch_size
        fp = forward_batch(params, dataset.images[batch], attn, dataset.densities[batch])
        total, ce, kl = batch_losses(fp, dataset.labels[batch], attn)
        row = (step, float(total.mean()), float(ce.mean()), float(kl.mean()))
        if not all(math.isfinite(x) for x in row[1:]):
            raise TrainingDivergedError(f"non-finite loss at step {step}: total={row[1]} ce={row[2]} kl={row[3]}")
        trace.append(row)
        grads = backward_batch(params, fp, dataset.labels[batch], attn)
        opt.step(params, grads)
        try:
            params.check_finite()
        except FloatingPointError as exc:
            raise TrainingDivergedError(f"step {step}: {exc}") from None
    params.trained_steps += config.steps
    final, acc = dataset_loss(params, dataset, attn)
    epochs.append({"epoch": epoch + 1, "step": config.steps, "loss": final, "accuracy": acc})
    log.info("trained %s: loss %.4f -> %.4f", config.baseline, initial, final)
    return TrainResult(params, trace, epochs, initial, final)


def write_loss_trace(trace, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,total_loss,ce_loss,kl_loss\n")
        for step, total, ce, kl in trace:
            fh.write(f"{step},{total!r},{ce!r},{kl!r}\n")
