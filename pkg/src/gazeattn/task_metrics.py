"""Task-performance metrics: F-measure, MAE, interpolated AP/mAP, accuracy, fooling rate."""
import logging
from fractions import Fraction
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor_core import ShapeError, as_significance_map

log = logging.getLogger(__name__)

THRESHOLD_CEILING = 1.0 - 1e-12
DEFAULT_BETA2 = 0.3


@dataclass(frozen=True)
class RankedPredictions:
    """Scored items of one class; ``entries`` are ``(item_id, score, is_positive)``.

    Entries are stored sorted by descending score, ties by ``item_id``.
    """

    class_id: object
    entries: tuple

    def __post_init__(self):
        rows = [(str(i), float(s), bool(p)) for i, s, p in self.entries]
        if not all(np.isfinite(s) for _, s, _ in rows):
            raise ValueError(f"class {self.class_id!r} has non-finite scores")
        rows.sort(key=lambda r: (-r[1], r[0]))
        object.__setattr__(self, "entries", tuple(rows))

    @property
    def num_positives(self):
        return sum(p for _, _, p in self.entries)


@dataclass
class LabelPair:
    item_id: str
    clean_label: int
    perturbed_label: Optional[int] = None


@dataclass(frozen=True)
class FScores:
    adaptive: float  # mean per-image F at the adaptive threshold
    sweep_max: float  # max over 256 thresholds of F(mean P, mean R)
    clamped: int  # images whose adaptive threshold hit the ceiling


def _as_unit_map(s):
    s = as_significance_map(s)
    if s.min() < 0 or s.max() > 1:
        raise ValueError("saliency map values must lie in [0, 1]")
    return s


def _as_mask(g):
    g = np.asarray(g)
    if g.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {g.shape}")
    if not np.isin(g, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    return g.astype(bool)


def adaptive_threshold(s):
    """Twice the mean saliency, capped just below one."""
    s = _as_unit_map(s)
    return min(2.0 * float(s.mean()), THRESHOLD_CEILING)


def f_measure(precision, recall, beta2=DEFAULT_BETA2):
    """Weighted harmonic mean of precision and recall; 0 when both are 0."""
    if not (0 <= precision <= 1 and 0 <= recall <= 1):
        raise ValueError("precision and recall must lie in [0, 1]")
    denom = beta2 * precision + recall
    if denom == 0:
        return 0.0
    return (1 + beta2) * precision * recall / denom


def precision_recall(binary, mask):
    tp = int(np.count_nonzero(binary & mask))
    fp = int(np.count_nonzero(binary & ~mask))
    fn = int(np.count_nonzero(~binary & mask))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r


def f_adaptive(s, g, beta2=DEFAULT_BETA2):
    s = _as_unit_map(s)
    g = _as_mask(g)
    if s.shape != g.shape:
        raise ShapeError(f"prediction {s.shape} and mask {g.shape} differ")
    p, r = precision_recall(s >= adaptive_threshold(s), g)
    return f_measure(p, r, beta2)


def f_max(preds, gts, beta2=DEFAULT_BETA2, levels=256):
    """Dataset F-scores: adaptive-threshold mean and threshold-sweep maximum.

    ``preds`` and ``gts`` map image id to saliency map / binary mask.
    """
    if not preds:
        raise ValueError("empty dataset")
    missing = sorted(set(preds) ^ set(gts))
    if missing:
        raise ValueError(f"prediction/mask ids do not match: {missing[:5]}")
    thresholds = np.linspace(0.0, 1.0, levels)
    ps = np.zeros(levels)
    rs = np.zeros(levels)
    adaptive = []
    clamped = 0
    for key in sorted(preds):
        s = _as_unit_map(preds[key])
        g = _as_mask(gts[key])
        if s.shape != g.shape:
            raise ShapeError(f"image {key!r}: prediction {s.shape} and mask {g.shape} differ")
        if 2.0 * s.mean() > THRESHOLD_CEILING:
            clamped += 1
        adaptive.append(f_adaptive(s, g, beta2))
        for t, thr in enumerate(thresholds):
            p, r = precision_recall(s >= thr, g)
            ps[t] += p
            rs[t] += r
    ps /= len(preds)
    rs /= len(preds)
    sweep = max(f_measure(p, r, beta2) for p, r in zip(ps, rs))
    return FScores(float(np.mean(adaptive)), float(sweep), clamped)


def mae(s, g):
    s = as_significance_map(s)
    g = np.asarray(g, dtype=np.float64)
    if s.shape != g.shape:
        raise ShapeError(f"prediction {s.shape} and mask {g.shape} differ")
    return float(np.mean(np.abs(g - s)))


def average_precision(r):
    """Interpolated AP: mean over positives of the best precision at that recall or beyond.

    Precisions are exact rationals, so the result is correctly rounded.
    """
    n_pos = r.num_positives
    if n_pos == 0:
        raise ValueError(f"class {r.class_id!r} has no positives")
    precisions = []
    hits = 0
    for rank, (_, _, positive) in enumerate(r.entries, start=1):
        if positive:
            hits += 1
            precisions.append(Fraction(hits, rank))
    best, total = Fraction(0), Fraction(0)
    for p in reversed(precisions):
        best = max(best, p)
        total += best
    return float(total / n_pos)


def per_class_average_precision(classes):
    """AP per class id; classes without positives map to ``None``."""
    out = {}
    for r in classes:
        if r.num_positives == 0:
            log.warning("class %r has no positives; skipped", r.class_id)
            out[r.class_id] = None
        else:
            out[r.class_id] = average_precision(r)
    return out


def mean_average_precision(classes):
    aps = [ap for ap in per_class_average_precision(classes).values() if ap is not None]
    if not aps:
        raise ValueError("no scorable class")
    return sum(aps) / len(aps)


def ranked_from_probs(probs, labels, item_ids=None):
    """One :class:`RankedPredictions` per class from an ``(items, classes)`` probability matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if item_ids is None:
        item_ids = [f"{i:06d}" for i in range(len(labels))]
    return [
        RankedPredictions(c, tuple(zip(item_ids, probs[:, c], labels == c)))
        for c in range(probs.shape[1])
    ]


def accuracy(pairs):
    """Fraction of ``(predicted, truth)`` pairs that agree."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("accuracy of an empty set")
    return sum(int(p) == int(t) for p, t in pairs) / len(pairs)


def video_prediction(frame_probs):
    """Average per-frame class probabilities and take the argmax (ties -> lowest index)."""
    fp = np.asarray(frame_probs, dtype=np.float64)
    if fp.ndim != 2 or len(fp) == 0:
        raise ValueError("frame_probs must be a non-empty (frames, classes) array")
    return int(np.argmax(fp.mean(axis=0)))


def fooling_rate(pairs):
    pairs = list(pairs)
    if not pairs:
        raise ValueError("fooling rate of an empty set")
    for p in pairs:
        if p.perturbed_label is None:
            raise ValueError(f"item {p.item_id!r} has no perturbed label")
    return sum(p.clean_label != p.perturbed_label for p in pairs) / len(pairs)
