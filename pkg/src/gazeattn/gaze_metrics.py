"""Center-bias-resistant comparison of predicted maps against human fixations.

Two scores are provided: shuffled AUC, whose negatives are fixation
locations borrowed from other images, and information gain over a
baseline density built from those same shuffled fixations.
"""
import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from . import kernels
from .attention import to_distribution
from .tensor_core import ShapeError, as_density_map, as_significance_map


class ScoringError(ValueError):
    """An image cannot be scored (no positives or no negatives)."""


@dataclass(frozen=True)
class FixationSet:
    """Fixations of one image as integer ``(row, col)`` cells on a grid.

    Duplicates are kept: several observers may fixate the same cell.
    """

    image_id: str
    points: np.ndarray
    grid_height: int
    grid_width: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        if self.grid_height < 1 or self.grid_width < 1:
            raise ValueError("grid dims must be positive")
        bad = (pts[:, 0] < 0) | (pts[:, 0] >= self.grid_height) | (pts[:, 1] < 0) | (pts[:, 1] >= self.grid_width)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(
                f"fixation {tuple(pts[i])} of image {self.image_id!r} is outside the "
                f"{self.grid_height}x{self.grid_width} grid"
            )
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dims(self):
        return (self.grid_height, self.grid_width)

    @property
    def scorable(self):
        return len(self.points) > 0

    def __len__(self):
        return len(self.points)

    def flat_indices(self):
        return self.points[:, 0] * self.grid_width + self.points[:, 1]


@dataclass(frozen=True)
class ShuffleSpec:
    mode: str = "deterministic_union"
    num_shuffles: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("deterministic_union", "monte_carlo"):
            raise ValueError(f"unknown shuffle mode {self.mode!r}")
        if self.num_shuffles < 1:
            raise ValueError("num_shuffles must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def image_rng(seed, image_id):
    """RNG stream derived from ``(seed, image_id)`` so evaluation order never matters."""
    return np.random.default_rng([seed, zlib.crc32(image_id.encode("utf-8"))])


def _check_grid(pred, fix):
    if pred.shape != fix.dims:
        raise ShapeError(f"map {pred.shape} does not match fixation grid {fix.dims} of image {fix.image_id!r}")


def shuffled_negatives(fix, others):
    """Flat cell indices of other images' fixations, minus the positive cells."""
    pool = [o.flat_indices() for o in others if o.image_id != fix.image_id]
    for o in others:
        if o.dims != fix.dims:
            raise ShapeError(f"fixations of {o.image_id!r} are on a {o.dims} grid, expected {fix.dims}")
    if not pool:
        return np.empty(0, dtype=np.int64)
    neg = np.concatenate(pool)
    return neg[~np.isin(neg, fix.flat_indices())]


def auc_from_counts(greater, equal, n_pos, n_neg):
    return (2 * greater + equal) / (2 * n_pos * n_neg)


def rank_auc(pos_values, neg_values):
    """Mann-Whitney AUC with ties counted one half."""
    greater, equal = kernels.rank_counts(pos_values, neg_values)
    return auc_from_counts(greater, equal, len(pos_values), len(neg_values))


def s_auc(pred, fix, others, spec=None):
    """Shuffled AUC of ``pred`` at the fixations ``fix``.

    Negatives are the fixation locations of ``others`` (other images on the
    same grid), with any location coinciding with a positive dropped. In
    ``monte_carlo`` mode ``num_shuffles`` subsets of ``len(fix)`` negatives
    are drawn and the scores averaged.
    """
    spec = spec or ShuffleSpec()
    pred = as_significance_map(pred)
    _check_grid(pred, fix)
    if not fix.scorable:
        raise ScoringError(f"image {fix.image_id!r} has no fixations")
    neg = shuffled_negatives(fix, others)
    if len(neg) == 0:
        raise ScoringError(f"image {fix.image_id!r} has no shuffled negatives")
    flat = pred.ravel()
    pos_values = flat[fix.flat_indices()]
    if spec.mode == "deterministic_union":
        return rank_auc(pos_values, flat[neg])
    rng = image_rng(spec.seed, fix.image_id)
    n = len(pos_values)
    replace = len(neg) < n
    scores = [rank_auc(pos_values, flat[rng.choice(neg, size=n, replace=replace)]) for _ in range(spec.num_shuffles)]
    return float(np.mean(scores))


def info_gain(pred, fix, baseline, eps_norm=1e-9):
    """Mean log2 likelihood ratio (bits per fixation) of ``pred`` over ``baseline``.

    Both maps must be nonnegative; each is shifted by ``eps_norm`` and
    normalised to sum one before scoring. ``eps_norm=0`` is allowed when no
    fixated cell carries zero mass.
    """
    pred = as_density_map(pred)
    baseline = as_density_map(baseline)
    _check_grid(pred, fix)
    _check_grid(baseline, fix)
    if not fix.scorable:
        raise ScoringError(f"image {fix.image_id!r} has no fixations")
    if eps_norm < 0:
        raise ValueError("eps_norm must be >= 0")
    idx = fix.flat_indices()
    p_pred = to_distribution(pred, eps_norm).ravel()[idx]
    p_base = to_distribution(baseline, eps_norm).ravel()[idx]
    return float(np.mean(np.log2(p_pred) - np.log2(p_base)))


def default_blur_sigma(dims):
    return min(dims) / 16.0


def build_shuffled_baseline(others, dims, blur_sigma=None):
    """Blurred histogram of other images' fixations, normalised to sum one."""
    if not others:
        raise ValueError("at least one other fixation set is required")
    if blur_sigma is None:
        blur_sigma = default_blur_sigma(dims)
    counts = np.zeros(dims)
    for o in others:
        if o.dims != tuple(dims):
            raise ShapeError(f"fixations of {o.image_id!r} are on a {o.dims} grid, expected {tuple(dims)}")
        np.add.at(counts, (o.points[:, 0], o.points[:, 1]), 1.0)
    if blur_sigma > 0:
        # reflecting borders keep all mass on the grid
        counts = gaussian_filter(counts, blur_sigma, mode="reflect")
    total = counts.sum()
    if total == 0:
        return np.full(dims, 1.0 / (dims[0] * dims[1]))
    return counts / total


def pseudo_fixations(m, top_fraction, image_id="pseudo"):
    """The ``ceil(top_fraction * cells)`` highest cells of ``m`` as a fixation set.

    Ties are broken by ``(row, col)`` order.
    """
    if not 0 < top_fraction <= 1:
        raise ValueError("top_fraction must be in (0, 1]")
    m = as_significance_map(m)
    rows, cols = m.shape
    # guard against 0.3 * 10 == 3.0000000000000004
    count = min(rows * cols, max(1, math.ceil(top_fraction * rows * cols - 1e-9)))
    rr, cc = np.divmod(np.arange(rows * cols), cols)
    order = np.lexsort((cc, rr, -m.ravel()))[:count]
    pts = np.stack([rr[order], cc[order]], axis=1)
    return FixationSet(image_id, pts, rows, cols)


def fixations_from_density(density, top_fraction, image_id):
    """Fixation set from a blurred density map (top cells), for density-only datasets."""
    return pseudo_fixations(as_density_map(density), top_fraction, image_id=image_id)


@dataclass
class GazeScores:
    """Per-image gaze scores for one map source."""

    s_auc: dict = field(default_factory=dict)
    info_gain: dict = field(default_factory=dict)
    unscorable: list = field(default_factory=list)

    def mean(self, metric):
        vals = list(getattr(self, metric).values())
        return float(np.mean(vals)) if vals else float("nan")


def score_maps(maps, fixations, spec=None, blur_sigma=None, eps_norm=1e-9):
    """Score ``maps[image_id]`` against ``fixations[image_id]`` for every image.

    Each image's negatives and IG baseline come from all the other images in
    ``fixations``. Images without fixations are listed as unscorable.
    """
    spec = spec or ShuffleSpec()
    out = GazeScores()
    all_sets = [fixations[k] for k in sorted(fixations)]
    for image_id in sorted(maps):
        fix = fixations[image_id]
        others = [o for o in all_sets if o.image_id != image_id and o.scorable]
        if not fix.scorable or not others:
            out.unscorable.append(image_id)
            continue
        m = np.asarray(maps[image_id], dtype=np.float64)
        try:
            out.s_auc[image_id] = s_auc(m, fix, others, spec)
        except ScoringError:
            out.unscorable.append(image_id)
            continue
        base = build_shuffled_baseline(others, fix.dims, blur_sigma)
        if m.min() >= 0:
            out.info_gain[image_id] = info_gain(m, fix, base, eps_norm)
    return out
