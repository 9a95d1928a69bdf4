"""Seeded synthetic classification task with gaze.

Each image holds one class-informative patch and several distractor
patches carrying other classes' signatures. With probability ``cue_prob``
the informative patch is drawn at a higher contrast than the distractors,
which both pooled features and learned attention can pick up; otherwise
all patches share one contrast and nothing in the pixels says which one
matters. Gaze density is an isotropic Gaussian centred on the informative
patch in every image and fixations are sampled from it, so gaze carries
task knowledge the pixels only partly reveal.
"""
from dataclasses import dataclass

import numpy as np

from .gaze_metrics import FixationSet


@dataclass
class SyntheticDataset:
    ids: list
    images: np.ndarray  # (N, k, k, c) in [0, 1]
    labels: np.ndarray  # (N,)
    densities: np.ndarray  # (N, k, k), each sums to 1
    fixations: list  # FixationSet per image
    masks: np.ndarray  # (N, k, k) bool, informative patch
    num_classes: int

    def __len__(self):
        return len(self.ids)

    def subset(self, index):
        index = np.asarray(index, dtype=np.intp)
        return SyntheticDataset(
            ids=[self.ids[i] for i in index],
            images=self.images[index],
            labels=self.labels[index],
            densities=self.densities[index],
            fixations=[self.fixations[i] for i in index],
            masks=self.masks[index],
            num_classes=self.num_classes,
        )

    def fixation_map(self):
        return dict(zip(self.ids, self.fixations))


def class_signatures(num_classes, patch, channels, rng):
    """One binary texture per class, all pairwise distinct."""
    sigs = []
    while len(sigs) < num_classes:
        s = (rng.random((patch, patch, channels)) < 0.5).astype(np.float64)
        if s.sum() == 0 or any(np.array_equal(s, t) for t in sigs):
            continue
        sigs.append(s)
    return np.stack(sigs)


def _layout(rng, grid, patch, count):
    """Top-left corners of ``count`` patches separated by at least one cell."""
    for _ in range(1000):
        boxes = [tuple(int(v) for v in rng.integers(0, grid - patch + 1, size=2)) for _ in range(count)]
        if all(
            abs(a[0] - b[0]) >= patch + 1 or abs(a[1] - b[1]) >= patch + 1
            for i, a in enumerate(boxes)
            for b in boxes[i + 1:]
        ):
            return boxes
    raise RuntimeError("could not place non-overlapping patches; grid too small")


def generate_synthetic_task(
    num_classes=4,
    grid=8,
    samples=640,
    seed=0,
    channels=3,
    patch=3,
    distractors=1,
    fixations_per_image=16,
    gaze_sigma=1.5,
    noise=0.05,
    cue_prob=0.75,
    cue_contrast=0.8,
    base_contrast=0.5,
    test_fraction=0.2,
):
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if not 0 <= cue_prob <= 1:
        raise ValueError("cue_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    sigs = class_signatures(num_classes, patch, channels, rng)
    # balanced within each block of train_test_split, not just overall
    n_test = int(round(samples * test_fraction))
    labels = np.concatenate([rng.permutation(np.arange(n) % num_classes) for n in (samples - n_test, n_test)])
    images = np.empty((samples, grid, grid, channels))
    densities = np.empty((samples, grid, grid))
    masks = np.zeros((samples, grid, grid), dtype=bool)
    fixations = []
    ids = [f"syn{i:05d}" for i in range(samples)]
    rows, cols = np.mgrid[0:grid, 0:grid]
    for i in range(samples):
        img = np.clip(0.1 + noise * rng.standard_normal((grid, grid, channels)), 0.0, 1.0)
        boxes = _layout(rng, grid, patch, 1 + distractors)
        r0, c0 = boxes[0]
        contrast = cue_contrast if rng.random() < cue_prob else base_contrast
        img[r0:r0 + patch, c0:c0 + patch] = 0.1 + contrast * sigs[labels[i]]
        masks[i, r0:r0 + patch, c0:c0 + patch] = True
        others = [k for k in range(num_classes) if k != labels[i]]
        for rd, cd in boxes[1:]:
            img[rd:rd + patch, cd:cd + patch] = 0.1 + base_contrast * sigs[rng.choice(others)]
        images[i] = img

        centre = (r0 + (patch - 1) / 2.0, c0 + (patch - 1) / 2.0)
        dens = np.exp(-((rows - centre[0]) ** 2 + (cols - centre[1]) ** 2) / (2 * gaze_sigma**2))
        densities[i] = dens / dens.sum()
        flat = rng.choice(grid * grid, size=fixations_per_image, p=densities[i].ravel())
        fixations.append(FixationSet(ids[i], np.stack(np.divmod(flat, grid), axis=1), grid, grid))
    return SyntheticDataset(ids, images, labels, densities, fixations, masks, num_classes)


def train_test_split(dataset, test_fraction=0.2):
    """Deterministic split: the first ``1 - test_fraction`` of ids train, the rest test."""
    n_test = int(round(len(dataset) * test_fraction))
    idx = np.arange(len(dataset))
    return dataset.subset(idx[: len(dataset) - n_test]), dataset.subset(idx[len(dataset) - n_test:])
