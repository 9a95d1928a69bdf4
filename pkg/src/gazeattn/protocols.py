"""Comparative protocols: k-fold splits, grouped correlation tables, the benchmark runner."""
import hashlib
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .adversarial import AttackConfig, evaluate_robustness
from .attention import KINDS, to_distribution
from .gaze_metrics import (
    ScoringError,
    ShuffleSpec,
    build_shuffled_baseline,
    info_gain,
    pseudo_fixations,
    rank_auc,
    s_auc,
    score_maps,
    shuffled_negatives,
)
from .report import ReportTable
from .tensor_core import as_density_map, resample_map
from .task_metrics import f_max, mae, mean_average_precision, ranked_from_probs
from .toy_model import predict
from .training import TrainConfig, TrainingDivergedError, dataset_loss, train

log = logging.getLogger(__name__)

GAZE_METRICS = ("s_auc", "info_gain")


def kfold_split(ids, k=5, seed=0):
    """Seeded k-fold partitions as ``[(train_ids, validation_ids), ...]``.

    Fold sizes differ by at most one, larger folds first.
    """
    ids = list(ids)
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(ids) < k:
        raise ValueError(f"need at least k={k} ids, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")
    order = [ids[i] for i in np.random.default_rng(seed).permutation(len(ids))]
    base, extra = divmod(len(ids), k)
    folds, start = [], 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        folds.append(order[start:start + size])
        start += size
    return [
        ([i for g, fold in enumerate(folds) if g != f for i in fold], list(folds[f]))
        for f in range(k)
    ]


@dataclass
class EvalRecord:
    image_id: str
    baseline: str
    attention_map: np.ndarray
    scores: dict = field(default_factory=dict)  # metric -> value (None when unscorable)
    task_score: Optional[float] = None  # ranking key for top/bottom grouping
    correct: Optional[bool] = None


@dataclass(frozen=True)
class GroupingSpec:
    mode: str = "top_bottom_k"  # or "positive_negative"
    k: int = 10
    protocol: str = "vs_human"  # or "pairwise_pseudo"
    top_fraction: float = 0.05

    def __post_init__(self):
        if self.mode not in ("top_bottom_k", "positive_negative"):
            raise ValueError(f"unknown grouping mode {self.mode!r}")
        if self.protocol not in ("vs_human", "pairwise_pseudo"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.top_fraction <= 1:
            raise ValueError("top_fraction must be in (0, 1]")

    @property
    def group_names(self):
        return ("top", "bottom") if self.mode == "top_bottom_k" else ("positive", "negative")

    @property
    def columns(self):
        metrics = GAZE_METRICS
        if self.protocol == "pairwise_pseudo":
            metrics = metrics + tuple(m + "_sym" for m in GAZE_METRICS)
        return [f"{g}:{m}" for g in self.group_names for m in metrics]

    @property
    def title(self):
        label = "top/bottom-k" if self.mode == "top_bottom_k" else "positive/negative"
        how = "vs human fixations" if self.protocol == "vs_human" else "pairwise pseudo-fixations"
        return f"Grouped correlation {label} {how}"


def group_records(records, spec):
    """Split one baseline's records into the two groups of ``spec``, in deterministic order."""
    if spec.mode == "positive_negative":
        missing = [r.image_id for r in records if r.correct is None]
        if missing:
            raise ValueError(f"records without correctness flags: {missing[:5]}")
        ordered = sorted(records, key=lambda r: r.image_id)
        return {
            "positive": [r for r in ordered if r.correct],
            "negative": [r for r in ordered if not r.correct],
        }
    missing = [r.image_id for r in records if r.task_score is None]
    if missing:
        raise ValueError(f"records without task scores: {missing[:5]}")
    k = spec.k
    if k > len(records):
        warnings.warn(f"k={k} exceeds the {len(records)} records; groups truncated", stacklevel=2)
        k = len(records)
    best = sorted(records, key=lambda r: (-r.task_score, r.image_id))
    worst = sorted(records, key=lambda r: (r.task_score, r.image_id))
    return {"top": best[:k], "bottom": worst[:k]}


def _vs_human(group, fixations, pool, shuffle, blur_sigma, eps_norm):
    sums = {m: [] for m in GAZE_METRICS}
    for r in group:
        fix = fixations[r.image_id]
        others = [o for o in pool if o.image_id != r.image_id and o.scorable]
        if not fix.scorable or not others:
            continue
        try:
            sums["s_auc"].append(s_auc(r.attention_map, fix, others, shuffle))
        except ScoringError:
            continue
        base = build_shuffled_baseline(others, fix.dims, blur_sigma)
        sums["info_gain"].append(info_gain(r.attention_map, fix, base, eps_norm))
    return {m: (float(np.mean(v)) if v else None) for m, v in sums.items()}


def pair_scores(group, pool, spec, shuffle, blur_sigma, eps_norm):
    """Scores of map ``i`` against the pseudo-fixations of map ``j`` for ordered pairs ``i != j``.

    Negatives and the IG baseline come from the full human-fixation ``pool``.
    """
    base = build_shuffled_baseline(pool, pool[0].dims, blur_sigma)
    pseudo = [pseudo_fixations(r.attention_map, spec.top_fraction, image_id=f"pseudo:{r.image_id}") for r in group]
    maps = [as_density_map(r.attention_map) for r in group]
    dists = [to_distribution(m, eps_norm).ravel() for m in maps]
    log_base = np.log2(to_distribution(base, eps_norm).ravel())
    out = {}
    for j, fix in enumerate(pseudo):
        # negatives depend only on j, so the union-mode AUC reuses them for every i
        neg = shuffled_negatives(fix, pool)
        if len(neg) == 0:
            continue
        pos = fix.flat_indices()
        for i, m in enumerate(maps):
            if i == j:
                continue
            if shuffle.mode == "deterministic_union":
                flat = m.ravel()
                sa = rank_auc(flat[pos], flat[neg])
            else:
                sa = s_auc(m, fix, pool, shuffle)
            ig = float(np.mean(np.log2(dists[i][pos]) - log_base[pos]))
            out[(i, j)] = {"s_auc": sa, "info_gain": ig}
    return out


def _pairwise(group, pool, spec, shuffle, blur_sigma, eps_norm):
    scores = pair_scores(group, pool, spec, shuffle, blur_sigma, eps_norm)
    out = {}
    for m in GAZE_METRICS:
        ordered = [s[m] for s in scores.values()]
        # symmetrized: unordered pairs scored in both directions, averaged
        sym = [
            0.5 * (scores[(i, j)][m] + scores[(j, i)][m])
            for (i, j) in scores
            if i < j and (j, i) in scores
        ]
        out[m] = float(np.mean(ordered)) if ordered else None
        out[m + "_sym"] = float(np.mean(sym)) if sym else None
    return out


def correlation_table(records, fixations, others=None, spec=None, shuffle=None, blur_sigma=None, eps_norm=1e-9):
    """Grouped gaze-correlation table, one row per baseline.

    ``fixations`` maps image id to its human fixations; ``others`` is the
    fixation pool used for shuffled negatives and the IG baseline (default:
    every set in ``fixations``).
    """
    spec = spec or GroupingSpec()
    shuffle = shuffle or ShuffleSpec()
    pool = sorted(others if others is not None else fixations.values(), key=lambda f: f.image_id)
    by_baseline = {}
    for r in records:
        by_baseline.setdefault(r.baseline, []).append(r)
    rows, cells = [], []
    for name in sorted(by_baseline):
        groups = group_records(by_baseline[name], spec)
        row = {}
        for g in spec.group_names:
            members = groups[g]
            if spec.protocol == "vs_human":
                vals = _vs_human(members, fixations, pool, shuffle, blur_sigma, eps_norm)
            elif len(members) < 2:
                log.warning("baseline %s: group %s has %d record(s); pairwise scoring skipped", name, g, len(members))
                vals = {}
            else:
                vals = _pairwise(members, pool, spec, shuffle, blur_sigma, eps_norm)
            for m, v in vals.items():
                row[f"{g}:{m}"] = v
        rows.append(name)
        cells.append([row.get(c) for c in spec.columns])
    meta = {"grouping": spec.mode, "protocol": spec.protocol, "k": spec.k, "top_fraction": spec.top_fraction,
            "shuffle_mode": shuffle.mode}
    return ReportTable(spec.title, rows, spec.columns, cells, meta)


# --- benchmark --------------------------------------------------------------

TASK_COLUMNS = ["accuracy", "mAP", "F_adaptive", "F_max", "MAE"]
GROUPINGS = tuple(
    GroupingSpec(mode=m, protocol=p) for m in ("top_bottom_k", "positive_negative") for p in ("vs_human", "pairwise_pseudo")
)


@dataclass(frozen=True)
class BenchConfig:
    seed: int = 0
    steps: int = 200
    learning_rate: float = 0.01
    classifier_lr_scale: float = 10.0
    batch_size: int = 32
    supervision_weight: float = 0.01
    fgsm_eps: Optional[float] = None
    folds: Optional[int] = None
    k: int = 10
    top_fraction: float = 0.05
    jobs: int = 1

    def train_config(self, baseline):
        return TrainConfig(
            baseline=baseline,
            learning_rate=self.learning_rate,
            classifier_lr_scale=self.classifier_lr_scale,
            steps=self.steps,
            batch_size=self.batch_size,
            seed=self.seed,
            supervision_weight=self.supervision_weight,
        )

    def digest(self):
        # jobs never changes results, so it stays out of the hash
        d = {k: v for k, v in asdict(self).items() if k != "jobs"}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class BaselineRun:
    name: str
    params: object = None
    loss_trace: list = field(default_factory=list)
    probs: Optional[np.ndarray] = None
    maps: Optional[np.ndarray] = None
    initial_loss: float = math.nan
    final_loss: float = math.nan
    cv_accuracy: list = field(default_factory=list)
    error: Optional[str] = None


@dataclass
class BenchReport:
    tables: list
    runs: dict  # baseline -> BaselineRun
    config: BenchConfig


def _run_baseline(name, train_set, test_set, config):
    tc = config.train_config(name)
    run = BaselineRun(name)
    try:
        res = train(train_set, tc)
        run.params, run.loss_trace = res.params, res.loss_trace
        run.initial_loss, run.final_loss = res.initial_loss, res.final_loss
        run.probs, run.maps = predict(res.params, test_set.images, tc.attention(), test_set.densities)
        if config.folds:
            for fold_train, fold_val in kfold_split(range(len(train_set)), config.folds, config.seed):
                fr = train(train_set.subset(fold_train), tc)
                _, acc = dataset_loss(fr.params, train_set.subset(fold_val), tc.attention())
                run.cv_accuracy.append(acc)
    except TrainingDivergedError as exc:
        run.error = str(exc)
        log.error("baseline %s diverged: %s", name, exc)
    return run


def _task_row(run, test_set):
    if run.error:
        return [None] * len(TASK_COLUMNS)
    pred = np.argmax(run.probs, axis=1)
    acc = float(np.mean(pred == test_set.labels))
    m_ap = mean_average_precision(ranked_from_probs(run.probs, test_set.labels, test_set.ids))
    preds = dict(zip(test_set.ids, run.maps))
    gts = {i: m.astype(np.float64) for i, m in zip(test_set.ids, test_set.masks)}
    dims = run.maps.shape[1:]
    if dims != test_set.masks.shape[1:]:
        gts = {i: (resample_map(g, *dims) >= 0.5).astype(np.float64) for i, g in gts.items()}
    fs = f_max(preds, gts)
    err = float(np.mean([mae(preds[i], gts[i]) for i in test_set.ids]))
    return [acc, m_ap, fs.adaptive, fs.sweep_max, err]


def _map_on_grid(m, dims):
    return m if m.shape == tuple(dims) else resample_map(m, *dims)


def run_benchmark(dataset, baselines, config=None, split=None):
    """Train and evaluate every baseline on ``dataset``.

    ``split`` is ``(train_index, test_index)``; the default is the
    deterministic 80/20 split. Returns a :class:`BenchReport` whose tables
    follow a fixed order: task, gaze, the four grouped tables, then
    cross-validation and FGSM when requested.
    """
    config = config or BenchConfig()
    unknown = [b for b in baselines if b not in KINDS]
    if unknown:
        raise ValueError(f"unknown baselines {unknown}; choose from {list(KINDS)}")
    if len(set(baselines)) != len(baselines):
        raise ValueError("duplicate baselines")
    if split is None:
        n_test = int(round(0.2 * len(dataset)))
        split = (np.arange(len(dataset) - n_test), np.arange(len(dataset) - n_test, len(dataset)))
    train_set, test_set = dataset.subset(split[0]), dataset.subset(split[1])
    names = sorted(baselines)
    if config.jobs > 1 and len(names) > 1:
        with ProcessPoolExecutor(max_workers=min(config.jobs, len(names))) as ex:
            futures = [ex.submit(_run_baseline, b, train_set, test_set, config) for b in names]
            runs = {b: f.result() for b, f in zip(names, futures)}
    else:
        runs = {b: _run_baseline(b, train_set, test_set, config) for b in names}

    meta = {"seed": config.seed, "config_hash": config.digest(), "train_size": len(train_set),
            "test_size": len(test_set), "failed": sorted(b for b in names if runs[b].error)}
    tables = [ReportTable("Task performance", names, TASK_COLUMNS, [_task_row(runs[b], test_set) for b in names], dict(meta))]

    fixations = test_set.fixation_map()
    gaze_cells, records = [], []
    task_dims = test_set.images.shape[1:3]
    for b in names:
        run = runs[b]
        if run.error:
            gaze_cells.append([None, None])
            continue
        maps = {i: _map_on_grid(m, task_dims) for i, m in zip(test_set.ids, run.maps)}
        gs = score_maps(maps, fixations)
        gaze_cells.append([gs.mean("s_auc"), gs.mean("info_gain")])
        pred = np.argmax(run.probs, axis=1)
        for n, image_id in enumerate(test_set.ids):
            label = int(test_set.labels[n])
            records.append(EvalRecord(image_id, b, maps[image_id], task_score=float(run.probs[n, label]),
                                      correct=bool(pred[n] == label)))
    tables.append(ReportTable("Gaze correlation", names, list(GAZE_METRICS), gaze_cells, dict(meta)))

    for spec in GROUPINGS:
        spec = GroupingSpec(spec.mode, config.k, spec.protocol, config.top_fraction)
        t = correlation_table(records, fixations, spec=spec)
        # failed baselines keep a row of gaps
        rows = {r: c for r, c in zip(t.row_labels, t.cells)}
        cells = [rows.get(b, [None] * len(t.col_labels)) for b in names]
        tables.append(ReportTable(t.title, names, t.col_labels, cells, dict(meta, **t.metadata)))

    if config.folds:
        cols = [f"fold{f + 1}" for f in range(config.folds)] + ["mean"]
        cells = [
            (runs[b].cv_accuracy + [float(np.mean(runs[b].cv_accuracy))]) if not runs[b].error else [None] * len(cols)
            for b in names
        ]
        tables.append(ReportTable("Cross-validation accuracy", names, cols, cells, dict(meta, folds=config.folds)))

    if config.fgsm_eps is not None:
        ok = [b for b in names if not runs[b].error]
        attack = AttackConfig(config.fgsm_eps)
        res = evaluate_robustness(
            {b: runs[b].params for b in ok}, test_set, attack, {b: config.train_config(b).attention() for b in ok}
        )
        table = res.table(dict(meta, eps=config.fgsm_eps))
        rows = {r: c for r, c in zip(table.row_labels, table.cells)}
        tables.append(ReportTable(table.title, names, table.col_labels,
                                  [rows.get(b, [None, None]) for b in names], table.metadata))
    return BenchReport(tables, runs, config)
