"""Acceptance criteria, each run at its stated tolerance and time budget.

Every test prints one ``criterion N ... PASS|FAIL`` line (visible even when
pytest captures output) before asserting.
"""
import itertools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from gazeattn.adversarial import AttackConfig, evaluate_robustness, fgsm_batch
from gazeattn.attention import (
    IMPLICIT_KINDS,
    KINDS,
    activation_attention,
    attention_kl_loss,
    sigmoid_attention,
    softmax_attention,
)
from gazeattn.gaze_metrics import info_gain, s_auc, shuffled_negatives
from gazeattn.gradcheck import TOLERANCE, run_gradcheck
from gazeattn.io import load_matrix, save_matrix
from gazeattn.protocols import BenchConfig, kfold_split, run_benchmark
from gazeattn.report import emit_report
from gazeattn.synthetic import generate_synthetic_task, train_test_split
from gazeattn.task_metrics import (
    LabelPair,
    RankedPredictions,
    average_precision,
    f_measure,
    fooling_rate,
    mae,
)
from gazeattn.toy_model import batch_losses, default_attention, forward_batch
from gazeattn.training import TrainConfig, train

from conftest import make_fixations
from test_attention import loop_activation
from test_gaze_metrics import brute_force_sauc, random_instance
from test_task_metrics import brute_force_ap

GOLDEN = Path(__file__).parent / "golden"


def scorable_instance(rng):
    """A random s-AUC instance, redrawn until at least one shuffled negative survives."""
    while True:
        pred, fix, others = random_instance(rng)
        if len(shuffled_negatives(fix, others)):
            return pred, fix, others


class Criterion:
    """Collects named checks, then prints one verdict line for the criterion."""

    def __init__(self, number, name, budget):
        self.number, self.name, self.budget = number, name, budget
        self.failures = []
        self.start = time.perf_counter()

    def check(self, ok, what):
        if not ok:
            self.failures.append(what)

    def finish(self, capsys):
        elapsed = time.perf_counter() - self.start
        self.check(elapsed < self.budget, f"took {elapsed:.1f} s, budget {self.budget} s")
        verdict = "PASS" if not self.failures else "FAIL: " + "; ".join(self.failures)
        with capsys.disabled():
            print(f"\ncriterion {self.number} {self.name} ({elapsed:.2f} s / {self.budget} s): {verdict}")
        assert not self.failures, self.failures


def test_criterion_1_gaze_metric_oracles(capsys):
    c = Criterion(1, "gaze metric oracles", 10)
    rng = np.random.default_rng(101)
    mismatches = 0
    for _ in range(200):
        pred, fix, others = scorable_instance(rng)
        mismatches += s_auc(pred, fix, others) != brute_force_sauc(pred, fix, others)
    c.check(mismatches == 0, f"s-AUC differs from the pairwise oracle on {mismatches}/200 instances")

    constant_ok = True
    for _ in range(50):
        pred, fix, others = scorable_instance(rng)
        constant_ok &= s_auc(np.full(pred.shape, 0.3), fix, others) == 0.5
    c.check(constant_ok, "constant map s-AUC != 0.5")

    mono_ok = True
    for _ in range(50):
        _, fix, others = scorable_instance(rng)
        pred = rng.random(fix.dims)
        base = s_auc(pred, fix, others)
        for f in (np.exp, lambda v: 3 * v + 1, lambda v: v ** 3, np.arctan):
            mono_ok &= s_auc(f(pred), fix, others) == base
    c.check(mono_ok, "s-AUC changed under a strictly monotone transform")

    worst = 0.0
    for _ in range(50):
        m = rng.random((8, 8))
        fix = make_fixations("a", rng.integers(0, 8, size=(5, 2)))
        worst = max(worst, abs(info_gain(m, fix, m)))
    c.check(worst < 1e-12, f"IG(pred = baseline) reached {worst:.2e}")

    one_bit = info_gain(np.array([[1.0, 0.0]]), make_fixations("a", [(0, 0)], (1, 2)), np.array([[0.5, 0.5]]),
                        eps_norm=0.0)
    c.check(one_bit == 1.0, f"2-cell IG gave {one_bit!r} bits")
    c.finish(capsys)


def test_criterion_2_task_metric_oracles(capsys):
    c = Criterion(2, "task metric oracles", 5)
    f = f_measure(0.8, 0.5, 0.3)
    c.check(abs(f - 0.70270) <= 1e-5, f"F-measure hand case gave {f}")
    err = mae(np.array([[0.25, 0.5], [1.0, 0.0]]), np.array([[0, 1], [1, 0]]))
    c.check(err == 0.1875, f"MAE hand case gave {err!r}")

    bad = []
    for labels in itertools.product([False, True], repeat=5):
        if not any(labels):
            continue
        r = RankedPredictions("c", tuple((f"i{k}", 1.0 - k / 10, lab) for k, lab in enumerate(labels)))
        if average_precision(r) != brute_force_ap(list(labels)):
            bad.append(labels)
    c.check(not bad, f"AP differs from the oracle on {len(bad)} labelings")

    rng = np.random.default_rng(7)
    fool_ok = True
    for _ in range(200):
        n = int(rng.integers(1, 40))
        clean, pert = rng.integers(0, 5, n), rng.integers(0, 5, n)
        pairs = [LabelPair(str(i), int(a), int(b)) for i, (a, b) in enumerate(zip(clean, pert))]
        fool_ok &= fooling_rate(pairs) == sum(int(a != b) for a, b in zip(clean, pert)) / n
    c.check(fool_ok, "fooling rate differs from recount")
    c.finish(capsys)


def test_criterion_3_attention_kernels(capsys):
    c = Criterion(3, "attention kernels", 5)
    rng = np.random.default_rng(3)
    sum_err = shift_err = 0.0
    for _ in range(200):
        y = rng.normal(scale=5, size=(6, 7))
        a = softmax_attention(y)
        sum_err = max(sum_err, abs(a.sum() - 1.0))
        shift_err = max(shift_err, np.max(np.abs(softmax_attention(y + rng.normal(scale=20)) - a)))
    c.check(sum_err <= 1e-12, f"softmax sum off by {sum_err:.2e}")
    c.check(shift_err <= 1e-12, f"softmax shift changed values by {shift_err:.2e}")

    s0, s3 = sigmoid_attention(np.array([[0.0, math.log(3)]]))[0]
    c.check(abs(s0 - 0.5) <= 1e-12 and abs(s3 - 0.75) <= 1e-12, f"sigmoid hand cases gave {s0}, {s3}")

    exact = all(
        np.array_equal(activation_attention(z, 2.0), loop_activation(z, 2))
        for z in (rng.normal(size=(int(h), int(w), int(d))) for h, w, d in rng.integers(1, 9, size=(50, 3)))
    )
    c.check(exact, "activation attention differs from the loop oracle")

    self_kl, min_kl = 0.0, math.inf
    for _ in range(1000):
        p, q = rng.random((5, 5)), rng.random((5, 5))
        self_kl = max(self_kl, abs(attention_kl_loss(p, p)))
        min_kl = min(min_kl, attention_kl_loss(q, p))
    c.check(self_kl <= 1e-12, f"KL(p||p) reached {self_kl:.2e}")
    c.check(min_kl >= 0, f"KL went negative ({min_kl:.2e})")
    c.finish(capsys)


def test_criterion_4_gradient_audit(capsys):
    c = Criterion(4, "gradient audit", 60)
    report = run_gradcheck(seed=0, samples=5)
    groups = {g for (_, _, g) in report.errors}
    c.check("input" in groups and {"attn1_w", "attn1_b", "attn2_w", "attn2_b", "cls_w", "cls_b"} <= groups,
            f"groups audited: {sorted(groups)}")
    c.check(report.max_error < TOLERANCE, f"max relative error {report.max_error:.3e}")
    c.finish(capsys)


def test_criterion_5_fgsm_contract(capsys):
    c = Criterion(5, "FGSM contract", 10)
    ds = generate_synthetic_task(num_classes=3, samples=60, seed=5)
    trained = {k: train(ds, TrainConfig(baseline=k, steps=20)).params for k in ("softmax", "sigmoid")}
    attn = {k: default_attention(k) for k in trained}
    for k, p in trained.items():
        for eps in (1e-4, 0.01, 0.1, 0.3):
            xp = fgsm_batch(p, ds.images, ds.labels, AttackConfig(eps), attn[k])
            dev = float(np.max(np.abs(xp - ds.images)))
            c.check(dev <= eps, f"{k}: |x' - x| reached {dev!r} at eps {eps}")
    zero = evaluate_robustness(trained, ds, AttackConfig(0.0), attn)
    c.check(all(v == 0.0 for v in zero.fooling_rates.values()), f"eps 0 fooling rates {zero.fooling_rates}")
    for k, p in trained.items():
        before, _, _ = batch_losses(forward_batch(p, ds.images, attn[k]), ds.labels, attn[k])
        xp = fgsm_batch(p, ds.images, ds.labels, AttackConfig(1e-4), attn[k])
        after, _, _ = batch_losses(forward_batch(p, xp, attn[k]), ds.labels, attn[k])
        drop = float(np.max(before - after))
        c.check(drop <= 1e-9, f"{k}: loss fell by {drop:.2e} at eps 1e-4")
    c.finish(capsys)


def test_criterion_6_trend_reproduction(capsys):
    c = Criterion(6, "trend reproduction", 120)
    golden = json.loads((GOLDEN / "trend_seed0.json").read_text())
    th = golden["thresholds"]
    ds = generate_synthetic_task(num_classes=4, seed=0)
    tr, te = train_test_split(ds)
    c.check((len(tr), len(te)) == (512, 128), f"split {len(tr)}/{len(te)}")
    n_train = len(tr)
    split = (np.arange(n_train), np.arange(n_train, len(ds)))
    report = run_benchmark(ds, list(KINDS), BenchConfig(seed=0, steps=200), split=split)
    task, gaze = report.tables[0], report.tables[1]
    acc = task.column("accuracy")
    sauc = gaze.column("s_auc")

    margins = {k: acc["human"] - acc[k] for k in IMPLICIT_KINDS}
    c.check(all(m >= th["accuracy_margin"] for m in margins.values()),
            "human accuracy margins " + ", ".join(f"{k} {m:+.3f}" for k, m in margins.items()))
    c.check(sauc["supervised"] > sauc["sigmoid"],
            f"supervised s-AUC {sauc['supervised']:.4f} vs sigmoid {sauc['sigmoid']:.4f}")
    for k, run in report.runs.items():
        ratio = run.final_loss / run.initial_loss
        c.check(run.error is None and ratio < th["loss_ratio"], f"{k} loss ratio {ratio:.3f}")

    with capsys.disabled():
        for k in KINDS:
            run = report.runs[k]
            print(f"  {k:<18} acc {acc[k]:.4f}  s-AUC {sauc[k]:.4f}  loss {run.initial_loss:.4f} -> "
                  f"{run.final_loss:.4f} (ratio {run.final_loss / run.initial_loss:.3f})")
    c.finish(capsys)


def test_criterion_7_determinism_and_round_trips(capsys, tmp_path):
    c = Criterion(7, "determinism and round-trips", 10)
    ds = generate_synthetic_task(num_classes=3, samples=60, seed=11)
    cfg = BenchConfig(seed=3, steps=15, k=4)
    written = []
    for name in ("first", "second"):
        rep = run_benchmark(ds, ["sigmoid", "supervised", "human"], cfg)
        written.append(emit_report(rep.tables, tmp_path / name, formats=("csv",)))
    same = all(a.read_bytes() == b.read_bytes() for a, b in zip(*written))
    c.check(same and len(written[0]) == 6, "CSV reports differ between identical runs")

    rng = np.random.default_rng(17)
    pgm_err = csv_err = 0.0
    for n in range(40):
        m = rng.random(tuple(int(v) for v in rng.integers(1, 12, size=2)))
        m.flat[0] = 0.0
        pgm = save_matrix(m, tmp_path / f"m{n}.pgm", binary=bool(n % 2))
        pgm_err = max(pgm_err, float(np.max(np.abs(load_matrix(pgm) - m))))
        r = rng.normal(scale=100, size=m.shape)
        csv = save_matrix(r, tmp_path / f"m{n}.csv")
        csv_err = max(csv_err, float(np.max(np.abs(load_matrix(csv) - r))))
    c.check(pgm_err <= 1 / 65535, f"PGM round-trip error {pgm_err:.3e}")
    c.check(csv_err <= 1e-12, f"CSV round-trip error {csv_err:.3e}")

    partitions_ok = True
    for size in range(5, 51):
        ids = [f"id{i}" for i in range(size)]
        folds = kfold_split(ids, k=5, seed=size)
        vals = [i for _, v in folds for i in v]
        partitions_ok &= sorted(vals) == sorted(ids) and len(vals) == size
        partitions_ok &= all(sorted(t + v) == sorted(ids) and not set(t) & set(v) for t, v in folds)
    c.check(partitions_ok, "5-fold splits are not exact partitions")
    c.finish(capsys)


@pytest.mark.parametrize("key, value", [("accuracy_margin", 0.02), ("loss_ratio", 0.5)])
def test_trend_thresholds_frozen(key, value):
    assert json.loads((GOLDEN / "trend_seed0.json").read_text())["thresholds"][key] == value
