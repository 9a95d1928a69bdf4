"""Command-line interface: ``gazeattn <subcommand> [options]``.

Exit status is 0 on success, 1 on invalid input or usage, 2 on internal errors.
"""
import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .attention import KINDS
from .gaze_metrics import FixationSet, ShuffleSpec, fixations_from_density, score_maps
from .gradcheck import TOLERANCE, run_gradcheck
from .io import (
    load_dataset,
    load_fixation_table,
    load_manifest,
    load_matrix,
    manifest_split,
    write_dataset,
)
from .protocols import BenchConfig, EvalRecord, GroupingSpec, correlation_table, run_benchmark
from .report import ReportTable, emit_report
from .synthetic import generate_synthetic_task
from .task_metrics import f_max, mae
from .tensor_core import resample_map
from .toy_model import save_checkpoint
from .training import TrainConfig, train, write_loss_trace

log = logging.getLogger("gazeattn")

FORMATS = {"csv": ("csv",), "json": ("json",), "both": ("csv", "json")}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    g.add_argument("--manifest", type=Path, help="dataset manifest (JSON)")
    g.add_argument("--out", type=Path, help="output directory")
    g.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")
    g.add_argument("--format", choices=sorted(FORMATS), default="both", help="report formats (default both)")
    return p


def build_parser():
    parser = _Parser(prog="gazeattn", description="Compare artificial attention maps with human gaze.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    common = [_common()]

    p = sub.add_parser("gen-synthetic", parents=common, help="write a seeded synthetic dataset and manifest")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--samples", type=int, default=640)
    p.add_argument("--grid", type=int, default=8)
    p.add_argument("--test-fraction", type=float, default=0.2)

    p = sub.add_parser("train-toy", parents=common, help="train one baseline on a manifest's training split")
    p.add_argument("--baseline", choices=KINDS, default="sigmoid")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--optimizer", choices=("adam", "plain_gd"), default="adam")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--supervision-weight", type=float, default=0.01)

    p = sub.add_parser("bench", parents=common, help="train and evaluate all baselines")
    p.add_argument("--baselines", default=",".join(KINDS), help="comma-separated baselines (default all five)")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--fgsm-eps", type=float, help="also report FGSM fooling rates at this epsilon")
    p.add_argument("--folds", type=int, help="also report k-fold cross-validation accuracy")
    p.add_argument("--k", type=int, default=10, help="group size for top/bottom-k tables")
    p.add_argument("--top-fraction", type=float, default=0.05, help="pseudo-fixation fraction for pairwise tables")

    for name, helptext in (
        ("eval-saliency", "F-measure and MAE of maps against ground-truth masks"),
        ("eval-gaze", "s-AUC and information gain of maps against fixations"),
    ):
        p = sub.add_parser(name, parents=common, help=helptext)
        if name == "eval-gaze":
            p.add_argument("--shuffle-mode", choices=("deterministic_union", "monte_carlo"), default="deterministic_union")
            p.add_argument("--num-shuffles", type=int, default=100)
            p.add_argument("--top-fraction", type=float, default=0.05,
                           help="fixations taken from a density's top cells when an entry has no fixation file")

    p = sub.add_parser("compare-attention", parents=common, help="grouped correlation tables from manifest maps")
    p.add_argument("--grouping", choices=("top_bottom_k", "positive_negative", "all"), default="all")
    p.add_argument("--protocol", choices=("vs_human", "pairwise_pseudo", "all"), default="all")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--top-fraction", type=float, default=0.05)

    p = sub.add_parser("gradcheck", parents=common, help="finite-difference audit of the toy model gradients")
    p.add_argument("--samples", type=int, default=5)
    return parser


def _need(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"gazeattn {args.command}: error: missing required option(s) {' '.join(missing)}")


def _emit(tables, args):
    if args.out is None:
        for t in tables:
            print(f"# {t.title}")
            print(t.to_csv())
        return
    for p in emit_report(tables, args.out, FORMATS[args.format]):
        log.info("wrote %s", p)


def cmd_gen_synthetic(args):
    _need(args, "out")
    if not 0 < args.test_fraction < 1:
        raise ValueError("--test-fraction must be in (0, 1)")
    ds = generate_synthetic_task(num_classes=args.classes, grid=args.grid, samples=args.samples, seed=args.seed,
                                test_fraction=args.test_fraction)
    n_test = int(round(len(ds) * args.test_fraction))
    split = (ds.ids[: len(ds) - n_test], ds.ids[len(ds) - n_test:])
    path = write_dataset(ds, args.out, seed=args.seed, split=split)
    print(f"wrote {len(ds)} samples ({len(split[0])} train / {len(split[1])} test) to {path}")


def _load(args):
    _need(args, "manifest")
    manifest = load_manifest(args.manifest)
    ds = load_dataset(manifest)
    return manifest, ds, manifest_split(manifest, ds)


def cmd_train_toy(args):
    _need(args, "out")
    _, ds, (tr, _) = _load(args)
    cfg = TrainConfig(baseline=args.baseline, learning_rate=args.lr, optimizer=args.optimizer, steps=args.steps,
                      batch_size=args.batch_size, seed=args.seed, supervision_weight=args.supervision_weight)
    res = train(ds.subset(tr), cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(res.params, args.out / f"{args.baseline}.ckpt", {"baseline": args.baseline, "seed": args.seed})
    write_loss_trace(res.loss_trace, args.out / f"{args.baseline}-loss.csv")
    print(f"{args.baseline}: loss {res.initial_loss:.6f} -> {res.final_loss:.6f} after {args.steps} steps")


def cmd_bench(args):
    _need(args, "out")
    baselines = [b for b in (s.strip() for s in args.baselines.split(",")) if b]
    _, ds, split = _load(args)
    cfg = BenchConfig(seed=args.seed, steps=args.steps, fgsm_eps=args.fgsm_eps, folds=args.folds, k=args.k,
                      top_fraction=args.top_fraction, jobs=args.jobs)
    report = run_benchmark(ds, baselines, cfg, split=split)
    _emit(report.tables, args)
    (args.out / "checkpoints").mkdir(parents=True, exist_ok=True)
    for name, run in report.runs.items():
        if run.error:
            print(f"{name}: FAILED ({run.error})", file=sys.stderr)
            continue
        save_checkpoint(run.params, args.out / "checkpoints" / f"{name}.ckpt", {"baseline": name, "seed": args.seed})
        write_loss_trace(run.loss_trace, args.out / "checkpoints" / f"{name}-loss.csv")
    for t in report.tables:
        print(f"# {t.title}")
        print(t.to_csv())
    return 1 if any(r.error for r in report.runs.values()) else 0


def _map_sources(manifest):
    """``{source: {image_id: path}}`` for the saliency map and every attention baseline."""
    sources = {}
    for e in manifest.entries:
        if e.saliency_map_path:
            sources.setdefault("saliency", {})[e.id] = e.saliency_map_path
        for name, rel in e.attention_map_paths.items():
            sources.setdefault(name, {})[e.id] = rel
    if not sources:
        raise ValueError("manifest lists no saliency or attention maps")
    return sources


def cmd_eval_saliency(args):
    _need(args, "manifest")
    manifest = load_manifest(args.manifest)
    sources = _map_sources(manifest)
    rows, cells = [], []
    for name in sorted(sources):
        preds, gts = {}, {}
        for image_id, rel in sorted(sources[name].items()):
            e = manifest.entry(image_id)
            if not e.gt_mask_path:
                continue
            preds[image_id] = load_matrix(manifest.resolve(rel), "map")
            gts[image_id] = load_matrix(manifest.resolve(e.gt_mask_path), "mask")
        rows.append(name)
        if not preds:
            log.warning("%s: no entry has a ground-truth mask", name)
            cells.append([None, None, None, 0])
            continue
        fs = f_max(preds, gts)
        cells.append([fs.adaptive, fs.sweep_max, float(np.mean([mae(preds[i], gts[i]) for i in preds])), len(preds)])
    _emit([ReportTable("Saliency evaluation", rows, ["F_adaptive", "F_max", "MAE", "images"], cells,
                       {"seed": args.seed})], args)


def _gaze_fixations(manifest, top_fraction):
    """Fixations per entry: the fixation file when present, else the density's top cells."""
    grid = manifest.grid
    cache, out = {}, {}
    for e in manifest.entries:
        if e.fixation_path:
            path = manifest.resolve(e.fixation_path)
            if path not in cache:
                cache[path] = load_fixation_table(path, grid)
            table = cache[path]
            if e.id in table:
                out[e.id] = table[e.id]
            else:
                dims = next(iter(table.values())).dims if table else grid
                out[e.id] = FixationSet(e.id, np.empty((0, 2), dtype=np.int64), *dims)
        elif e.density_path:
            out[e.id] = fixations_from_density(load_matrix(manifest.resolve(e.density_path), "density"),
                                               top_fraction, e.id)
    return out


def _load_map(manifest, rel, dims):
    m = load_matrix(manifest.resolve(rel), "map")
    return m if m.shape == tuple(dims) else resample_map(m, *dims)


def cmd_eval_gaze(args):
    _need(args, "manifest")
    manifest = load_manifest(args.manifest)
    sources = _map_sources(manifest)
    fixations = _gaze_fixations(manifest, args.top_fraction)
    spec = ShuffleSpec(args.shuffle_mode, args.num_shuffles, args.seed)
    rows, cells = [], []
    for name in sorted(sources):
        maps = {i: _load_map(manifest, rel, fixations[i].dims) for i, rel in sources[name].items() if i in fixations}
        gs = score_maps(maps, fixations, spec)
        if gs.unscorable:
            log.warning("%s: %d unscorable image(s): %s", name, len(gs.unscorable), gs.unscorable[:5])
        rows.append(name)
        cells.append([gs.mean("s_auc"), gs.mean("info_gain"), len(gs.s_auc)])
    _emit([ReportTable("Gaze evaluation", rows, ["s_auc", "info_gain", "images"], cells,
                       {"seed": args.seed, "shuffle_mode": spec.mode})], args)


def cmd_compare_attention(args):
    _need(args, "manifest")
    manifest = load_manifest(args.manifest)
    fixations = _gaze_fixations(manifest, args.top_fraction)
    records = []
    for e in manifest.entries:
        if e.id not in fixations:
            continue
        for name, rel in sorted(e.attention_map_paths.items()):
            score = e.scores.get(name)
            correct = e.correct.get(name)
            records.append(EvalRecord(e.id, name, _load_map(manifest, rel, fixations[e.id].dims),
                                      task_score=None if score is None else float(score),
                                      correct=None if correct is None else bool(correct)))
    if not records:
        raise ValueError("manifest lists no attention maps with gaze")
    modes = ("top_bottom_k", "positive_negative") if args.grouping == "all" else (args.grouping,)
    protocols = ("vs_human", "pairwise_pseudo") if args.protocol == "all" else (args.protocol,)
    tables = []
    for mode in modes:
        for proto in protocols:
            spec = GroupingSpec(mode, args.k, proto, args.top_fraction)
            tables.append(correlation_table(records, fixations, spec=spec, shuffle=ShuffleSpec(seed=args.seed)))
    _emit(tables, args)


def cmd_gradcheck(args):
    report = run_gradcheck(seed=args.seed, samples=args.samples)
    for line in report.lines():
        print(line)
    if not report.passed():
        print(f"FAILED: max relative error {report.max_error:.3e} >= {TOLERANCE:g}", file=sys.stderr)
        return 1
    print(f"PASS: max relative error {report.max_error:.3e} < {TOLERANCE:g}")
    return 0


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "train-toy": cmd_train_toy,
    "bench": cmd_bench,
    "eval-saliency": cmd_eval_saliency,
    "eval-gaze": cmd_eval_gaze,
    "compare-attention": cmd_compare_attention,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.jobs < 1:
        print("gazeattn: error: --jobs must be >= 1", file=sys.stderr)
        return 1
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args) or 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"gazeattn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as an internal error
        log.debug("internal error", exc_info=True)
        print(f"gazeattn {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
