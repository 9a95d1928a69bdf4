import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from gazeattn.cli import main
from gazeattn.io import load_manifest, load_matrix, save_manifest, save_matrix
from gazeattn.toy_model import load_checkpoint

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-synthetic", "--out", str(out), "--samples", "60", "--classes", "3", "--seed", "2"]) == 0
    return out / "manifest.json"


def with_maps(manifest_path, maps, name="probe"):
    """Copy of the manifest whose entries list ``maps[id]`` as attention maps of baseline ``name``."""
    m = load_manifest(manifest_path)
    root = manifest_path.parent
    (root / "maps").mkdir(exist_ok=True)
    for e in m.entries:
        rel = f"maps/{name}-{e.id}.csv"
        save_matrix(maps(e.id), root / rel)
        e.attention_map_paths = {name: rel}
    return save_manifest(m, root / f"manifest-{name}.json")


class TestCommands:
    def test_gen_synthetic(self, data):
        m = load_manifest(data)
        assert len(m.entries) == 60 and m.grid == (8, 8)
        assert len(m.settings["split"]["test"]) == 12

    def test_bench_outputs(self, data, tmp_path, capsys):
        out = tmp_path / "bench"
        rc = main(["bench", "--manifest", str(data), "--out", str(out), "--steps", "5", "--fgsm-eps", "0.05",
                   "--folds", "2"])
        assert rc == 0
        files = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file())
        assert files == (GOLDEN / "bench_files.txt").read_text().split()
        assert "# Task performance" in capsys.readouterr().out
        params, meta = load_checkpoint(out / "checkpoints" / "softmax.ckpt")
        assert params.trained_steps == 5 and meta["baseline"] == "softmax"
        trace = (out / "checkpoints" / "softmax-loss.csv").read_text().splitlines()
        assert trace[0] == "step,total_loss,ce_loss,kl_loss" and len(trace) == 6

    def test_bench_deterministic(self, data, tmp_path):
        for name in ("a", "b"):
            assert main(["bench", "--manifest", str(data), "--out", str(tmp_path / name), "--steps", "3",
                         "--baselines", "sigmoid,human", "--format", "csv"]) == 0
        for p in sorted((tmp_path / "a").glob("*.csv")):
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()

    def test_train_toy(self, data, tmp_path):
        rc = main(["train-toy", "--manifest", str(data), "--out", str(tmp_path), "--baseline", "supervised",
                   "--steps", "4"])
        assert rc == 0
        assert (tmp_path / "supervised.ckpt").exists() and (tmp_path / "supervised-loss.csv").exists()

    def test_eval_gaze_constant_map(self, data, tmp_path):
        manifest = with_maps(data, lambda _: np.full((8, 8), 0.5))
        assert main(["eval-gaze", "--manifest", str(manifest), "--out", str(tmp_path), "--format", "json"]) == 0
        d = json.loads((tmp_path / "gaze-evaluation.json").read_text())
        assert d["rows"] == ["probe"]
        assert d["cells"][0][0] == 0.5
        assert d["cells"][0][2] == 60

    def test_eval_saliency_perfect_map(self, data, tmp_path):
        m = load_manifest(data)
        masks = {e.id: m.resolve(e.gt_mask_path) for e in m.entries}
        manifest = with_maps(data, lambda i: load_matrix(masks[i], "mask"), name="oracle")
        assert main(["eval-saliency", "--manifest", str(manifest), "--out", str(tmp_path), "--format", "json"]) == 0
        d = json.loads((tmp_path / "saliency-evaluation.json").read_text())
        assert d["cells"][0][2] == 0.0

    def test_compare_attention(self, data, tmp_path):
        rng = np.random.default_rng(0)
        manifest = with_maps(data, lambda _: rng.random((8, 8)))
        m = load_manifest(manifest)
        for n, e in enumerate(m.entries):
            e.scores = {"probe": n / 60}
            e.correct = {"probe": n % 2 == 0}
        save_manifest(m, manifest)
        assert main(["compare-attention", "--manifest", str(manifest), "--out", str(tmp_path), "--k", "5"]) == 0
        assert len(list(tmp_path.glob("grouped-correlation-*.csv"))) == 4

    def test_gradcheck(self, capsys):
        assert main(["gradcheck", "--seed", "0"]) == 0
        line = capsys.readouterr().out.strip().splitlines()[-1]
        assert line.startswith("PASS: max relative error ")
        assert float(line.split()[4]) < 1e-4


def test_preset_smoke(tmp_path):
    data, out = tmp_path / "d", tmp_path / "r"
    assert main(["gen-synthetic", "--seed", "0", "--classes", "4", "--samples", "640", "--out", str(data)]) == 0
    assert main(["bench", "--manifest", str(data / "manifest.json"), "--seed", "0", "--out", str(out)]) == 0
    files = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file())
    assert files == (GOLDEN / "bench_preset_files.txt").read_text().split()


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        assert main(["bench", "--frobnicate"]) == 1
        assert "unrecognized arguments" in capsys.readouterr().err

    def test_missing_manifest_option(self, capsys):
        assert main(["eval-gaze"]) == 1
        assert "--manifest" in capsys.readouterr().err

    def test_missing_manifest_file(self, tmp_path, capsys):
        assert main(["eval-gaze", "--manifest", str(tmp_path / "nope.json")]) == 1
        assert "error" in capsys.readouterr().err

    def test_bad_manifest(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text('{"version": "x"}')
        assert main(["bench", "--manifest", str(p), "--out", str(tmp_path)]) == 1

    def test_unknown_baseline(self, data, tmp_path):
        assert main(["bench", "--manifest", str(data), "--out", str(tmp_path), "--baselines", "gradcam"]) == 1

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "gazeattn", "--help"], capture_output=True, text=True)
        assert res.returncode == 0 and "gen-synthetic" in res.stdout
