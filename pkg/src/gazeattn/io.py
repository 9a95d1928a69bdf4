"""File formats: PGM/CSV matrices, fixation lists, dataset manifests.

Grid coordinates are always ``(row, col)``, 0-indexed.
"""
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .gaze_metrics import FixationSet, default_blur_sigma
from .synthetic import SyntheticDataset

MANIFEST_VERSION = "gazeattn-manifest/1"
FIXATION_HEADER = "image_id,row,col"
_GRID_RE = re.compile(r"grid_height\s*=\s*(\d+)\s*,\s*grid_width\s*=\s*(\d+)")


class ParseError(ValueError):
    """Malformed input file; the message names the file and line."""

    def __init__(self, path, line, msg):
        self.path, self.line = str(path), line
        where = f"{path}: line {line}" if line else str(path)
        super().__init__(f"{where}: {msg}")


# --- matrices ---------------------------------------------------------------

MATRIX_KINDS = ("map", "attention", "density", "mask")


def _pgm_tokens(data, path):
    """Yield ``(token, line)`` for the PGM header, skipping ``#`` comments."""
    pos, line = 0, 1
    while pos < len(data):
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        if ch.isspace():
            if ch == b"\n":
                line += 1
            pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        yield data[start:pos], line, pos


def _read_pgm(data, path):
    tokens = _pgm_tokens(data, path)
    header = []
    for tok, line, end in tokens:
        header.append((tok, line, end))
        if len(header) == 4:
            break
    if len(header) < 4:
        raise ParseError(path, header[-1][1] if header else 1, "truncated PGM header")
    magic = header[0][0]
    try:
        width, height, maxval = (int(t) for t, _, _ in header[1:])
    except ValueError:
        raise ParseError(path, header[1][1], "PGM width/height/maxval must be integers") from None
    if width < 1 or height < 1 or not 0 < maxval <= 65535:
        raise ParseError(path, header[3][1], f"bad PGM dims {width}x{height} or maxval {maxval}")
    if magic == b"P2":
        vals = []
        for tok, line, _ in tokens:
            try:
                v = int(tok)
            except ValueError:
                raise ParseError(path, line, f"non-integer sample {tok.decode(errors='replace')!r}") from None
            if not 0 <= v <= maxval:
                raise ParseError(path, line, f"sample {v} outside [0, {maxval}]")
            vals.append(v)
        if len(vals) != width * height:
            raise ParseError(path, header[3][1], f"expected {width * height} samples, got {len(vals)}")
        raw = np.array(vals, dtype=np.float64)
    else:
        start = header[3][2] + 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        body = data[start:]
        if len(body) != width * height * dtype.itemsize:
            raise ParseError(path, header[3][1], f"expected {width * height * dtype.itemsize} bytes of samples, got {len(body)}")
        raw = np.frombuffer(body, dtype=dtype).astype(np.float64)
        if raw.max() > maxval:
            raise ParseError(path, header[3][1], f"sample {int(raw.max())} exceeds maxval {maxval}")
    return raw.reshape(height, width), maxval


def _read_csv_matrix(text, path):
    rows, width = [], None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            row = [float(x) for x in line.split(",")]
        except ValueError:
            raise ParseError(path, lineno, "non-numeric cell") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(path, lineno, f"ragged row: {len(row)} cells, expected {width}")
        if not all(np.isfinite(row)):
            raise ParseError(path, lineno, "non-finite cell")
        rows.append((lineno, row))
    if not rows:
        raise ParseError(path, None, "empty matrix")
    return rows


def load_matrix(path, kind="map"):
    """Read a PGM (P2/P5) or CSV grid as float64.

    PGM samples are scaled by ``1/maxval``. ``kind`` validates the values:
    ``map`` (any finite real), ``attention`` ([0, 1]), ``density`` (>= 0) or
    ``mask`` (binary; PGM samples must be 0 or maxval). Masks come back as
    0/1 floats.
    """
    if kind not in MATRIX_KINDS:
        raise ValueError(f"unknown matrix kind {kind!r}")
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P2", b"P5") and data[2:3].isspace():
        m, maxval = _read_pgm(data, path)
        if kind == "mask":
            bad = ~np.isin(m, (0, maxval))
            if bad.any():
                r, c = np.argwhere(bad)[0]
                raise ParseError(path, None, f"mask sample at (row {r}, col {c}) is neither 0 nor {maxval}")
        return (m > 0).astype(np.float64) if kind == "mask" else m / maxval
    rows = _read_csv_matrix(data.decode("utf-8"), path)
    for lineno, row in rows:
        arr = np.asarray(row)
        if kind == "attention" and (arr.min() < 0 or arr.max() > 1):
            raise ParseError(path, lineno, "attention values must lie in [0, 1]")
        if kind == "density" and arr.min() < 0:
            raise ParseError(path, lineno, "density values must be nonnegative")
        if kind == "mask" and not np.isin(arr, (0.0, 1.0)).all():
            raise ParseError(path, lineno, "mask values must be 0 or 1")
    return np.array([row for _, row in rows], dtype=np.float64)


def save_matrix(m, path, fmt=None, maxval=65535, binary=False):
    """Write a 2-D grid as CSV (exact ``repr`` floats) or PGM (values in [0, 1])."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("matrix must be 2-D")
    path = Path(path)
    fmt = fmt or ("pgm" if path.suffix.lower() == ".pgm" else "csv")
    if fmt == "csv":
        path.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in m) + "\n", encoding="utf-8")
        return path
    if fmt != "pgm":
        raise ValueError(f"unknown matrix format {fmt!r}")
    if m.min() < 0 or m.max() > 1:
        raise ValueError("PGM output needs values in [0, 1]")
    q = np.rint(m * maxval).astype(np.int64)
    h, w = m.shape
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        path.write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + q.astype(dtype).tobytes())
    else:
        body = "\n".join(" ".join(str(v) for v in row) for row in q)
        path.write_text(f"P2\n# (row, col) 0-indexed\n{w} {h}\n{maxval}\n{body}\n", encoding="ascii")
    return path


# --- fixations --------------------------------------------------------------

def _read_fixation_rows(path, dims):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header_seen = False
    rows = []
    for lineno, line in enumerate(lines, start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            m = _GRID_RE.search(s)
            if m and dims is None:
                dims = (int(m.group(1)), int(m.group(2)))
            continue
        if not header_seen:
            if s.replace(" ", "") != FIXATION_HEADER:
                raise ParseError(path, lineno, f"expected header {FIXATION_HEADER!r}")
            header_seen = True
            continue
        parts = [p.strip() for p in s.split(",")]
        if len(parts) != 3:
            raise ParseError(path, lineno, f"expected 3 fields, got {len(parts)}")
        try:
            r, c = int(parts[1]), int(parts[2])
        except ValueError:
            raise ParseError(path, lineno, "row/col must be integers") from None
        rows.append((lineno, parts[0], r, c))
    if not header_seen:
        raise ParseError(path, None, f"missing header {FIXATION_HEADER!r}")
    if dims is None:
        raise ParseError(path, None, "grid dims unknown: add '# grid_height=H,grid_width=W' or pass dims")
    for lineno, _, r, c in rows:
        if not (0 <= r < dims[0] and 0 <= c < dims[1]):
            raise ParseError(path, lineno, f"fixation ({r}, {c}) outside {dims[0]}x{dims[1]} grid")
    return rows, dims


def load_fixation_table(path, dims=None):
    """All fixation sets in a file, keyed by image id."""
    rows, dims = _read_fixation_rows(path, dims)
    by_id = {}
    for _, image_id, r, c in rows:
        by_id.setdefault(image_id, []).append((r, c))
    return {k: FixationSet(k, np.array(v, dtype=np.int64).reshape(-1, 2), *dims) for k, v in by_id.items()}


def load_fixations(path, dims=None, image_id=None):
    """One image's fixations. An empty body gives an empty (unscorable) set."""
    rows, dims = _read_fixation_rows(path, dims)
    ids = {r[1] for r in rows}
    if len(ids) > 1:
        raise ParseError(path, rows[0][0], f"several image ids {sorted(ids)[:3]}; use load_fixation_table")
    image_id = image_id or (ids.pop() if ids else Path(path).stem)
    pts = np.array([(r, c) for _, _, r, c in rows], dtype=np.int64).reshape(-1, 2)
    return FixationSet(image_id, pts, *dims)


def save_fixations(fixsets, path):
    fixsets = [fixsets] if isinstance(fixsets, FixationSet) else list(fixsets)
    if not fixsets:
        raise ValueError("nothing to write")
    dims = fixsets[0].dims
    if any(f.dims != dims for f in fixsets):
        raise ValueError("all fixation sets in one file must share grid dims")
    lines = [f"# grid_height={dims[0]},grid_width={dims[1]} coordinates=(row,col) 0-indexed", FIXATION_HEADER]
    for f in fixsets:
        lines.extend(f"{f.image_id},{r},{c}" for r, c in f.points)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)


# --- manifests --------------------------------------------------------------

@dataclass
class ManifestEntry:
    id: str
    image_path: Optional[str] = None
    saliency_map_path: Optional[str] = None
    attention_map_paths: dict = field(default_factory=dict)
    fixation_path: Optional[str] = None
    density_path: Optional[str] = None
    gt_mask_path: Optional[str] = None
    label: Optional[int] = None
    # optional per-baseline task score / correctness, used by grouped comparisons
    scores: dict = field(default_factory=dict)
    correct: dict = field(default_factory=dict)

    def paths(self):
        out = [self.image_path, self.saliency_map_path, self.fixation_path, self.density_path, self.gt_mask_path]
        out.extend(self.attention_map_paths.values())
        return [p for p in out if p]

    def scorable(self):
        has_map = self.saliency_map_path or self.attention_map_paths
        gaze = has_map and (self.fixation_path or self.density_path)
        saliency = has_map and self.gt_mask_path
        classify = self.image_path and self.label is not None
        return bool(gaze or saliency or classify)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v not in (None, {}, [])}


@dataclass
class Manifest:
    entries: list
    settings: dict = field(default_factory=dict)
    version: str = MANIFEST_VERSION
    root: Path = field(default=Path("."), compare=False, repr=False)

    def resolve(self, rel):
        return None if rel is None else self.root / rel

    def entry(self, image_id):
        for e in self.entries:
            if e.id == image_id:
                return e
        raise KeyError(image_id)

    @property
    def grid(self):
        g = self.settings.get("grid")
        return tuple(g) if g else None

    def to_dict(self):
        return {
            "version": self.version,
            "settings": self.settings,
            "entries": [e.to_dict() for e in self.entries],
        }


def load_manifest(path, check_files=True):
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if raw.get("version") != MANIFEST_VERSION:
        raise ParseError(path, None, f"unsupported manifest version {raw.get('version')!r}; expected {MANIFEST_VERSION!r}")
    entries, seen = [], set()
    known = set(ManifestEntry.__dataclass_fields__)
    for i, d in enumerate(raw.get("entries", [])):
        unknown = set(d) - known
        if unknown:
            raise ParseError(path, None, f"entry {i}: unknown fields {sorted(unknown)}")
        if "id" not in d:
            raise ParseError(path, None, f"entry {i}: missing id")
        e = ManifestEntry(**d)
        if e.id in seen:
            raise ParseError(path, None, f"duplicate id {e.id!r}")
        seen.add(e.id)
        if not e.scorable():
            raise ParseError(path, None, f"entry {e.id!r} is not scorable by any metric")
        if check_files:
            for rel in e.paths():
                if not (path.parent / rel).exists():
                    raise ParseError(path, None, f"entry {e.id!r}: missing file {rel}")
        entries.append(e)
    return Manifest(entries, raw.get("settings", {}), raw["version"], root=path.parent)


def save_manifest(manifest, path):
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return Path(path)


def load_image(path):
    """Multi-channel images are stored as ``.npy`` arrays ``(rows, cols, channels)``."""
    a = np.load(path, allow_pickle=False)
    if a.ndim != 3:
        raise ParseError(path, None, f"image must be (rows, cols, channels), got shape {a.shape}")
    return a.astype(np.float64)


# --- datasets ---------------------------------------------------------------

def write_dataset(dataset, out_dir, seed=0, split=None):
    """Write images (``.npy``), densities (CSV), masks (PGM), fixations and a manifest.

    ``split`` is ``(train_ids, test_ids)``; it is recorded in the manifest
    settings. Returns the manifest path.
    """
    out = Path(out_dir)
    for sub in ("images", "densities", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    grid = list(dataset.images.shape[1:3])
    save_fixations(dataset.fixations, out / "fixations.csv")
    entries = []
    for n, image_id in enumerate(dataset.ids):
        np.save(out / "images" / f"{image_id}.npy", dataset.images[n], allow_pickle=False)
        save_matrix(dataset.densities[n], out / "densities" / f"{image_id}.csv", fmt="csv")
        save_matrix(dataset.masks[n].astype(np.float64), out / "masks" / f"{image_id}.pgm", fmt="pgm", maxval=255)
        entries.append(ManifestEntry(
            id=image_id,
            image_path=f"images/{image_id}.npy",
            fixation_path="fixations.csv",
            density_path=f"densities/{image_id}.csv",
            gt_mask_path=f"masks/{image_id}.pgm",
            label=int(dataset.labels[n]),
        ))
    settings = {"grid": grid, "seed": seed, "num_classes": int(dataset.num_classes),
                "channels": int(dataset.images.shape[3])}
    if split is not None:
        settings["split"] = {"train": list(split[0]), "test": list(split[1])}
    return save_manifest(Manifest(entries, settings), out / "manifest.json")


def _fixations_for(manifest, entry, cache, dims):
    path = manifest.resolve(entry.fixation_path)
    if path not in cache:
        cache[path] = load_fixation_table(path, dims)
    table = cache[path]
    if entry.id not in table:
        # an image nobody fixated keeps an empty, unscorable set
        return FixationSet(entry.id, np.empty((0, 2), dtype=np.int64), *dims)
    return table[entry.id]


def load_dataset(manifest):
    """Assemble the classification dataset described by a manifest.

    Every entry needs an image, a label and gaze (fixations or a density).
    A missing density is estimated from the fixations; a missing mask is
    treated as empty.
    """
    if not manifest.entries:
        raise ValueError("manifest has no entries")
    bad = [e.id for e in manifest.entries if not e.image_path or e.label is None]
    if bad:
        raise ValueError(f"entries without image or label: {bad[:5]}")
    nogaze = [e.id for e in manifest.entries if not (e.fixation_path or e.density_path)]
    if nogaze:
        raise ValueError(f"entries without fixations or density: {nogaze[:5]}")
    images = np.stack([load_image(manifest.resolve(e.image_path)) for e in manifest.entries])
    dims = images.shape[1:3]
    if manifest.grid and tuple(manifest.grid) != tuple(dims):
        raise ValueError(f"manifest grid {manifest.grid} does not match image grid {dims}")
    cache, fixations, densities, masks = {}, [], [], []
    for e in manifest.entries:
        fix = _fixations_for(manifest, e, cache, dims) if e.fixation_path else None
        if e.density_path:
            dens = load_matrix(manifest.resolve(e.density_path), "density")
        else:
            dens = np.zeros(dims)
            np.add.at(dens, (fix.points[:, 0], fix.points[:, 1]), 1.0)
            dens = gaussian_filter(dens, default_blur_sigma(dims), mode="reflect")
        if dens.shape != dims:
            raise ValueError(f"entry {e.id!r}: density {dens.shape} does not match image grid {dims}")
        if fix is None:
            fix = FixationSet(e.id, np.empty((0, 2), dtype=np.int64), *dims)
        mask = load_matrix(manifest.resolve(e.gt_mask_path), "mask") if e.gt_mask_path else np.zeros(dims)
        fixations.append(fix)
        densities.append(dens)
        masks.append(mask.astype(bool))
    labels = np.array([e.label for e in manifest.entries], dtype=np.int64)
    num_classes = int(manifest.settings.get("num_classes", labels.max() + 1))
    return SyntheticDataset([e.id for e in manifest.entries], images, labels, np.stack(densities), fixations,
                            np.stack(masks), num_classes)


def manifest_split(manifest, dataset, test_fraction=0.2):
    """Index arrays ``(train, test)`` from the manifest's recorded split, else the first/last split."""
    split = manifest.settings.get("split")
    if not split:
        n_test = int(round(len(dataset) * test_fraction))
        idx = np.arange(len(dataset))
        return idx[: len(dataset) - n_test], idx[len(dataset) - n_test:]
    pos = {i: n for n, i in enumerate(dataset.ids)}
    unknown = [i for i in split["train"] + split["test"] if i not in pos]
    if unknown:
        raise ValueError(f"split names unknown ids: {unknown[:5]}")
    overlap = set(split["train"]) & set(split["test"])
    if overlap:
        raise ValueError(f"ids in both train and test: {sorted(overlap)[:5]}")
    return np.array([pos[i] for i in split["train"]]), np.array([pos[i] for i in split["test"]])
