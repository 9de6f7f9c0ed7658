"""Clip folders, the synthetic moving-square dataset, checkpoints and PA exports.

Clip layout: a directory of ``frame_000001.png`` ... (8-bit RGB, gapless
numbering from 1) plus, for datasets, a ``labels.csv`` with header
``path,label,frames`` (paths relative to the CSV) and a ``manifest.json``.

Checkpoint layout (all integers u32 little-endian)::

    b"PANW" | version | entry count |
    per entry: name length | UTF-8 name | rank | extents... | float32 LE payload
"""
from __future__ import annotations

import csv
import json
import re
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from PIL import Image

FRAME_RE = re.compile(r"^frame_(\d{6})\.(png|ppm|jpg|jpeg)$")
CLASSES = ("MoveUp", "MoveDown", "MoveLeft", "MoveRight")
# (dy, dx) per class, image rows grow downwards
DIRECTIONS = {"MoveUp": (-1, 0), "MoveDown": (1, 0), "MoveLeft": (0, -1), "MoveRight": (0, 1)}

MAGIC = b"PANW"
VERSION = 1


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, tensors: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            if arr.ndim == 0:
                raise FormatError(f"{name}: rank-0 tensors are not storable")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a PANW checkpoint")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            shape = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            n = int(np.prod(shape))
            if pos + 4 * n > len(data):
                raise FormatError(f"{path}: truncated payload for {name}")
            out[name] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * n
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    return out


# ---------------------------------------------------------------------------
# clips
# ---------------------------------------------------------------------------

def frame_name(i: int) -> str:
    return f"frame_{i:06d}.png"


def write_clip(frames: np.ndarray, directory) -> None:
    """``frames`` is uint8 [L, H, W, 3]."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(frames, start=1):
        Image.fromarray(fr, mode="RGB").save(d / frame_name(i), optimize=False)


def load_clip_uint8(path) -> np.ndarray:
    """uint8 [L, 3, H, W] in frame-number order."""
    d = Path(path)
    if not d.is_dir():
        raise FileNotFoundError(f"clip directory {d} does not exist")
    numbered = {}
    for p in d.iterdir():
        m = FRAME_RE.match(p.name)
        if m:
            numbered[int(m.group(1))] = p
    if not numbered:
        raise FormatError(f"{d}: no frame_NNNNNN images found")
    last = max(numbered)
    for i in range(1, last + 1):
        if i not in numbered:
            raise FormatError(f"{d}: missing frame {i} ({frame_name(i)})")
    frames, shape = [], None
    for i in range(1, last + 1):
        p = numbered[i]
        try:
            with Image.open(p) as im:
                arr = np.asarray(im.convert("RGB"))
        except Exception as exc:
            raise FormatError(f"cannot decode {p}: {exc}") from exc
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise FormatError(f"{p}: resolution {arr.shape[:2]} differs from {shape[:2]}")
        frames.append(arr)
    return np.stack(frames).transpose(0, 3, 1, 2).copy()


def load_clip(path) -> List[np.ndarray]:
    """Frames as float32 [3, H, W] tensors in [0, 1]."""
    return list(load_clip_uint8(path).astype(np.float32) / np.float32(255.0))


def read_index(root) -> List[Tuple[str, int, int]]:
    csv_path = Path(root) / "labels.csv"
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "label", "frames"]:
            raise FormatError(f"{csv_path}: header must be path,label,frames, got {header}")
        return [(r[0], int(r[1]), int(r[2])) for r in reader if r]


@dataclass
class ClipDataset:
    clips: np.ndarray          # uint8 [n, L, 3, H, W]
    labels: np.ndarray         # int [n]
    paths: List[str] = field(default_factory=list)
    num_classes: int = 4

    def __len__(self) -> int:
        return len(self.labels)

    def frames(self, i: int) -> np.ndarray:
        return self.clips[i].astype(np.float32) / np.float32(255.0)

    def subset(self, idx) -> "ClipDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return ClipDataset(self.clips[idx], self.labels[idx], [self.paths[i] for i in idx], self.num_classes)


def load_dataset(root) -> ClipDataset:
    rows = read_index(root)
    if not rows:
        raise FormatError(f"{root}: empty dataset")
    clips = []
    for rel, _, nframes in rows:
        c = load_clip_uint8(Path(root) / rel)
        if len(c) != nframes:
            raise FormatError(f"{rel}: index says {nframes} frames, found {len(c)}")
        clips.append(c)
    labels = np.array([r[1] for r in rows])
    n_classes = len(CLASSES)
    manifest = Path(root) / "manifest.json"
    if manifest.exists():
        n_classes = len(json.loads(manifest.read_text())["spec"]["classes"])
    return ClipDataset(np.stack(clips), labels, [r[0] for r in rows], n_classes)


def split_indices(labels: np.ndarray, test_fraction: float = 0.25, seed: int = 0):
    """Stratified split; returns (train_idx, test_idx)."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        k = int(round(len(idx) * test_fraction))
        test.extend(idx[:k])
        train.extend(idx[k:])
    return np.sort(train), np.sort(test)


# ---------------------------------------------------------------------------
# synthetic moving squares
# ---------------------------------------------------------------------------

@dataclass
class SynthSpec:
    classes: Tuple[str, ...] = CLASSES
    clips_per_class: int = 100
    frames: int = 32
    size: int = 64
    square: int = 10
    speed: int = 1
    noise_sigma: float = 0.02
    texture_cells: int = 8
    seed: int = 42

    def validate(self) -> None:
        for c in self.classes:
            if c not in DIRECTIONS:
                raise ValueError(f"unknown class {c!r}; choose from {sorted(DIRECTIONS)}")
        if self.frames < 2 or self.clips_per_class < 1:
            raise ValueError("need at least 2 frames and 1 clip per class")
        if self.square < 1 or self.speed < 1:
            raise ValueError("square size and speed must be positive")
        travel = self.speed * (self.frames - 1)
        if self.square + travel > self.size:
            raise ValueError(f"square of {self.square}px moving {travel}px leaves a {self.size}px frame")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")

    @property
    def travel(self) -> int:
        return self.speed * (self.frames - 1)


def _texture(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    coarse = rng.uniform(0.15, 0.85, (cells, cells, 3))
    rep = -(-size // cells)
    tex = np.kron(coarse, np.ones((rep, rep, 1)))[:size, :size]
    return np.clip(tex + rng.normal(0, 0.03, tex.shape), 0, 1)


def render_clip(spec: SynthSpec, label: int, rng: np.random.Generator):
    """uint8 [L, H, W, 3] frames and the clip geometry."""
    name = spec.classes[label]
    dy, dx = DIRECTIONS[name]
    bg = _texture(rng, spec.size, spec.texture_cells)
    # square colour far from the local background keeps the target visible
    while True:
        colour = rng.uniform(0, 1, 3)
        if np.abs(colour - bg.mean(axis=(0, 1))).sum() > 0.6:
            break
    # trajectory midpoint is drawn from the same range for every class
    half = spec.travel / 2
    lo, hi = half, spec.size - spec.square - half
    mid = rng.uniform(lo, hi, 2)
    start = np.floor(mid - np.array([dy, dx]) * half).astype(int)
    frames = np.empty((spec.frames, spec.size, spec.size, 3), np.uint8)
    colour8 = np.round(colour * 255).astype(np.uint8)
    for t in range(spec.frames):
        img = bg.copy()
        if spec.noise_sigma > 0:
            img = img + rng.normal(0, spec.noise_sigma, img.shape)
        img = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
        y, x = start[0] + dy * spec.speed * t, start[1] + dx * spec.speed * t
        img[y:y + spec.square, x:x + spec.square] = colour8
        frames[t] = img
    geom = {"start": [int(start[0]), int(start[1])], "velocity": [dy * spec.speed, dx * spec.speed],
            "colour": colour8.tolist()}
    return frames, geom


def synth_dataset(spec: SynthSpec, out_dir) -> List[Tuple[str, int, int]]:
    """Write clips, ``labels.csv`` and ``manifest.json``; returns the index rows."""
    spec.validate()
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(spec.seed).spawn(len(spec.classes) * spec.clips_per_class)
    rows, clips_meta = [], []
    i = 0
    for label, name in enumerate(spec.classes):
        for k in range(spec.clips_per_class):
            rel = f"{name}/clip_{k:04d}"
            frames, geom = render_clip(spec, label, np.random.default_rng(seeds[i]))
            write_clip(frames, root / rel)
            rows.append((rel, label, spec.frames))
            clips_meta.append({"path": rel, "label": label, **geom})
            i += 1
    with open(root / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "frames"])
        w.writerows(rows)
    manifest = {"spec": {**asdict(spec), "classes": list(spec.classes)}, "clips": clips_meta}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return rows


def synth_in_memory(spec: SynthSpec) -> ClipDataset:
    """Same clips as synth_dataset, without touching the disk."""
    spec.validate()
    seeds = np.random.SeedSequence(spec.seed).spawn(len(spec.classes) * spec.clips_per_class)
    clips, labels, paths = [], [], []
    i = 0
    for label, name in enumerate(spec.classes):
        for k in range(spec.clips_per_class):
            frames, _ = render_clip(spec, label, np.random.default_rng(seeds[i]))
            clips.append(frames.transpose(0, 3, 1, 2))
            labels.append(label)
            paths.append(f"{name}/clip_{k:04d}")
            i += 1
    return ClipDataset(np.stack(clips), np.array(labels), paths, len(spec.classes))


# ---------------------------------------------------------------------------
# PA map export
# ---------------------------------------------------------------------------

def export_pa_png(pa_map: np.ndarray, path) -> dict:
    """Min-max scaled 8-bit grayscale PNG plus ``<path>.json`` holding the true range."""
    arr = np.asarray(pa_map, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ValueError(f"expected a single-channel map, got {arr.shape}")
        arr = arr[0]
    if not np.all(np.isfinite(arr)):
        raise ValueError("PA map contains non-finite values")
    lo, hi = float(arr.min()), float(arr.max())
    degenerate = hi == lo
    if degenerate:
        img = np.full(arr.shape, 128, np.uint8)
    else:
        img = np.round((arr - lo) / (hi - lo) * 255).astype(np.uint8)
    path = Path(path)
    Image.fromarray(img, mode="L").save(path)
    meta = {"min": lo, "max": hi, "degenerate": degenerate}
    Path(str(path) + ".json").write_text(json.dumps(meta))
    return meta


def import_pa_png(path) -> np.ndarray:
    """Invert export_pa_png up to quantisation; returns [1, H, W] float64."""
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    with Image.open(path) as im:
        img = np.asarray(im, dtype=np.float64)
    if meta["degenerate"]:
        return np.full((1,) + img.shape, meta["min"])
    return (meta["min"] + img / 255.0 * (meta["max"] - meta["min"]))[None]
