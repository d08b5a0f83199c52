"""Datasets (IDX files and a synthetic blob generator), splits, and
versioned JSON persistence for every artifact the pipeline produces."""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

FORMAT_TAG = "adare"
ARTIFACT_VERSION = 1
ARTIFACT_KINDS = ("net", "nulls", "confusion", "stages", "experiment")


def child_rng(master_seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named stream under one master seed."""
    return np.random.default_rng([int(master_seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])


def child_seed(master_seed: int, name: str) -> int:
    return int(child_rng(master_seed, name).integers(0, 2**63 - 1))


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    provenance: str = "synthetic"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2 or self.y.shape != (len(self.X),):
            raise ValueError("dataset features must be (n, d) with one label per row")
        if len(self.X) and (not np.all(np.isfinite(self.X)) or self.X.min() < 0.0 or self.X.max() > 1.0):
            raise ValueError("dataset features must be finite and within [0, 1]")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.n_classes, self.provenance)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)


@dataclass
class SyntheticSpec:
    n_classes: int = 4
    dim: int = 36
    spread: float = 0.15
    samples_per_class: int = 300
    seed: int = 0
    means: np.ndarray | None = field(default=None)
    mean_range: tuple[float, float] = (0.1, 0.9)

    def __post_init__(self):
        if self.spread < 0:
            raise ValueError("spread must be nonnegative")
        if self.n_classes < 2 or self.dim < 1 or self.samples_per_class < 1:
            raise ValueError("invalid synthetic dataset sizes")
        lo, hi = self.mean_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("mean_range must satisfy 0 <= low <= high <= 1")
        if self.means is not None:
            self.means = np.asarray(self.means, dtype=float)
            if self.means.shape != (self.n_classes, self.dim):
                raise ValueError("means must be (n_classes, dim)")
            if self.means.min() < 0 or self.means.max() > 1:
                raise ValueError("class means must lie in [0, 1]")


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Clamped isotropic Gaussian blobs, one per class.

    When ``spec.means`` is None the class means are drawn uniformly from
    ``spec.mean_range`` in every coordinate using the same seed.
    """
    rng = np.random.default_rng(spec.seed)
    means = spec.means if spec.means is not None else rng.uniform(*spec.mean_range, size=(spec.n_classes, spec.dim))
    n = spec.samples_per_class
    X = np.concatenate([
        np.clip(m + spec.spread * rng.standard_normal((n, spec.dim)), 0.0, 1.0) for m in means
    ])
    y = np.repeat(np.arange(spec.n_classes), n)
    return Dataset(X, y, spec.n_classes, "synthetic")


def _read_idx_header(buf: bytes, path, magic: int, ndim: int):
    if len(buf) < 4 + 4 * ndim:
        raise ValueError(f"{path}: file too short for IDX header")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise ValueError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", buf[4:4 + 4 * ndim])
    return dims, buf[4 + 4 * ndim:]


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Read an IDX image/label file pair (the MNIST distribution format)."""
    img_buf = Path(images_path).read_bytes()
    lab_buf = Path(labels_path).read_bytes()
    (count, rows, cols), pixels = _read_idx_header(img_buf, images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,), labels = _read_idx_header(lab_buf, labels_path, IDX_LABELS_MAGIC, 1)
    expected = count * rows * cols
    if len(pixels) != expected:
        raise ValueError(f"{images_path}: expected {expected} pixel bytes, found {len(pixels)}")
    if len(labels) != n_labels:
        raise ValueError(f"{labels_path}: expected {n_labels} label bytes, found {len(labels)}")
    if count != n_labels:
        raise ValueError(f"image count {count} does not match label count {n_labels}")
    X = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols) / 255.0
    y = np.frombuffer(labels, dtype=np.uint8).astype(int)
    k = n_classes if n_classes is not None else (int(y.max()) + 1 if count else 1)
    return Dataset(X, y, k, "idx")


def write_idx(images_path, labels_path, images: np.ndarray, labels) -> None:
    """Write uint8 images of shape (n, rows, cols) and labels as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def split(data: Dataset, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified (train, heldout, test) split with a seeded shuffle per class."""
    fractions = np.asarray(fractions, dtype=float)
    if fractions.shape != (3,) or np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("split fractions must be three nonnegative numbers summing to 1")
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for c in range(data.n_classes):
        idx = np.flatnonzero(data.y == c)
        if len(idx) == 0:
            continue
        nonzero = np.count_nonzero(fractions)
        if len(idx) < nonzero:
            raise ValueError(f"class {c} has {len(idx)} samples, too few to stratify over {nonzero} parts")
        idx = rng.permutation(idx)
        n_train = int(round(fractions[0] * len(idx)))
        n_held = int(round(fractions[1] * len(idx)))
        n_held = min(n_held, len(idx) - n_train)
        bounds = [0, n_train, n_train + n_held, len(idx)]
        for p in range(3):
            parts[p].append(idx[bounds[p]:bounds[p + 1]])
    out = []
    for p in parts:
        sel = np.sort(np.concatenate(p)) if p else np.array([], dtype=int)
        out.append(data.subset(sel))
    return tuple(out)


# -- artifact persistence ----------------------------------------------------

def _encode(kind: str, value) -> dict:
    from . import adastat, netcore, nullmodel, reattack
    if kind == "net":
        return netcore.net_to_dict(value)
    if kind == "nulls":
        return nullmodel.nullset_to_dict(value)
    if kind == "confusion":
        return adastat.confusion_to_dict(value)
    if kind == "stages":
        return reattack.stages_to_dict(value)
    if kind == "experiment":
        return dict(value)
    raise ValueError(f"unknown artifact kind {kind!r}")


def _decode(kind: str, body: dict):
    from . import adastat, netcore, nullmodel, reattack
    if kind == "net":
        return netcore.net_from_dict(body)
    if kind == "nulls":
        return nullmodel.nullset_from_dict(body)
    if kind == "confusion":
        return adastat.confusion_from_dict(body)
    if kind == "stages":
        return reattack.stages_from_dict(body)
    return body


def dumps_artifact(kind: str, value) -> str:
    doc = {"format": FORMAT_TAG, "kind": kind, "version": ARTIFACT_VERSION, "body": _encode(kind, value)}
    # Python's float repr is the shortest string that round-trips exactly.
    return json.dumps(doc, sort_keys=True, allow_nan=False) + "\n"


def loads_artifact(text: str, kind: str | None = None):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"artifact is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise ValueError("not an adare artifact document")
    if doc.get("version") != ARTIFACT_VERSION:
        raise ValueError(f"unsupported artifact version {doc.get('version')!r}")
    if doc.get("kind") not in ARTIFACT_KINDS:
        raise ValueError(f"unknown artifact kind {doc.get('kind')!r}")
    if kind is not None and doc["kind"] != kind:
        raise ValueError(f"expected a {kind!r} artifact, found {doc['kind']!r}")
    if not isinstance(doc.get("body"), dict):
        raise ValueError("artifact body missing")
    return _decode(doc["kind"], doc["body"])


def save_artifact(path, kind: str, value) -> Path:
    """Serialize ``value`` as a versioned JSON artifact; the write is atomic."""
    path = Path(path)
    text = dumps_artifact(kind, value)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.replace(tmp, path)
    return path


def load_artifact(path, kind: str | None = None):
    return loads_artifact(Path(path).read_text(), kind)
