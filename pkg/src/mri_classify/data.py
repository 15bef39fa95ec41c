"""Image ingestion, preprocessing, augmentation, and leakage-safe splits.

Disk layout: ``<root>/tumor/*.png`` and ``<root>/healthy/*.png`` (JPEG also
accepted). The manifest is line-delimited JSON, one record per sample.
Augmented records reference their origin image plus the exact transform
parameters; pixels are materialized lazily when a sample is loaded, so
manifest-level augmentation is cheap and the corpus never stores derived
images.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptImageError,
    DatasetLayoutError,
    ImageFormatError,
    ManifestError,
    ShapeError,
)
from .seeding import derive_seed
from .tensor import Tensor

LABELS = ("healthy", "tumor")
POSITIVE_LABEL = "tumor"
SPLITS = ("train", "val", "test", "unassigned")
TARGET_SIZE = (224, 224)
MAX_SHIFT = 24  # pixels, ~10% of the 224 target width
MAX_ANGLE = 15.0  # degrees
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


# ---------------------------------------------------------------------------
# pixel operations


def decode_image(path) -> Tensor:
    """Decode a PNG or JPEG into a [H, W, 3] tensor of 0..255 values.

    Grayscale inputs are replicated across the three channels.
    """
    from PIL import Image, UnidentifiedImageError

    p = Path(path)
    if p.suffix.lower() not in IMAGE_SUFFIXES:
        raise ImageFormatError(f"unsupported image format {p.suffix!r} for {p}")
    try:
        with Image.open(p) as img:
            img.load()
            if img.format not in ("PNG", "JPEG"):
                raise ImageFormatError(f"unsupported image format {img.format!r} for {p}")
            if img.mode == "L":
                gray = np.asarray(img, dtype=np.float32)
                arr = np.stack([gray, gray, gray], axis=-1)
            else:
                arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    except UnidentifiedImageError as e:
        raise CorruptImageError(f"cannot decode {p}: {e}") from e
    except OSError as e:
        raise CorruptImageError(f"cannot read {p}: {e}") from e
    return Tensor.from_array(arr)


def resize_bilinear(image, target=TARGET_SIZE) -> Tensor:
    """Bilinear resize with half-pixel sample centers.

    Output values are convex combinations of input values, so they never
    leave the input's [min, max] range. A same-size resize is the identity
    because every sample center lands exactly on a source pixel.
    """
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    if arr.ndim != 3:
        raise ShapeError(f"expected [H, W, C] image, got shape {arr.shape}")
    h, w, _ = arr.shape
    if h < 2 or w < 2:
        raise ShapeError(f"image too small to resize: {h}x{w}")
    th, tw = target

    def axis_coords(n_in: int, n_out: int):
        scale = n_in / n_out
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        lo = np.minimum(lo, n_in - 2) if n_in > 1 else lo
        frac = (src - lo).astype(np.float32)
        return lo, frac

    r0, rf = axis_coords(h, th)
    c0, cf = axis_coords(w, tw)
    top = arr[r0][:, c0] * (1 - cf)[None, :, None] + arr[r0][:, c0 + 1] * cf[None, :, None]
    bot = arr[r0 + 1][:, c0] * (1 - cf)[None, :, None] + arr[r0 + 1][:, c0 + 1] * cf[None, :, None]
    out = top * (1 - rf)[:, None, None] + bot * rf[:, None, None]
    return Tensor.from_array(out.astype(np.float32))


def normalize(image) -> Tensor:
    """Scale 0..255 pixel values into [0, 1]."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError(
            f"pixel values outside [0, 255]: min {arr.min():.3f}, max {arr.max():.3f}"
        )
    return Tensor.from_array(arr / np.float32(255.0))


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class Augmentation:
    """One transform: a horizontal shift, a vertical shift, or a rotation."""

    kind: str  # hshift|vshift|rotate
    dx: int = 0
    dy: int = 0
    angle: float = 0.0
    seed: int = 0

    def as_dict(self) -> dict:
        return {"kind": self.kind, "dx": self.dx, "dy": self.dy,
                "angle": self.angle, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "Augmentation":
        return cls(kind=d["kind"], dx=int(d["dx"]), dy=int(d["dy"]),
                   angle=float(d["angle"]), seed=int(d["seed"]))


def draw_augmentation(seed: int) -> Augmentation:
    """Deterministically pick one transform and its magnitude from a seed."""
    rng = np.random.default_rng(seed)
    kind = ("hshift", "vshift", "rotate")[int(rng.integers(0, 3))]
    if kind == "hshift":
        return Augmentation(kind, dx=int(rng.integers(-MAX_SHIFT, MAX_SHIFT + 1)), seed=seed)
    if kind == "vshift":
        return Augmentation(kind, dy=int(rng.integers(-MAX_SHIFT, MAX_SHIFT + 1)), seed=seed)
    return Augmentation(kind, angle=float(rng.uniform(-MAX_ANGLE, MAX_ANGLE)), seed=seed)


def shift_image(image, dx: int, dy: int) -> Tensor:
    """Integer-pixel translation: out[r, c] = in[r - dy, c - dx], zero fill."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    h, w, c = arr.shape
    out = np.zeros_like(arr)
    r0, r1 = max(0, dy), min(h, h + dy)
    c0, c1 = max(0, dx), min(w, w + dx)
    if r0 < r1 and c0 < c1:
        out[r0:r1, c0:c1] = arr[r0 - dy:r1 - dy, c0 - dx:c1 - dx]
    return Tensor.from_array(out)


def rotate_image(image, angle_deg: float) -> Tensor:
    """Rotate about the image center with bilinear resampling, zero fill."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    h, w, c = arr.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    dr, dc = rr - cy, cc - cx
    src_r = cy + cos_t * dr + sin_t * dc
    src_c = cx - sin_t * dr + cos_t * dc

    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = (src_r - r0).astype(np.float32)
    fc = (src_c - c0).astype(np.float32)
    out = np.zeros((h, w, c), dtype=np.float32)
    for di, dj, wgt in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        ri, ci = r0 + di, c0 + dj
        valid = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        vals = np.where(
            valid[..., None],
            arr[np.clip(ri, 0, h - 1), np.clip(ci, 0, w - 1)],
            0.0,
        )
        out += wgt[..., None] * vals
    return Tensor.from_array(out)


def apply_augmentation(image, aug: Augmentation) -> Tensor:
    if aug.kind in ("hshift", "vshift"):
        return shift_image(image, aug.dx, aug.dy)
    if aug.kind == "rotate":
        return rotate_image(image, aug.angle)
    raise ValueError(f"unknown augmentation kind {aug.kind!r}")


def augment(image, k: int, seed: int) -> list[tuple[Tensor, Augmentation]]:
    """Produce k transformed copies with their parameter records."""
    if k < 0:
        raise ValueError("k must be >= 0")
    out = []
    for i in range(k):
        aug = draw_augmentation(derive_seed(seed, i))
        out.append((apply_augmentation(image, aug), aug))
    return out


# ---------------------------------------------------------------------------
# manifest


@dataclass
class SampleRecord:
    id: str
    origin_id: str
    path: str
    label: str
    split: str = "unassigned"
    augmentation: Augmentation | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ManifestError(f"record {self.id}: unknown label {self.label!r}")
        if self.split not in SPLITS:
            raise ManifestError(f"record {self.id}: unknown split {self.split!r}")
        if (self.origin_id == self.id) != (self.augmentation is None):
            raise ManifestError(
                f"record {self.id}: origin_id must equal id exactly for unaugmented records"
            )

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "origin_id": self.origin_id,
            "path": self.path,
            "label": self.label,
            "split": self.split,
            "augmentation": None if self.augmentation is None else self.augmentation.as_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        aug = d.get("augmentation")
        return cls(
            id=d["id"],
            origin_id=d["origin_id"],
            path=d["path"],
            label=d["label"],
            split=d.get("split", "unassigned"),
            augmentation=None if aug is None else Augmentation.from_dict(aug),
        )


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    provenance: str = ""

    @property
    def class_counts(self) -> Counter:
        return Counter(r.label for r in self.records)

    def origins(self) -> list[SampleRecord]:
        return [r for r in self.records if r.augmentation is None]

    def augmented(self) -> list[SampleRecord]:
        return [r for r in self.records if r.augmentation is not None]

    def by_split(self, split: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == split]

    def validate(self) -> None:
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ManifestError("record ids are not unique")
        split_of = {r.id: r.split for r in self.records}
        for r in self.records:
            if r.augmentation is None:
                continue
            if r.origin_id not in split_of:
                raise ManifestError(f"record {r.id}: origin {r.origin_id} not in manifest")
            if r.split != split_of[r.origin_id]:
                raise ManifestError(
                    f"record {r.id}: split {r.split} differs from origin's "
                    f"{split_of[r.origin_id]}"
                )


def write_manifest(manifest: DatasetManifest, path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="\n") as f:
        for r in manifest.records:
            f.write(json.dumps(r.as_dict(), separators=(",", ":")))
            f.write("\n")


def read_manifest(path) -> DatasetManifest:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(SampleRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as e:
                raise ManifestError(f"{path}:{line_no}: bad record: {e}") from e
    return DatasetManifest(records)


def scan_data_root(root) -> DatasetManifest:
    """Inventory ``<root>/<label>/<file>`` into a manifest of origin records."""
    rootp = Path(root)
    records = []
    for label in LABELS:
        d = rootp / label
        if not d.is_dir():
            raise DatasetLayoutError(f"missing class directory: {d}")
        files = sorted(
            f for f in d.iterdir() if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES
        )
        if not files:
            raise DatasetLayoutError(f"class directory has no images: {d}")
        for f in files:
            rel = f"{label}/{f.name}"
            records.append(SampleRecord(id=rel, origin_id=rel, path=rel, label=label))
    return DatasetManifest(records, provenance=str(rootp))


def augment_manifest(manifest: DatasetManifest, k: int, seed: int) -> DatasetManifest:
    """Expand every origin record with k augmented records.

    Augmented records point at the origin's image file and carry the
    transform parameters; any previously generated augmented records are
    regenerated, so reruns with the same seed are byte-identical.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    out: list[SampleRecord] = []
    for origin in manifest.origins():
        out.append(origin)
        for i in range(k):
            aug = draw_augmentation(derive_seed(seed, "augment", origin.id, i))
            out.append(
                SampleRecord(
                    id=f"{origin.id}#a{i}",
                    origin_id=origin.id,
                    path=origin.path,
                    label=origin.label,
                    split=origin.split,
                    augmentation=aug,
                )
            )
    return DatasetManifest(out, provenance=manifest.provenance)


def stratified_group_split(manifest: DatasetManifest, ratios=(0.8, 0.1, 0.1),
                           seed: int = 0) -> DatasetManifest:
    """Assign train/val/test so that origin groups never straddle splits.

    Groups (an origin plus all its augmentations) are shuffled per class
    with a seeded RNG and apportioned by largest remainder, so per-class
    group counts stay within one group of the exact ratios. Deterministic
    in (manifest, seed).
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    groups: dict[str, list[SampleRecord]] = {}
    for r in manifest.records:
        groups.setdefault(r.origin_id, []).append(r)
    label_of = {r.id: r.label for r in manifest.records if r.augmentation is None}
    for origin_id in groups:
        if origin_id not in label_of:
            raise ManifestError(f"augmented records reference missing origin {origin_id}")

    by_class: dict[str, list[str]] = {}
    for origin_id, label in label_of.items():
        by_class.setdefault(label, []).append(origin_id)
    for label in LABELS:
        if label in by_class and not by_class[label]:
            del by_class[label]
    if not by_class or any(len(v) == 0 for v in by_class.values()):
        raise ManifestError("every class needs at least one origin group")

    assignment: dict[str, str] = {}
    # running shortfall of each split vs its ideal share, used to break
    # remainder ties so totals stay balanced across classes
    deficit = [0.0, 0.0, 0.0]
    split_names = ("train", "val", "test")
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        rng = np.random.default_rng(derive_seed(seed, "split", label))
        ids = [ids[i] for i in rng.permutation(len(ids))]
        g = len(ids)
        quotas = [ratios[s] * g for s in range(3)]
        counts = [int(math.floor(q + 1e-9)) for q in quotas]
        leftover = g - sum(counts)
        remainders = sorted(
            range(3),
            key=lambda s: (-(quotas[s] - counts[s]), -deficit[s], s),
        )
        for s in remainders[:leftover]:
            counts[s] += 1
        pos = 0
        for s, name in enumerate(split_names):
            for origin_id in ids[pos:pos + counts[s]]:
                assignment[origin_id] = name
            pos += counts[s]
            deficit[s] += quotas[s] - counts[s]

    new_records = [
        SampleRecord(
            id=r.id,
            origin_id=r.origin_id,
            path=r.path,
            label=r.label,
            split=assignment[r.origin_id],
            augmentation=r.augmentation,
        )
        for r in manifest.records
    ]
    result = DatasetManifest(new_records, provenance=manifest.provenance)
    result.validate()
    return result


# ---------------------------------------------------------------------------
# sample loading


def load_sample(record: SampleRecord, root) -> np.ndarray:
    """Decode, resize to 224x224, scale into [0, 1], then apply the
    record's transform if it is an augmented sample."""
    image = decode_image(Path(root) / record.path)
    image = normalize(resize_bilinear(image))
    if record.augmentation is not None:
        image = apply_augmentation(image, record.augmentation)
    return image.data


class ManifestDataset:
    """Lazy (image, label) view over manifest records for training/eval."""

    def __init__(self, records: list[SampleRecord], root):
        self.records = records
        self.root = Path(root)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int):
        r = self.records[i]
        return load_sample(r, self.root), int(r.label == POSITIVE_LABEL)
