"""Bit-exact weight archives.

An archive is a directory holding ``manifest.json`` (an array of
``{name, shape, offset, length, crc32}`` entries) and ``weights.bin``
(the concatenated tensors as IEEE-754 little-endian float32, row-major).
Each parameterized layer contributes ``<layer>.weight`` and ``<layer>.bias``
entries. Loads verify the checksum of every slice before touching the model.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

from .errors import ArchiveError, ChecksumError
from .model import ModelGraph, WeightProvenance

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "weights.bin"


def save_weights(model: ModelGraph, path, layer_names=None) -> None:
    """Write the model's parameters (optionally a subset of layers) to a
    new archive directory at ``path``."""
    names = model.parameterized_layers() if layer_names is None else list(layer_names)
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = []
        offset = 0
        with open(out / BLOB_NAME, "wb") as blob:
            for name in names:
                w, b = model.parameter_tensors(name)
                for suffix, t in (("weight", w), ("bias", b)):
                    raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
                    manifest.append(
                        {
                            "name": f"{name}.{suffix}",
                            "shape": list(t.shape),
                            "offset": offset,
                            "length": len(raw),
                            "crc32": zlib.crc32(raw),
                        }
                    )
                    blob.write(raw)
                    offset += len(raw)
        with open(out / MANIFEST_NAME, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=1)
            f.write("\n")
    except OSError as e:
        raise ArchiveError(f"cannot write weight archive at {out}: {e}") from e


def read_archive(path) -> dict[str, np.ndarray]:
    """Read and checksum-verify every tensor in an archive."""
    root = Path(path)
    try:
        with open(root / MANIFEST_NAME, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        blob = (root / BLOB_NAME).read_bytes()
    except OSError as e:
        raise ArchiveError(f"cannot read weight archive at {root}: {e}") from e
    except json.JSONDecodeError as e:
        raise ArchiveError(f"malformed manifest in {root}: {e}") from e

    tensors: dict[str, np.ndarray] = {}
    spans: list[tuple[int, int, str]] = []
    for entry in manifest:
        name, shape = entry["name"], tuple(entry["shape"])
        offset, length = int(entry["offset"]), int(entry["length"])
        if offset < 0 or offset + length > len(blob):
            raise ArchiveError(f"entry {name} spans past the end of {BLOB_NAME}")
        raw = blob[offset:offset + length]
        if zlib.crc32(raw) != entry["crc32"]:
            raise ChecksumError(f"checksum mismatch for {name} in {root}")
        n = int(np.prod(shape)) if shape else 0
        if length != 4 * n:
            raise ArchiveError(f"entry {name}: {length} bytes but shape {shape}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        spans.append((offset, offset + length, name))
    spans.sort()
    for (_, prev_end, prev_name), (start, _, name) in zip(spans, spans[1:]):
        if start < prev_end:
            raise ArchiveError(f"entries {prev_name} and {name} overlap in {BLOB_NAME}")
    return tensors


def load_weights(
    model: ModelGraph,
    path,
    policy: str = "strict",
    source_domain: str = "pretrained archive",
    target_domain: str = "brain-mri binary task",
) -> ModelGraph:
    """Copy archived parameters into the model.

    ``strict`` requires a one-to-one match with every parameterized layer;
    ``base_only`` loads the layers before the head and leaves the head at
    its initialization (the transfer-learning path).
    """
    if policy not in ("strict", "base_only"):
        raise ValueError(f"unknown load policy {policy!r}")
    tensors = read_archive(path)
    wanted = model.parameterized_layers() if policy == "strict" else model.base_layer_names()

    staged: list[tuple[np.ndarray, np.ndarray]] = []
    expected_entries = set()
    for name in wanted:
        w, b = model.parameter_tensors(name)
        for suffix, t in (("weight", w), ("bias", b)):
            key = f"{name}.{suffix}"
            expected_entries.add(key)
            if key not in tensors:
                raise ArchiveError(f"archive is missing layer entry {key}")
            arr = tensors[key]
            if arr.shape != t.shape:
                raise ArchiveError(
                    f"shape mismatch for {key}: archive {list(arr.shape)} vs model {list(t.shape)}"
                )
            staged.append((t.data, arr))
    if policy == "strict":
        extra = set(tensors) - expected_entries
        if extra:
            raise ArchiveError(f"archive has entries not in the model: {sorted(extra)}")
    for dst, src in staged:
        np.copyto(dst, src)
    model.provenance = WeightProvenance(
        source_domain=source_domain,
        target_domain=target_domain,
        frozen_layer_names=sorted(model.frozen_layers),
    )
    return model
