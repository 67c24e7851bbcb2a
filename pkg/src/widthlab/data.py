"""Datasets: a synthetic single/multi-index teacher plus IDX and CIFAR
binary loaders, with a simple persisted tensor format.

The synthetic task draws inputs uniformly on the unit sphere (normalized
standard Gaussians) and labels them with a fixed width-4 ReLU teacher
acting on the first two coordinates:

    score(xi) = relu(xi_1) - relu(xi_2) + relu(-xi_1) - relu(-xi_2)
    label = +1 if score >= 0 else -1

which simplifies to sign(|xi_1| - |xi_2|), with exact ties labeled +1.
Labels are one-hot over two classes with column 0 for -1 and column 1
for +1, so plain argmax scoring works everywhere downstream.

Dataset files (save_dataset/load_dataset) are little-endian binary:
magic b"WLDATA1\\n", three uint32 (n_samples, d_in, d_out), a uint32
length-prefixed UTF-8 name, a uint32 length-prefixed JSON provenance
blob, then inputs and targets as row-major float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

DATASET_MAGIC = b"WLDATA1\n"

IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}

CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


@dataclass
class Dataset:
    """Row-major inputs (n, d_in) and one-hot targets (n, d_out)."""

    inputs: np.ndarray
    targets: np.ndarray
    name: str = ""
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise ValueError("inputs and targets must be 2-D")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"{self.inputs.shape[0]} inputs vs {self.targets.shape[0]} targets"
            )

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]

    @property
    def d_out(self) -> int:
        return self.targets.shape[1]


def teacher_score(xi: np.ndarray) -> np.ndarray:
    """Width-4 ReLU teacher on the first two coordinates."""
    relu = lambda z: np.maximum(z, 0.0)
    a, b = xi[:, 0], xi[:, 1]
    return relu(a) - relu(b) + relu(-a) - relu(-b)


def _sphere_points(rng: Rng, count: int, dim: int) -> np.ndarray:
    z = rng.normal((count, dim))
    norms = np.sqrt(np.sum(z * z, axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise RuntimeError("degenerate zero-norm draw")
    return z / norms


def _one_hot_pm1(labels: np.ndarray) -> np.ndarray:
    out = np.zeros((labels.shape[0], 2))
    out[np.arange(labels.shape[0]), ((labels + 1) // 2).astype(int)] = 1.0
    return out


def gen_multi_index(
    seed: int, n_train: int = 1000, n_test: int = 10000, d_in: int = 100
):
    """Generate (train, test) Datasets for the sphere teacher task.

    Train and test draw from disjoint generator streams of the same seed,
    so regenerating with one seed always reproduces both splits exactly.
    """
    if d_in < 2:
        raise ValueError("teacher needs at least 2 input coordinates")
    root = Rng(seed).split("multi_index")
    splits = []
    for split_name, count in (("train", n_train), ("test", n_test)):
        xi = _sphere_points(root.split(split_name), count, d_in)
        labels = np.where(teacher_score(xi) >= 0.0, 1, -1)
        splits.append(
            Dataset(
                inputs=xi,
                targets=_one_hot_pm1(labels),
                name=f"multi_index_{split_name}",
                provenance={
                    "kind": "multi_index",
                    "seed": seed,
                    "split": split_name,
                    "d_in": d_in,
                },
            )
        )
    return splits[0], splits[1]


def load_idx(path) -> np.ndarray:
    """Parse an IDX tensor file (big-endian magic, dims, payload)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path}: not an IDX file (bad magic)")
    dtype_code, ndim = raw[2], raw[3]
    if dtype_code not in IDX_DTYPES:
        raise ValueError(f"{path}: unknown IDX dtype code 0x{dtype_code:02x}")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise ValueError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = IDX_DTYPES[dtype_code]
    expected = int(np.prod(dims)) * dtype.itemsize if ndim else dtype.itemsize
    payload = raw[header_end:]
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    arr = np.frombuffer(payload, dtype=dtype)
    return arr.reshape(dims) if ndim else arr


def idx_image_dataset(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Pair an IDX image tensor with an IDX label vector: pixels flattened
    and scaled to [0, 1], labels one-hot."""
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if labels.ndim != 1:
        raise ValueError(f"{labels_path}: labels must be 1-D, got {labels.shape}")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"{images.shape[0]} images vs {labels.shape[0]} labels"
        )
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"label out of range 0..{num_classes - 1}")
    targets = np.zeros((labels.shape[0], num_classes))
    targets[np.arange(labels.shape[0]), labels] = 1.0
    return Dataset(
        inputs=flat,
        targets=targets,
        name="idx_images",
        provenance={"kind": "idx", "images": str(images_path),
                    "labels": str(labels_path)},
    )


def load_cifar10_bin(paths) -> Dataset:
    """Concatenate CIFAR-10 binary batches (3073-byte records: one label
    byte then 3072 pixel bytes), pixels scaled to [0, 1]."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    inputs, labels = [], []
    for path in paths:
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
            raise ValueError(
                f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        batch_labels = records[:, 0]
        if batch_labels.max(initial=0) > 9:
            raise ValueError(f"{path}: label out of range 0..9")
        labels.append(batch_labels.astype(np.int64))
        inputs.append(records[:, 1:].astype(np.float64) / 255.0)
    labels = np.concatenate(labels)
    targets = np.zeros((labels.shape[0], 10))
    targets[np.arange(labels.shape[0]), labels] = 1.0
    return Dataset(
        inputs=np.concatenate(inputs),
        targets=targets,
        name="cifar10",
        provenance={"kind": "cifar10", "paths": [str(p) for p in paths]},
    )


def save_dataset(dataset: Dataset, path) -> None:
    name_bytes = dataset.name.encode("utf-8")
    prov_bytes = json.dumps(dataset.provenance, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<3I", len(dataset), dataset.d_in, dataset.d_out))
        fh.write(struct.pack("<I", len(name_bytes)))
        fh.write(name_bytes)
        fh.write(struct.pack("<I", len(prov_bytes)))
        fh.write(prov_bytes)
        fh.write(np.ascontiguousarray(dataset.inputs, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.targets, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(len(DATASET_MAGIC))
        if magic != DATASET_MAGIC:
            raise ValueError(f"{path}: not a dataset file")
        n, d_in, d_out = struct.unpack("<3I", fh.read(12))
        (name_len,) = struct.unpack("<I", fh.read(4))
        name = fh.read(name_len).decode("utf-8")
        (prov_len,) = struct.unpack("<I", fh.read(4))
        provenance = json.loads(fh.read(prov_len).decode("utf-8"))
        inputs = np.frombuffer(fh.read(n * d_in * 8), dtype="<f8").reshape(n, d_in)
        targets = np.frombuffer(fh.read(n * d_out * 8), dtype="<f8").reshape(n, d_out)
        trailing = fh.read(1)
    if trailing:
        raise ValueError(f"{path}: trailing bytes after payload")
    return Dataset(inputs=inputs.copy(), targets=targets.copy(),
                   name=name, provenance=provenance)


def batch_stream(dataset: Dataset, batch_size: int, limit: int | None = None):
    """Yield sequential (inputs, targets) batches in stored order: one
    pass, no reshuffling, short final batch dropped. limit caps the
    number of batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    total = len(dataset) // batch_size
    if limit is not None:
        total = min(total, limit)
    for b in range(total):
        lo = b * batch_size
        hi = lo + batch_size
        yield dataset.inputs[lo:hi], dataset.targets[lo:hi]
