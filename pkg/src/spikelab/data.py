"""FashionMNIST IDX ingestion, stratified subsets, batching and a synthetic set."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import FormatError, ParameterError

N_CLASSES = 10
IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801

FASHION_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class Dataset:
    images: np.ndarray  # (N, 1, 28, 28), values in [0, 1]
    labels: np.ndarray  # (N,), int64 in [0, 9]

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ParameterError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ParameterError("image pixels must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise ParameterError(f"labels must lie in [0, {N_CLASSES - 1}]")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx])


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx(path) -> np.ndarray:
    """Read an IDX image or label file (optionally gzip-compressed).

    Image files come back as float64 in [0, 1] with the header's dims;
    label files as an int64 vector.
    """
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise FormatError(f"{path}: file too short for an IDX header ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_IMAGES:
        ndim = 3
    elif magic == IDX_LABELS:
        ndim = 1
    else:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}; expected 0x{IDX_IMAGES:08x} or 0x{IDX_LABELS:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header, expected {header} bytes, got {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    actual = len(raw) - header
    if actual < expected:
        raise FormatError(f"{path}: truncated payload, expected {expected} bytes, got {actual}")
    data = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header).reshape(dims)
    if magic == IDX_LABELS:
        return data.astype(np.int64)
    return data.astype(np.float64) / 255.0


def write_idx(path, array: np.ndarray, labels: bool) -> None:
    """Inverse of :func:`load_idx`; images are rescaled by 255 and rounded."""
    array = np.asarray(array)
    if labels:
        if array.ndim != 1:
            raise FormatError("label arrays must be 1-d")
        magic, payload = IDX_LABELS, array.astype(np.uint8)
    else:
        if array.ndim != 3:
            raise FormatError("image arrays must be (N, rows, cols)")
        magic, payload = IDX_IMAGES, np.rint(np.asarray(array, dtype=np.float64) * 255.0).astype(np.uint8)
    head = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    data = head + payload.tobytes()
    if str(path).endswith(".gz"):
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"missing {stem}[.gz] in {directory}")


def load_fashion_mnist(directory) -> tuple[Dataset, Dataset]:
    """Load ``(train, test)`` from a directory holding the four standard IDX files."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory {directory} does not exist")
    out = []
    for split in ("train", "test"):
        images = load_idx(_find(directory, FASHION_FILES[f"{split}_images"]))
        labels = load_idx(_find(directory, FASHION_FILES[f"{split}_labels"]))
        out.append(Dataset(images[:, None, :, :], labels))
    return out[0], out[1]


def subset(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Class-stratified seeded subset of size ``n`` in original order.

    Each class gets ``n // 10`` items; the remainder goes one each to the
    lowest class indices.
    """
    N = len(dataset)
    if n > N:
        raise ParameterError(f"subset size {n} exceeds dataset size {N}")
    if n < 0:
        raise ParameterError(f"subset size must be >= 0, got {n}")
    if n == N:
        return dataset.take(np.arange(N))
    rng = nx.RngStream(seed, 0x5B5E7)
    base, extra = divmod(n, N_CLASSES)
    chosen = []
    for c in range(N_CLASSES):
        quota = base + (1 if c < extra else 0)
        members = np.flatnonzero(dataset.labels == c)
        if quota > members.size:
            raise ParameterError(f"class {c} has {members.size} items, subset needs {quota}")
        perm = rng.substream(c).generator.permutation(members.size)
        chosen.append(members[perm[:quota]])
    return dataset.take(np.sort(np.concatenate(chosen)))


def batches(n_items: int | Dataset, batch_size: int, shuffle_seed: int, epoch: int) -> list[np.ndarray]:
    """Index lists of a seeded permutation keyed on ``(shuffle_seed, epoch)``."""
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    n = len(n_items) if isinstance(n_items, Dataset) else int(n_items)
    perm = nx.RngStream(shuffle_seed, 0xBA7C).substream(epoch).generator.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def class_pattern(c: int, low: float = 0.1, high: float = 0.9) -> np.ndarray:
    """28x28 background with a bright 7x7 block whose position encodes ``c``."""
    img = np.full((28, 28), low)
    r, k = divmod(c, 4)
    img[7 * r:7 * r + 7, 7 * k:7 * k + 7] = high
    return img


def synthetic_dataset(n: int, seed: int, noise_std: float = 0.02) -> Dataset:
    """Ten linearly separable classes; sample ``i`` has label ``i % 10``."""
    if n < N_CLASSES:
        raise ParameterError(f"synthetic dataset needs n >= {N_CLASSES}, got {n}")
    labels = np.arange(n) % N_CLASSES
    patterns = np.stack([class_pattern(c) for c in range(N_CLASSES)])
    images = patterns[labels][:, None]
    if noise_std > 0:
        images = images + nx.sample_gaussian(nx.RngStream(seed, 0x5E7), images.shape, 0.0, noise_std)
    return Dataset(np.clip(images, 0.0, 1.0), labels)
