"""Dataset ingestion and preprocessing for MNIST-style image data.

Images are read from IDX files (the MNIST distribution format, optionally
gzip-compressed), scaled to [0, 1], centred by the training mean image and
paired with one-hot labels or with the clean images as autoencoder targets.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "IMAGE_MAGIC",
    "LABEL_MAGIC",
    "RawDataset",
    "Dataset",
    "read_idx",
    "write_idx",
    "load_idx",
    "find_split",
    "load_split",
    "preprocess",
    "subsample",
    "batches",
    "one_hot",
    "DATASET_DIRS",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DATASET_DIRS = {"mnist": "mnist", "fashion": "fashion-mnist"}
SPLIT_PREFIX = {"train": "train", "test": "t10k"}


@dataclass
class RawDataset:
    """Images as an ``(n, rows*cols)`` array in [0, 1] plus integer labels."""

    images: np.ndarray
    labels: np.ndarray
    shape: tuple[int, int] = (28, 28)
    ids: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        if self.ids is None:
            self.ids = np.arange(len(self.images))
        if len(self.images) != len(self.labels):
            raise ValueError("image and label counts differ")

    def __len__(self):
        return len(self.images)


@dataclass
class Dataset:
    """Preprocessed samples.

    ``inputs`` are the centred images the network sees (noisy ones for the
    denoising task), ``clean`` the centred clean images, ``targets`` one-hot
    labels or clean images, and ``mean`` the training mean image used for
    centring.
    """

    inputs: np.ndarray
    targets: np.ndarray
    clean: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    mean: np.ndarray
    name: str = ""
    noisy_inputs: np.ndarray | None = None
    shape: tuple[int, int] = (28, 28)

    def __len__(self):
        return len(self.inputs)


def _open(path):
    path = Path(path)
    if not path.exists() and Path(str(path) + ".gz").exists():
        path = Path(str(path) + ".gz")
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, magic: int) -> np.ndarray:
    """Read an unsigned-byte IDX file and check its magic number."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise ValueError(f"{path}: wrong magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise ValueError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head < count:
        raise ValueError(f"{path}: truncated data, expected {count} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def write_idx(path, array) -> None:
    """Write a uint8 array as IDX (gzip-compressed if the name ends in .gz)."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("IDX writer supports uint8 data only")
    magic = 0x00000800 | array.ndim
    header = struct.pack(">I", magic) + struct.pack(">" + "I" * array.ndim, *array.shape)
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(header + array.tobytes())


def load_idx(path_images, path_labels, name: str = "") -> RawDataset:
    """Parse an image/label IDX pair; pixels are divided by 255."""
    imgs = read_idx(path_images, IMAGE_MAGIC)
    labels = read_idx(path_labels, LABEL_MAGIC)
    if imgs.shape[0] != labels.shape[0]:
        raise ValueError(f"count mismatch: {imgs.shape[0]} images, {labels.shape[0]} labels")
    n, rows, cols = imgs.shape
    return RawDataset(imgs.reshape(n, rows * cols).astype(float) / 255.0,
                      labels.astype(np.int64), (rows, cols), name=name)


def find_split(data_dir, dataset: str, split: str):
    """Image and label paths for ``dataset`` ('mnist' or 'fashion') and
    ``split`` ('train' or 'test') below ``data_dir``.

    ``data_dir`` may be the dataset folder itself or a root holding
    ``mnist/`` and ``fashion-mnist/``.
    """
    if data_dir is None:
        data_dir = os.environ.get("DATA_DIR")
        if data_dir is None:
            raise FileNotFoundError("no data directory given and DATA_DIR is unset")
    root = Path(data_dir)
    prefix = SPLIT_PREFIX[split]
    for base in (root / DATASET_DIRS.get(dataset, dataset), root):
        img = base / f"{prefix}-images-idx3-ubyte"
        lab = base / f"{prefix}-labels-idx1-ubyte"
        if (img.exists() or Path(str(img) + ".gz").exists()) and (
            lab.exists() or Path(str(lab) + ".gz").exists()
        ):
            return img, lab
    raise FileNotFoundError(f"no {split} IDX files for {dataset!r} under {root}")


def load_split(data_dir, dataset: str, split: str) -> RawDataset:
    img, lab = find_split(data_dir, dataset, split)
    return load_idx(img, lab, name=f"{dataset}-{split}")


def one_hot(labels, n_classes: int = 10) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def preprocess(raw: RawDataset, task: str, mean=None, noise_std: float = 1e-3,
               seed: int = 0, n_classes: int = 10) -> Dataset:
    """Centre, build targets and (for ``task='denoising'``) add fixed noise.

    ``mean`` defaults to the mean image of ``raw`` itself; pass the training
    mean when preprocessing a validation split. Noise is drawn once from a
    generator seeded by ``seed``.
    """
    task = str(getattr(task, "value", task))
    if mean is None:
        mean = raw.images.mean(axis=0)
    mean = np.asarray(mean, dtype=float)
    clean = raw.images - mean
    if task == "classification":
        targets = one_hot(raw.labels, n_classes)
    elif task in ("autoencoder", "denoising"):
        targets = clean
    else:
        raise ValueError(f"unknown task {task!r}")
    noisy = None
    inputs = clean
    if task == "denoising":
        rng = np.random.default_rng(seed)
        noisy = clean + noise_std * rng.standard_normal(clean.shape)
        inputs = noisy
    return Dataset(inputs=inputs, targets=targets, clean=clean, labels=raw.labels.copy(),
                   ids=np.asarray(raw.ids).copy(), mean=mean, name=raw.name,
                   noisy_inputs=noisy, shape=raw.shape)


def subsample(ds, n: int, seed: int):
    """``n`` samples drawn uniformly without replacement (seeded)."""
    total = len(ds)
    if n > total:
        raise ValueError(f"cannot draw {n} samples from {total}")
    idx = np.random.default_rng(seed).permutation(total)[:n]
    if isinstance(ds, RawDataset):
        return RawDataset(ds.images[idx], ds.labels[idx], ds.shape, ds.ids[idx], ds.name)
    return replace(ds, inputs=ds.inputs[idx], targets=ds.targets[idx], clean=ds.clean[idx],
                   labels=ds.labels[idx], ids=ds.ids[idx],
                   noisy_inputs=None if ds.noisy_inputs is None else ds.noisy_inputs[idx])


def batches(ds, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded random partition of ``range(len(ds))`` into consecutive batches.

    The permutation depends on ``(seed, epoch)`` only; the last batch may be
    smaller. ``ds`` may also be the sample count.
    """
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    n = ds if isinstance(ds, (int, np.integer)) else len(ds)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]
