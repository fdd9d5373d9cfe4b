"""Convert the JSON digit/clothing dumps of the npm ``mnist`` and
``fashion-mnist`` packages into IDX files.

Usage::

    python scripts/prepare_data.py --mnist <dir with 0.json..9.json> \
        --fashion <dir with 0.json..9.json> --out /root/data

The ``mnist`` package ships 10,000 digits (flat lists of floats in [0, 1]);
they are split at random (seed 0) into 5,000 training and 5,000 test images.
The ``fashion-mnist`` package ships 7,000 rows of 784 bytes per class; the
first 6,000 of every class go to the training split and the last 1,000 to
the test split. Empty rows are dropped.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from liftbreg.data import write_idx


def _write(out: Path, prefix: str, images: np.ndarray, labels: np.ndarray, seed: int):
    order = np.random.default_rng(seed).permutation(len(images))
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / f"{prefix}-images-idx3-ubyte", images[order].reshape(-1, 28, 28))
    write_idx(out / f"{prefix}-labels-idx1-ubyte", labels[order])
    print(f"{out / prefix}: {len(images)} images")


def convert_mnist(src: Path, out: Path, n_train: int = 5000, seed: int = 0):
    imgs, labels = [], []
    for c in range(10):
        flat = np.asarray(json.loads((src / f"{c}.json").read_text())["data"], dtype=float)
        rows = np.rint(flat.reshape(-1, 784) * 255).clip(0, 255).astype(np.uint8)
        imgs.append(rows)
        labels.append(np.full(len(rows), c, dtype=np.uint8))
    imgs, labels = np.concatenate(imgs), np.concatenate(labels)
    perm = np.random.default_rng(seed).permutation(len(imgs))
    tr, te = perm[:n_train], perm[n_train:]
    _write(out, "train", imgs[tr], labels[tr], seed + 1)
    _write(out, "t10k", imgs[te], labels[te], seed + 2)


def convert_fashion(src: Path, out: Path, n_test: int = 1000, seed: int = 0):
    parts = {"train": ([], []), "t10k": ([], [])}
    for c in range(10):
        rows = [r for r in json.loads((src / f"{c}.json").read_text())["data"] if len(r) == 784]
        arr = np.asarray(rows, dtype=np.uint8)
        for name, chunk in (("train", arr[:-n_test]), ("t10k", arr[-n_test:])):
            parts[name][0].append(chunk)
            parts[name][1].append(np.full(len(chunk), c, dtype=np.uint8))
    for i, (name, (imgs, labels)) in enumerate(parts.items()):
        _write(out, name, np.concatenate(imgs), np.concatenate(labels), seed + 1 + i)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mnist", type=Path, default=Path("/tmp/dl/m/package/src/digits"))
    ap.add_argument("--fashion", type=Path, default=Path("/tmp/dl/fm/package/src/clothes"))
    ap.add_argument("--out", type=Path, default=Path("/root/data"))
    args = ap.parse_args(argv)
    convert_mnist(args.mnist, args.out / "mnist")
    convert_fashion(args.fashion, args.out / "fashion-mnist")


if __name__ == "__main__":
    main()
