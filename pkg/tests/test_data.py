import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from liftbreg.data import (IMAGE_MAGIC, LABEL_MAGIC, RawDataset, batches, find_split, load_idx,
                           load_split, one_hot, preprocess, read_idx, subsample, write_idx)


def write_pair(tmp_path, images, labels, prefix="train"):
    img = tmp_path / f"{prefix}-images-idx3-ubyte"
    lab = tmp_path / f"{prefix}-labels-idx1-ubyte"
    write_idx(img, np.asarray(images, dtype=np.uint8))
    write_idx(lab, np.asarray(labels, dtype=np.uint8))
    return img, lab


def test_header_example(tmp_path):
    raw = bytes.fromhex("00000803 00000002 00000002 00000002".replace(" ", "")) + bytes(
        [0, 255, 10, 20, 30, 40, 50, 60])
    (tmp_path / "img").write_bytes(raw)
    arr = read_idx(tmp_path / "img", IMAGE_MAGIC)
    assert arr.shape == (2, 2, 2)
    (tmp_path / "lab").write_bytes(struct.pack(">II", LABEL_MAGIC, 2) + bytes([3, 7]))
    ds = load_idx(tmp_path / "img", tmp_path / "lab")
    assert ds.images.shape == (2, 4)
    assert ds.images[0, 1] == 1.0
    assert list(ds.labels) == [3, 7]


def test_wrong_magic(tmp_path):
    (tmp_path / "lab").write_bytes(struct.pack(">II", 0x00000802, 1) + bytes([1]))
    with pytest.raises(ValueError, match="wrong magic"):
        read_idx(tmp_path / "lab", LABEL_MAGIC)


def test_truncated(tmp_path):
    (tmp_path / "img").write_bytes(struct.pack(">IIII", IMAGE_MAGIC, 2, 2, 2) + bytes(5))
    with pytest.raises(ValueError, match="truncated"):
        read_idx(tmp_path / "img", IMAGE_MAGIC)
    (tmp_path / "short").write_bytes(b"\x00\x00")
    with pytest.raises(ValueError, match="truncated"):
        read_idx(tmp_path / "short", IMAGE_MAGIC)


def test_count_mismatch(tmp_path):
    img, _ = write_pair(tmp_path, np.zeros((3, 2, 2)), np.zeros(3))
    lab = tmp_path / "other"
    write_idx(lab, np.zeros(2, dtype=np.uint8))
    with pytest.raises(ValueError, match="count mismatch"):
        load_idx(img, lab)


def test_gzip_and_round_trip(tmp_path, rng):
    imgs = rng.integers(0, 256, (4, 3, 3)).astype(np.uint8)
    write_idx(tmp_path / "a.gz", imgs)
    with gzip.open(tmp_path / "a.gz") as fh:
        assert fh.read(4) == struct.pack(">I", IMAGE_MAGIC)
    np.testing.assert_array_equal(read_idx(tmp_path / "a.gz", IMAGE_MAGIC), imgs)
    img, lab = write_pair(tmp_path, imgs, [0, 1, 2, 3])
    a, b = load_idx(img, lab), load_idx(img, lab)
    assert a.images.tobytes() == b.images.tobytes()


def test_find_split_layouts(tmp_path, monkeypatch):
    (tmp_path / "fashion-mnist").mkdir()
    write_pair(tmp_path / "fashion-mnist", np.zeros((2, 2, 2)), [0, 1], "t10k")
    assert find_split(tmp_path, "fashion", "test")[0].parent.name == "fashion-mnist"
    monkeypatch.setenv("DATA_DIR", str(tmp_path / "fashion-mnist"))
    assert load_split(None, "fashion", "test").images.shape == (2, 4)
    with pytest.raises(FileNotFoundError):
        find_split(tmp_path, "mnist", "train")
    monkeypatch.delenv("DATA_DIR")
    with pytest.raises(FileNotFoundError):
        find_split(None, "mnist", "train")


def test_preprocess_classification():
    raw = RawDataset(np.zeros((3, 4)), np.array([3, 0, 9]))
    ds = preprocess(raw, "classification")
    assert np.all(ds.inputs == 0)
    np.testing.assert_array_equal(ds.targets[0], np.eye(10)[3])
    np.testing.assert_array_equal(ds.targets.sum(axis=1), 1)
    assert ds.noisy_inputs is None


def test_centering_uses_training_mean(rng):
    train = RawDataset(rng.random((50, 6)), np.zeros(50, dtype=int))
    val = RawDataset(rng.random((20, 6)), np.zeros(20, dtype=int))
    tr = preprocess(train, "autoencoder")
    va = preprocess(val, "autoencoder", mean=tr.mean)
    assert np.max(np.abs(tr.inputs.mean(axis=0))) <= 1e-9
    np.testing.assert_allclose(va.inputs, val.images - train.images.mean(axis=0))
    np.testing.assert_array_equal(tr.targets, tr.clean)


def test_denoising_noise_statistics():
    raw = RawDataset(np.full((1250, 800), 0.5), np.zeros(1250, dtype=int))
    ds = preprocess(raw, "denoising", noise_std=1e-3, seed=7)
    noise = ds.noisy_inputs - ds.clean
    assert noise.size == 10**6
    assert np.std(noise) == pytest.approx(1e-3, rel=0.02)
    np.testing.assert_array_equal(ds.inputs, ds.noisy_inputs)
    np.testing.assert_array_equal(ds.targets, ds.clean)
    again = preprocess(raw, "denoising", noise_std=1e-3, seed=7)
    assert again.noisy_inputs.tobytes() == ds.noisy_inputs.tobytes()


def test_unknown_task():
    with pytest.raises(ValueError):
        preprocess(RawDataset(np.zeros((1, 2)), np.zeros(1, dtype=int)), "regression")


def test_subsample(rng):
    raw = RawDataset(rng.random((60, 2)), np.arange(60) % 10)
    a, b = subsample(raw, 60, 1), subsample(raw, 60, 1)
    assert sorted(a.ids) == list(range(60))
    np.testing.assert_array_equal(a.ids, b.ids)
    c = subsample(raw, 10, 2)
    assert len(set(c.ids)) == 10
    np.testing.assert_array_equal(c.images, raw.images[c.ids])
    with pytest.raises(ValueError):
        subsample(raw, 61, 0)
    ds = preprocess(raw, "classification")
    sub = subsample(ds, 5, 3)
    np.testing.assert_array_equal(sub.labels, raw.labels[sub.ids])


def test_subsample_thousand_distinct():
    raw = RawDataset(np.zeros((60000, 1)), np.zeros(60000, dtype=int))
    assert len(np.unique(subsample(raw, 1000, 0).ids)) == 1000


def test_batches_examples():
    b = batches(4, 2, seed=0, epoch=0)
    assert [len(x) for x in b] == [2, 2]
    assert sorted(np.concatenate(b)) == [0, 1, 2, 3]
    assert [len(x) for x in batches(5, 2, 0, 0)] == [2, 2, 1]
    p0 = np.concatenate(batches(50, 7, 0, 0))
    p1 = np.concatenate(batches(50, 7, 0, 1))
    assert not np.array_equal(p0, p1)
    np.testing.assert_array_equal(p0, np.concatenate(batches(50, 7, 0, 0)))
    with pytest.raises(ValueError):
        batches(5, 0, 0, 0)


def test_batches_partition_exhaustive():
    for s in range(1, 13):
        for bs in range(1, s + 2):
            parts = batches(s, bs, seed=s, epoch=bs)
            flat = np.concatenate(parts)
            assert sorted(flat) == list(range(s))
            assert all(len(p) == bs for p in parts[:-1]) and 1 <= len(parts[-1]) <= bs


@given(s=st.integers(1, 300), bs=st.integers(1, 50), seed=st.integers(0, 100))
def test_batches_partition_property(s, bs, seed):
    flat = np.concatenate(batches(s, bs, seed, 0))
    assert len(flat) == s and len(np.unique(flat)) == s


def test_one_hot():
    np.testing.assert_array_equal(one_hot([3], 10)[0], np.eye(10)[3])
