import struct

import numpy as np
import pytest

from sdprune.core.errors import FormatError, InputError
from sdprune.core.seeding import make_rng
from sdprune.services.datasets import Dataset, iterate_batches, load_csv, load_idx, make_two_moons


def write_idx(tmp_path, pixels, labels, image_magic=0x00000803):
    images = tmp_path / "images.idx"
    count, rows, cols = pixels.shape
    images.write_bytes(struct.pack(">iiii", image_magic, count, rows, cols) + pixels.astype(np.uint8).tobytes())
    label_file = tmp_path / "labels.idx"
    label_file.write_bytes(struct.pack(">ii", 0x00000801, len(labels)) + bytes(labels))
    return images, label_file


def test_load_idx_scales_pixels(tmp_path):
    pixels = np.array([[[0, 255], [128, 64]], [[255, 255], [0, 0]]])
    images, labels = write_idx(tmp_path, pixels, [3, 1])
    data = load_idx(images, labels, n_classes=10)
    assert data.inputs.shape == (2, 4)
    assert data.inputs[0, 1] == 1.0 and data.inputs[0, 0] == 0.0
    assert data.targets.tolist() == [3, 1]
    assert data.n_classes == 10


def test_load_idx_bad_magic(tmp_path):
    images, labels = write_idx(tmp_path, np.zeros((1, 2, 2)), [0], image_magic=0x00000804)
    with pytest.raises(FormatError, match="magic"):
        load_idx(images, labels)


def test_load_idx_truncated(tmp_path):
    images, labels = write_idx(tmp_path, np.zeros((2, 2, 2)), [0, 1])
    images.write_bytes(images.read_bytes()[:-3])
    with pytest.raises(FormatError, match="truncated"):
        load_idx(images, labels)


def test_load_csv(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x1,x2,y\n0.5,1.0,1\n-1.0,2.0,0\n", encoding="utf-8")
    reg = load_csv(path)
    assert reg.inputs.shape == (2, 2) and reg.targets[:, 0].tolist() == [1.0, 0.0]
    cls = load_csv(path, n_classes=2)
    assert cls.targets.tolist() == [1, 0]
    path.write_text("x1,y\nabc,1\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_csv(path)


def test_batches_cover_dataset_once():
    data = make_two_moons(make_rng(0), 23)
    batches = list(iterate_batches(data, 5, make_rng(1)))
    assert [len(b.indices) for b in batches] == [5, 5, 5, 5, 3]
    assert sorted(np.concatenate([b.indices for b in batches]).tolist()) == list(range(23))
    with pytest.raises(InputError):
        next(iterate_batches(data, 24, make_rng(1)))


def test_split_is_disjoint():
    data = make_two_moons(make_rng(0), 30)
    train, test = data.split(10, make_rng(2))
    assert len(train) == 20 and len(test) == 10
    same, none = data.split(0, make_rng(2))
    assert same is data and none is None


def test_dataset_validation():
    with pytest.raises(InputError):
        Dataset([[np.nan]], [0.0])
    with pytest.raises(InputError):
        Dataset([[1.0]], [2], n_classes=2)
