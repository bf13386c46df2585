import gzip

import numpy as np
import pytest

from ddta.datasets import (BadDataMagic, CorruptData, LabeledDataset,
                           TruncatedData, decode_cifar_batch,
                           decode_idx_images, decode_idx_labels,
                           encode_cifar_batch, encode_idx_images,
                           encode_idx_labels, images_to_bytes, load_cifar10,
                           load_mnist, one_hot, synthetic_digits,
                           write_mnist_dir)


@pytest.fixture(scope="module")
def corpus():
    return synthetic_digits(120, 40, seed=5)


class TestLabeledDataset:
    def test_validation_catches_bad_pixels(self):
        with pytest.raises(CorruptData, match=r"\[0, 1\]"):
            LabeledDataset(np.full((2, 4, 4, 1), 1.5, dtype=np.float32),
                           one_hot(np.array([0, 1])), "hard", "train")

    def test_validation_catches_non_one_hot(self):
        labels = np.full((2, 10), 0.1, dtype=np.float32)
        with pytest.raises(CorruptData, match="one-hot"):
            LabeledDataset(np.zeros((2, 4, 4, 1), dtype=np.float32),
                           labels, "hard", "train")

    def test_soft_labels_must_sum_to_one(self):
        labels = np.full((2, 10), 0.2, dtype=np.float32)
        with pytest.raises(CorruptData, match="sum to 1"):
            LabeledDataset(np.zeros((2, 4, 4, 1), dtype=np.float32),
                           labels, "soft", "train")

    def test_subset_keeps_leading_samples(self, corpus):
        train, _ = corpus
        sub = train.subset(7)
        assert sub.n == 7
        assert np.array_equal(sub.images, train.images[:7])


class TestIdxFormat:
    def test_byte_round_trip(self, corpus):
        train, _ = corpus
        pixels = images_to_bytes(train.images[..., 0])
        raw = encode_idx_images(pixels)
        assert np.array_equal(decode_idx_images(raw), pixels)
        labels = train.class_indices.astype(np.uint8)
        assert np.array_equal(decode_idx_labels(encode_idx_labels(labels)), labels)

    def test_scaling_round_trips_through_floats(self, corpus):
        # float32 pixels are b/255; rounding back must recover b exactly
        train, _ = corpus
        pixels = images_to_bytes(train.images[..., 0])
        rescaled = images_to_bytes(pixels.astype(np.float32) / 255.0)
        assert np.array_equal(rescaled, pixels)

    def test_wrong_magic(self):
        raw = bytearray(encode_idx_images(np.zeros((1, 4, 4), dtype=np.uint8)))
        raw[3] = 0x42
        with pytest.raises(BadDataMagic):
            decode_idx_images(bytes(raw))
        with pytest.raises(BadDataMagic):
            decode_idx_labels(encode_idx_images(np.zeros((1, 4, 4), dtype=np.uint8)))

    def test_truncation(self):
        raw = encode_idx_images(np.zeros((3, 4, 4), dtype=np.uint8))
        with pytest.raises(TruncatedData):
            decode_idx_images(raw[:-5])
        with pytest.raises(TruncatedData):
            decode_idx_labels(encode_idx_labels(np.zeros(9, dtype=np.uint8))[:-1])

    def test_label_out_of_range(self):
        with pytest.raises(CorruptData):
            decode_idx_labels(encode_idx_labels(np.array([3, 11], dtype=np.uint8)))


class TestMnistDir:
    def test_write_then_load(self, corpus, tmp_path):
        train, test = corpus
        write_mnist_dir(tmp_path, train, test)
        train2, test2 = load_mnist(tmp_path)
        assert train2.n == train.n and test2.n == test.n
        assert np.array_equal(train2.images, train.images)
        assert np.array_equal(train2.labels, train.labels)
        assert train2.split == "train" and test2.split == "test"
        assert train2.images.min() >= 0.0 and train2.images.max() <= 1.0

    def test_gzip_variant(self, corpus, tmp_path):
        train, test = corpus
        for path in write_mnist_dir(tmp_path, train, test):
            gz = path.with_name(path.name + ".gz")
            with gzip.open(gz, "wb") as f:
                f.write(path.read_bytes())
            path.unlink()
        train2, _ = load_mnist(tmp_path)
        assert np.array_equal(train2.images, train.images)

    def test_missing_files(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_mnist(tmp_path)

    def test_count_mismatch(self, corpus, tmp_path):
        train, test = corpus
        paths = write_mnist_dir(tmp_path, train, test)
        # rewrite train labels with one fewer entry
        labels = train.class_indices.astype(np.uint8)[:-1]
        paths[1].write_bytes(encode_idx_labels(labels))
        with pytest.raises(CorruptData, match="labels"):
            load_mnist(tmp_path)


class TestCifarFormat:
    def _batch(self, rng, n=10):
        images = rng.integers(0, 256, (n, 32, 32, 3), dtype=np.uint8)
        labels = rng.integers(0, 10, n, dtype=np.uint8)
        return images, labels

    def test_record_stride(self, rng):
        images, labels = self._batch(rng, 7)
        raw = encode_cifar_batch(images, labels)
        assert len(raw) == 7 * 3073

    def test_byte_round_trip(self, rng):
        images, labels = self._batch(rng)
        raw = encode_cifar_batch(images, labels)
        img2, lbl2 = decode_cifar_batch(raw)
        assert np.array_equal(img2, images)
        assert np.array_equal(lbl2, labels)
        assert raw == encode_cifar_batch(img2, lbl2)

    def test_truncation(self, rng):
        images, labels = self._batch(rng)
        with pytest.raises(TruncatedData, match="3073"):
            decode_cifar_batch(encode_cifar_batch(images, labels)[:-10])

    def test_label_out_of_range(self, rng):
        images, labels = self._batch(rng)
        labels[3] = 10
        with pytest.raises(CorruptData):
            decode_cifar_batch(encode_cifar_batch(images, labels))

    def test_load_dir(self, rng, tmp_path):
        for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
            images, labels = self._batch(rng, 12)
            (tmp_path / name).write_bytes(encode_cifar_batch(images, labels))
        train, test = load_cifar10(tmp_path)
        assert train.n == 60 and test.n == 12
        assert train.images.shape == (60, 32, 32, 3)
        assert train.images.max() <= 1.0
        assert set(np.unique(train.class_indices)) <= set(range(10))


class TestSyntheticCorpus:
    def test_deterministic(self):
        a, _ = synthetic_digits(50, 10, seed=9)
        b, _ = synthetic_digits(50, 10, seed=9)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.labels, b.labels)

    def test_shapes_and_range(self, corpus):
        train, test = corpus
        assert train.images.shape == (120, 28, 28, 1)
        assert test.images.shape == (40, 28, 28, 1)
        assert train.images.min() >= 0.0 and train.images.max() <= 1.0

    def test_all_classes_present(self, corpus):
        train, _ = corpus
        assert set(np.unique(train.class_indices)) == set(range(10))

    def test_pixels_on_u8_grid(self, corpus):
        # required for exact IDX round trips
        train, _ = corpus
        scaled = train.images * 255.0
        assert np.allclose(scaled, np.round(scaled), atol=1e-4)
