"""Dataset containers, binary loaders (MNIST IDX, CIFAR-10 batches), and a
procedurally rendered digit corpus for environments without the real files."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_CLASSES = 10

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]
CIFAR_RECORD = 3073  # label byte + 3 * 1024 pixel bytes

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(Exception):
    """Base for unreadable or inconsistent dataset files."""


class BadDataMagic(DataError):
    pass


class TruncatedData(DataError):
    pass


class CorruptData(DataError):
    pass


@dataclass
class LabeledDataset:
    """Images in [0,1] plus per-sample label rows (one-hot or probability)."""

    images: np.ndarray          # (n, H, W, C) float32
    labels: np.ndarray          # (n, N) float32
    label_kind: str             # "hard" | "soft"
    split: str                  # "train" | "test"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise CorruptData(
                f"images {self.images.shape} vs labels {self.labels.shape}")
        if self.label_kind not in ("hard", "soft"):
            raise CorruptData(f"unknown label kind {self.label_kind!r}")
        if self.split not in ("train", "test"):
            raise CorruptData(f"unknown split {self.split!r}")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise CorruptData("pixel values outside [0, 1]")
        if self.label_kind == "hard":
            if not np.array_equal(self.labels, self.labels.round()) or \
                    not np.allclose(self.labels.sum(axis=1), 1.0):
                raise CorruptData("hard labels must be exact one-hot rows")
        else:
            if not np.allclose(self.labels.sum(axis=1), 1.0, atol=1e-5):
                raise CorruptData("soft label rows must sum to 1 within 1e-5")

    @property
    def n(self) -> int:
        return len(self.images)

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def class_indices(self) -> np.ndarray:
        return self.labels.argmax(axis=1)

    def subset(self, n: int) -> "LabeledDataset":
        """First ``n`` samples, preserving order (deterministic)."""
        return LabeledDataset(self.images[:n], self.labels[:n],
                              self.label_kind, self.split)


def one_hot(indices: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    out = np.zeros((len(indices), n_classes), dtype=np.float32)
    out[np.arange(len(indices)), indices] = 1.0
    return out


# ---------------------------------------------------------------------------
# MNIST (IDX format, big-endian headers)


def decode_idx_images(raw: bytes) -> np.ndarray:
    if len(raw) < 16:
        raise TruncatedData("IDX image file shorter than its header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise BadDataMagic(f"IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    expected = 16 + n * rows * cols
    if len(raw) != expected:
        raise TruncatedData(f"IDX image file has {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows, cols).copy()


def decode_idx_labels(raw: bytes) -> np.ndarray:
    if len(raw) < 8:
        raise TruncatedData("IDX label file shorter than its header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise BadDataMagic(f"IDX label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(raw) != 8 + n:
        raise TruncatedData(f"IDX label file has {len(raw)} bytes, expected {8 + n}")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).copy()
    if labels.size and labels.max() >= N_CLASSES:
        raise CorruptData(f"label byte {labels.max()} out of range")
    return labels


def encode_idx_images(images: np.ndarray) -> bytes:
    n, rows, cols = images.shape
    return struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + \
        np.ascontiguousarray(images, dtype=np.uint8).tobytes()


def encode_idx_labels(labels: np.ndarray) -> bytes:
    return struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + \
        np.ascontiguousarray(labels, dtype=np.uint8).tobytes()


def images_to_bytes(images: np.ndarray) -> np.ndarray:
    """Invert the 1/255 scaling back to the original uint8 pixels."""
    return np.round(np.asarray(images) * 255.0).astype(np.uint8)


def _read_maybe_gz(path: Path) -> bytes:
    if path.exists():
        return path.read_bytes()
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        with gzip.open(gz, "rb") as f:
            return f.read()
    raise FileNotFoundError(f"{path} (also tried {gz.name})")


def load_mnist(data_dir) -> tuple[LabeledDataset, LabeledDataset]:
    """Load the four IDX files from ``data_dir`` (plain or .gz)."""
    d = Path(data_dir)
    out = {}
    for split in ("train", "test"):
        images = decode_idx_images(_read_maybe_gz(d / MNIST_FILES[f"{split}_images"]))
        labels = decode_idx_labels(_read_maybe_gz(d / MNIST_FILES[f"{split}_labels"]))
        if len(images) != len(labels):
            raise CorruptData(
                f"{split}: {len(images)} images but {len(labels)} labels")
        out[split] = LabeledDataset(
            images=(images.astype(np.float32) / 255.0)[..., None],
            labels=one_hot(labels),
            label_kind="hard",
            split=split,
        )
    return out["train"], out["test"]


def write_mnist_dir(data_dir, train: LabeledDataset, test: LabeledDataset) -> list[Path]:
    """Write datasets back out as IDX files (used for fixtures and demos)."""
    d = Path(data_dir)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for split, ds in (("train", train), ("test", test)):
        img_path = d / MNIST_FILES[f"{split}_images"]
        lbl_path = d / MNIST_FILES[f"{split}_labels"]
        img_path.write_bytes(encode_idx_images(images_to_bytes(ds.images[..., 0])))
        lbl_path.write_bytes(encode_idx_labels(ds.class_indices.astype(np.uint8)))
        written += [img_path, lbl_path]
    return written


# ---------------------------------------------------------------------------
# CIFAR-10 (binary batches, 3073-byte records, channel-major R,G,B)


def decode_cifar_batch(raw: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(raw) % CIFAR_RECORD:
        raise TruncatedData(
            f"batch size {len(raw)} is not a multiple of {CIFAR_RECORD}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].copy()
    if labels.size and labels.max() >= N_CLASSES:
        raise CorruptData(f"label byte {labels.max()} out of range")
    images = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1).copy()
    return images, labels


def encode_cifar_batch(images: np.ndarray, labels: np.ndarray) -> bytes:
    chw = np.ascontiguousarray(images.transpose(0, 3, 1, 2), dtype=np.uint8)
    records = np.concatenate(
        [np.asarray(labels, dtype=np.uint8)[:, None], chw.reshape(len(images), -1)],
        axis=1)
    return records.tobytes()


def load_cifar10(data_dir) -> tuple[LabeledDataset, LabeledDataset]:
    d = Path(data_dir)
    out = {}
    for split, files in (("train", CIFAR_TRAIN_FILES), ("test", CIFAR_TEST_FILES)):
        images, labels = [], []
        for name in files:
            img, lbl = decode_cifar_batch(_read_maybe_gz(d / name))
            images.append(img)
            labels.append(lbl)
        out[split] = LabeledDataset(
            images=np.concatenate(images).astype(np.float32) / 255.0,
            labels=one_hot(np.concatenate(labels)),
            label_kind="hard",
            split=split,
        )
    return out["train"], out["test"]


# ---------------------------------------------------------------------------
# synthetic digit corpus
#
# Ten fixed stroke glyphs rendered at 28x28 with per-sample random affine
# jitter, stroke width and brightness. Not real handwriting; a stand-in with
# the same shapes, value range and file formats, learnable to ~99% by the
# small CNN. Generation is fully determined by the seed.

_GLYPHS: dict[int, list[list[tuple[float, float]]]] = {
    0: [[(0.5 + 0.32 * np.cos(a), 0.5 + 0.40 * np.sin(a))
         for a in np.linspace(0, 2 * np.pi, 13)]],
    1: [[(0.38, 0.22), (0.55, 0.08), (0.55, 0.92)]],
    2: [[(0.22, 0.26), (0.36, 0.10), (0.66, 0.10), (0.78, 0.30),
         (0.24, 0.90), (0.80, 0.90)]],
    3: [[(0.24, 0.12), (0.74, 0.12), (0.48, 0.44), (0.78, 0.64),
         (0.52, 0.90), (0.24, 0.82)]],
    4: [[(0.66, 0.92), (0.66, 0.08), (0.20, 0.62), (0.86, 0.62)]],
    5: [[(0.78, 0.10), (0.26, 0.10), (0.26, 0.48), (0.66, 0.48),
         (0.80, 0.68), (0.60, 0.90), (0.26, 0.84)]],
    6: [[(0.70, 0.08), (0.38, 0.42), (0.26, 0.72), (0.48, 0.92),
         (0.74, 0.72), (0.52, 0.52), (0.30, 0.62)]],
    7: [[(0.20, 0.10), (0.80, 0.10), (0.46, 0.92)]],
    8: [[(0.5 + 0.22 * np.cos(a), 0.28 + 0.20 * np.sin(a))
         for a in np.linspace(0, 2 * np.pi, 11)],
        [(0.5 + 0.26 * np.cos(a), 0.72 + 0.21 * np.sin(a))
         for a in np.linspace(0, 2 * np.pi, 11)]],
    9: [[(0.5 + 0.24 * np.cos(a), 0.34 + 0.24 * np.sin(a))
         for a in np.linspace(0, 2 * np.pi, 11)],
        [(0.74, 0.34), (0.70, 0.92)]],
}


def _render_digit_group(points: np.ndarray, strokes: list[int],
                        thickness: np.ndarray, size: int) -> np.ndarray:
    """Render S jittered copies of one glyph: points (S, P, 2) -> (S, size, size)."""
    s = len(points)
    ys, xs = np.mgrid[0:size, 0:size]
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float32) / (size - 1)
    img = np.zeros((s, size * size), dtype=np.float32)
    start = 0
    for n_pts in strokes:
        poly = points[:, start:start + n_pts]
        start += n_pts
        for k in range(n_pts - 1):
            a = poly[:, k][:, None, :]        # (S,1,2)
            d = poly[:, k + 1][:, None, :] - a
            denom = np.maximum((d * d).sum(-1), 1e-12)
            t = np.clip(((grid[None] - a) * d).sum(-1) / denom, 0.0, 1.0)
            proj = a + t[..., None] * d
            dist = np.sqrt(((grid[None] - proj) ** 2).sum(-1))
            ink = np.clip((thickness[:, None] - dist) / 0.02 + 0.5, 0.0, 1.0)
            np.maximum(img, ink, out=img)
    return img.reshape(s, size, size)


def synthetic_digits(n_train: int, n_test: int, seed: int = 0,
                     size: int = 28,
                     train_label_noise: float = 0.0) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic stand-in digit corpus with MNIST-like shape and range.

    ``train_label_noise`` flips that fraction of training labels uniformly;
    procedural glyphs are otherwise so separable that long training saturates
    the softmax, which real handwriting does not do at this scale. Test
    labels are never touched.
    """
    rng = np.random.default_rng(seed)
    n_total = n_train + n_test
    labels = np.tile(np.arange(N_CLASSES), n_total // N_CLASSES + 1)[:n_total]
    rng.shuffle(labels)
    images = np.zeros((n_total, size, size), dtype=np.float32)
    for digit in range(N_CLASSES):
        idx = np.flatnonzero(labels == digit)
        if not len(idx):
            continue
        strokes = [len(p) for p in _GLYPHS[digit]]
        base = np.concatenate([np.asarray(p, dtype=np.float32)
                               for p in _GLYPHS[digit]])  # (P,2)
        s = len(idx)
        theta = rng.uniform(-0.26, 0.26, s)
        scale = rng.uniform(0.75, 1.14, (s, 2))
        shear = rng.uniform(-0.20, 0.20, s)
        shift = rng.uniform(-0.08, 0.08, (s, 2))
        cos, sin = np.cos(theta), np.sin(theta)
        rot = np.stack([np.stack([cos, -sin], -1),
                        np.stack([sin, cos], -1)], -2)      # (S,2,2)
        shear_m = np.zeros((s, 2, 2), dtype=np.float64)
        shear_m[:, 0, 0] = 1.0
        shear_m[:, 1, 1] = 1.0
        shear_m[:, 0, 1] = shear
        mat = rot @ shear_m * scale[:, None, :]
        centered = base - 0.5
        pts = np.einsum("pk,skj->spj", centered, mat) + 0.5 + shift[:, None, :]
        thickness = rng.uniform(0.032, 0.080, s).astype(np.float32)
        rendered = _render_digit_group(pts.astype(np.float32), strokes,
                                       thickness, size)
        rendered *= rng.uniform(0.70, 1.0, (s, 1, 1)).astype(np.float32)
        # distractor stroke: a faint random short segment per sample
        d_pts = rng.uniform(0.05, 0.95, (s, 2, 2)).astype(np.float32)
        d_thick = rng.uniform(0.015, 0.030, s).astype(np.float32)
        distract = _render_digit_group(d_pts, [2], d_thick, size)
        distract *= rng.uniform(0.2, 0.5, (s, 1, 1)).astype(np.float32)
        np.maximum(rendered, distract, out=rendered)
        images[idx] = rendered
    noise = rng.uniform(0.0, 0.08, images.shape).astype(np.float32)
    images = np.clip(images + noise, 0.0, 1.0)
    # snap to the u8 grid so IDX round-trips are exact
    images = np.round(images * 255.0).astype(np.float32) / 255.0
    labels = labels.astype(np.int64)
    if train_label_noise > 0.0 and n_train:
        n_flip = int(round(train_label_noise * n_train))
        flip_idx = rng.choice(n_train, size=n_flip, replace=False)
        offsets = rng.integers(1, N_CLASSES, size=n_flip)
        labels[flip_idx] = (labels[flip_idx] + offsets) % N_CLASSES
    hard = one_hot(labels)
    train = LabeledDataset(images[:n_train, ..., None], hard[:n_train], "hard", "train")
    test = LabeledDataset(images[n_train:, ..., None], hard[n_train:], "hard", "test")
    return train, test
