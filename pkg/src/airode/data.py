"""Datasets: IDX image files, complex pixel encoding, desk-scale
reduction, and a synthetic blob set for offline runs.

Pixels p in [0, 1] are lifted to complex symbols with the
amplitude-phase map z = p * exp(j*pi*p), so the modulus carries the
intensity and the phase adds a second, correlated component (a plain
z = p + 0j map is available as "real").
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "read_idx",
    "load_idx_pair",
    "encode_pixels",
    "decode_pixels",
    "mean_pool_2x2",
    "to_onehot",
    "stratified_indices",
    "make_synthetic",
    "load_idx_dataset",
]

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path):
    """Parse one big-endian IDX file into an ndarray."""
    with _open_maybe_gzip(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated at byte {len(raw)} (no magic)")
    zero, dtype_code, ndim = raw[0] << 8 | raw[1], raw[2], raw[3]
    if zero != 0:
        raise ValueError(f"{path}: bad magic prefix {raw[:2].hex()} at byte 0")
    dtypes = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4",
              0x0D: ">f4", 0x0E: ">f8"}
    if dtype_code not in dtypes:
        raise ValueError(f"{path}: unknown dtype code 0x{dtype_code:02x} at byte 2")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise ValueError(f"{path}: truncated at byte {len(raw)} (need {header_end})")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = int(np.prod(dims))
    dt = np.dtype(dtypes[dtype_code])
    need = header_end + count * dt.itemsize
    if len(raw) < need:
        raise ValueError(f"{path}: truncated at byte {len(raw)} (need {need})")
    return np.frombuffer(raw[header_end:need], dtype=dt).reshape(dims)


def load_idx_pair(images_path, labels_path):
    """Load and cross-validate an images/labels IDX pair."""
    with _open_maybe_gzip(images_path) as f:
        magic = struct.unpack(">I", f.read(4))[0]
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(f"{images_path}: magic {magic}, expected {IDX_IMAGES_MAGIC}")
    with _open_maybe_gzip(labels_path) as f:
        magic = struct.unpack(">I", f.read(4))[0]
    if magic != IDX_LABELS_MAGIC:
        raise ValueError(f"{labels_path}: magic {magic}, expected {IDX_LABELS_MAGIC}")
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise ValueError(f"{images_path}: expected 3-D image tensor, got {images.shape}")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise ValueError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape} labels"
        )
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def encode_pixels(p, scheme="amplitude-phase"):
    p = np.asarray(p, dtype=np.float64)
    if scheme == "amplitude-phase":
        return p * np.exp(1j * np.pi * p)
    if scheme == "real":
        return p.astype(np.complex128)
    raise ValueError(f"unknown encoding scheme {scheme!r}")


def decode_pixels(z, scheme="amplitude-phase"):
    """Recover intensities from (possibly reconstructed) symbols: the
    modulus for amplitude-phase, the real part for the real map."""
    z = np.asarray(z, dtype=np.complex128)
    if scheme == "amplitude-phase":
        return np.abs(z)
    if scheme == "real":
        return z.real
    raise ValueError(f"unknown encoding scheme {scheme!r}")


def mean_pool_2x2(images):
    n, h, w = images.shape
    if h % 2 or w % 2:
        raise ValueError(f"mean_pool_2x2 needs even sides, got {images.shape}")
    return images.reshape(n, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def to_onehot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"label out of range for {num_classes} classes")
    return np.eye(num_classes)[labels]


def stratified_indices(labels, count, rng, exclude=None):
    """Pick `count` indices with per-class proportions as even as the
    counts allow (round-robin over class pools, deterministic)."""
    labels = np.asarray(labels)
    taken = np.zeros(labels.shape[0], dtype=bool)
    if exclude is not None:
        taken[exclude] = True
    classes = np.unique(labels)
    pools = []
    for c in classes:
        pool = np.flatnonzero((labels == c) & ~taken)
        pools.append(rng.permutation(pool))
    out = []
    cursor = [0] * len(pools)
    ci = 0
    while len(out) < count:
        tried = 0
        while cursor[ci] >= len(pools[ci]):
            ci = (ci + 1) % len(pools)
            tried += 1
            if tried > len(pools):
                raise ValueError(f"not enough samples to draw {count}")
        out.append(pools[ci][cursor[ci]])
        cursor[ci] += 1
        ci = (ci + 1) % len(pools)
    return np.array(out)


@dataclass
class Dataset:
    train_images: np.ndarray  # (N, A, A) complex
    train_labels: np.ndarray  # (N, Q) one-hot
    val_images: np.ndarray
    val_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    num_classes: int
    encoding: str
    image_size: int

    def summary(self):
        return (f"{self.train_images.shape[0]} train / "
                f"{self.val_images.shape[0]} val / "
                f"{self.test_images.shape[0]} test, "
                f"A={self.image_size}, Q={self.num_classes}, {self.encoding}")


def _blob_image(rng, size, cls, num_classes):
    # one Gaussian bump per class, centered on a class-specific ring
    # position with positional jitter and a class-dependent width
    ang = 2 * np.pi * cls / num_classes
    r = 0.30 * size
    cy = size / 2 + r * np.sin(ang) + rng.uniform(-1, 1)
    cx = size / 2 + r * np.cos(ang) + rng.uniform(-1, 1)
    sig = size / 9.0 * (1.0 + 0.35 * (cls % 3)) * rng.uniform(0.9, 1.1)
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig**2)))
    img += 0.04 * rng.random((size, size))
    return np.clip(img, 0.0, 1.0)


def make_synthetic(n_train=2000, n_val=500, n_test=500, size=14,
                   num_classes=10, seed=0, encoding="amplitude-phase"):
    """Gaussian-blob classification/reconstruction set (balanced)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 21]))
    splits = []
    for n in (n_train, n_val, n_test):
        imgs = np.zeros((n, size, size))
        labs = np.arange(n) % num_classes
        for i in range(n):
            imgs[i] = _blob_image(rng, size, labs[i], num_classes)
        perm = rng.permutation(n)
        splits.append((encode_pixels(imgs[perm], encoding),
                       to_onehot(labs[perm], num_classes)))
    (xtr, ytr), (xv, yv), (xte, yte) = splits
    return Dataset(xtr, ytr, xv, yv, xte, yte, num_classes, encoding, size)


def load_idx_dataset(train_images_path, train_labels_path,
                     test_images_path=None, test_labels_path=None,
                     n_train=2000, n_val=500, n_test=500, desk_scale=True,
                     seed=0, encoding="amplitude-phase", num_classes=10):
    """Build a Dataset from IDX files with a deterministic stratified
    subsample; 28 x 28 inputs are 2 x 2 mean-pooled to 14 x 14 when
    desk_scale is on. Validation is carved from the training file; the
    test split comes from the test pair when given, else also from the
    training file (disjoint)."""
    imgs, labels = load_idx_pair(train_images_path, train_labels_path)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
    idx_tr = stratified_indices(labels, n_train, rng)
    idx_val = stratified_indices(labels, n_val, rng, exclude=idx_tr)
    if test_images_path is not None:
        timgs, tlabels = load_idx_pair(test_images_path, test_labels_path)
        idx_te = stratified_indices(tlabels, n_test, rng)
        te_i, te_l = timgs[idx_te], tlabels[idx_te]
    else:
        both = np.concatenate([idx_tr, idx_val])
        idx_te = stratified_indices(labels, n_test, rng, exclude=both)
        te_i, te_l = imgs[idx_te], labels[idx_te]

    def prep(x):
        if desk_scale and x.shape[1] % 2 == 0 and x.shape[1] > 14:
            x = mean_pool_2x2(x)
        return encode_pixels(x, encoding)

    return Dataset(
        prep(imgs[idx_tr]), to_onehot(labels[idx_tr], num_classes),
        prep(imgs[idx_val]), to_onehot(labels[idx_val], num_classes),
        prep(te_i), to_onehot(te_l, num_classes),
        num_classes, encoding,
        (imgs.shape[1] // 2) if desk_scale and imgs.shape[1] > 14 else imgs.shape[1],
    )
