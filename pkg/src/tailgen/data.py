"""Long-tailed image datasets: construction, grouping, budgets, and I/O.

Images live on disk as 8-bit bytes and in memory as float32 in [-1, 1].
Datasets store the byte representation internally so that persistence is
lossless; the float view is derived on demand.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

LTDS_MAGIC = b"LTDS1"

# Byte layout of one LTDS record: u16 label, u8 origin, then H*W*C pixel bytes.
_HEADER_FIELDS = 5  # N, M, H, W, C as little-endian u32


class LtdsError(ValueError):
    """Raised for malformed LTDS files."""


def bytes_to_unit(pixels):
    """Map byte pixels [0, 255] to float32 in [-1, 1]."""
    return (np.asarray(pixels, dtype=np.float32) / 255.0) * 2.0 - 1.0


def unit_to_bytes(images):
    """Quantize float images in [-1, 1] back to bytes, rounding to nearest."""
    x = np.clip(np.asarray(images, dtype=np.float64), -1.0, 1.0)
    return np.round(255.0 * (x + 1.0) / 2.0).astype(np.uint8)


class Sample(NamedTuple):
    pixels: np.ndarray  # (H, W, C) float32 in [-1, 1]
    label: int
    origin: int  # 0 real, 1 generated


class LongTailDataset:
    """Immutable labeled image dataset with real/generated origin flags.

    Pixels are stored as uint8 (N, H, W, C). Class counts follow the class
    indices; datasets built by `subsample_longtail` order classes by
    non-increasing count, but augmented datasets may not.
    """

    def __init__(self, pixels, labels, origins, num_classes):
        pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        origins = np.ascontiguousarray(origins, dtype=np.uint8)
        if pixels.ndim != 4:
            raise ValueError(f"pixels must be (N, H, W, C), got shape {pixels.shape}")
        n = pixels.shape[0]
        if labels.shape != (n,) or origins.shape != (n,):
            raise ValueError("labels/origins length must match number of images")
        if num_classes < 1:
            raise ValueError("num_classes must be positive")
        if n and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        if n and not np.isin(origins, (0, 1)).all():
            raise ValueError("origins must be 0 (real) or 1 (generated)")
        for a in (pixels, labels, origins):
            a.setflags(write=False)
        self.pixels = pixels
        self.labels = labels
        self.origins = origins
        self.num_classes = int(num_classes)
        self._images = None

    @classmethod
    def from_unit_images(cls, images, labels, origins, num_classes):
        """Build from float images in [-1, 1]; quantizes to the byte grid."""
        return cls(unit_to_bytes(images), labels, origins, num_classes)

    @property
    def images(self):
        """Float32 view in [-1, 1], cached after first access."""
        if self._images is None:
            img = bytes_to_unit(self.pixels)
            img.setflags(write=False)
            self._images = img
        return self._images

    @property
    def image_shape(self):
        return self.pixels.shape[1:]

    @property
    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    @property
    def longtail_ratio(self):
        counts = self.class_counts
        if counts.min() == 0:
            raise ValueError("ratio undefined: some class has no samples")
        return counts.max() / counts.min()

    def __len__(self):
        return self.pixels.shape[0]

    def __getitem__(self, i) -> Sample:
        return Sample(bytes_to_unit(self.pixels[i]), int(self.labels[i]), int(self.origins[i]))

    def select(self, indices):
        """Subset preserving order of `indices`."""
        idx = np.asarray(indices)
        return LongTailDataset(
            self.pixels[idx], self.labels[idx], self.origins[idx], self.num_classes
        )

    def real_only(self):
        return self.select(np.flatnonzero(self.origins == 0))

    @staticmethod
    def concat(parts: Sequence["LongTailDataset"]):
        if not parts:
            raise ValueError("need at least one dataset")
        m = parts[0].num_classes
        shape = parts[0].image_shape
        for p in parts[1:]:
            if p.num_classes != m or p.image_shape != shape:
                raise ValueError("datasets must agree on num_classes and image shape")
        return LongTailDataset(
            np.concatenate([p.pixels for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.origins for p in parts]),
            m,
        )

    def __eq__(self, other):
        if not isinstance(other, LongTailDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.pixels.shape == other.pixels.shape
            and np.array_equal(self.pixels, other.pixels)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.origins, other.origins)
        )


@dataclass(frozen=True)
class ClassGroups:
    """Disjoint partition of class indices by training-set frequency."""

    many: frozenset
    med: frozenset
    few: frozenset

    def all_classes(self):
        return self.many | self.med | self.few


def build_longtail_counts(n1, ratio, num_classes, profile="exponential"):
    """Per-class sample counts for an imbalance ratio n1 : n1/ratio.

    The exponential profile assigns class j (0-based) a count of
    round(n1 * ratio**(-j / (num_classes - 1))), so counts decay
    geometrically from n1 down to n1/ratio. The step profile gives the
    first half of the classes n1 and the rest n1/ratio.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if n1 < 1:
        raise ValueError("n1 must be positive")
    if ratio < 1:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    tail = int(n1 / ratio + 0.5)
    if tail < 1:
        raise ValueError(
            f"n1/ratio rounds to {tail}: the smallest class would be empty"
        )
    if profile == "exponential":
        j = np.arange(num_classes, dtype=np.float64)
        raw = n1 * np.power(float(ratio), -j / (num_classes - 1))
        counts = np.floor(raw + 0.5).astype(np.int64)
    elif profile == "step":
        head = (num_classes + 1) // 2
        counts = np.full(num_classes, n1, dtype=np.int64)
        counts[head:] = tail
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return np.maximum(counts, 1)


def subsample_longtail(balanced, counts, seed):
    """Draw a long-tailed subset of `balanced` with the requested counts.

    Selection is a seeded draw without replacement per class; within a class
    the original sample order is kept. Output classes are laid out in class
    index order.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (balanced.num_classes,):
        raise ValueError("counts must have one entry per class")
    available = balanced.class_counts
    short = np.flatnonzero(counts > available)
    if short.size:
        c = int(short[0])
        raise ValueError(
            f"class {c}: requested {counts[c]} samples but only {available[c]} available"
        )
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(balanced.num_classes):
        idx = np.flatnonzero(balanced.labels == c)
        pick = rng.choice(idx, size=int(counts[c]), replace=False)
        chosen.append(np.sort(pick))
    out = balanced.select(np.concatenate(chosen))
    return LongTailDataset(out.pixels, out.labels, np.zeros(len(out), np.uint8), out.num_classes)


def class_groups(counts, many_min=100, few_max=20):
    """Partition classes into many (> many_min), few (< few_max), med (rest)."""
    if many_min <= few_max:
        raise ValueError("many_min must exceed few_max")
    counts = np.asarray(counts)
    many = frozenset(np.flatnonzero(counts > many_min).tolist())
    few = frozenset(np.flatnonzero(counts < few_max).tolist())
    med = frozenset(range(len(counts))) - many - few
    return ClassGroups(many=many, med=med, few=few)


def generation_budget(counts, target_count):
    """Per-class number of samples to generate to lift each class to the target.

    Returns (per-class budget, total). Classes at or above the target get 0.
    """
    if target_count < 0:
        raise ValueError("target_count must be >= 0")
    counts = np.asarray(counts, dtype=np.int64)
    budget = np.maximum(0, target_count - counts)
    return budget, int(budget.sum())


# ---------------------------------------------------------------------------
# Procedural shapes dataset
# ---------------------------------------------------------------------------
# Ten-plus templates: shape kind x fill style, rendered with randomized
# position, rotation, scale, contrast, and additive pixel noise. Tail-facing
# classes are deliberately confusable with head classes (plus vs x-cross is
# separated by rotation alone) so that few-shot learning is genuinely hard.


def _soft(d, edge):
    return np.clip(d / edge + 0.5, 0.0, 1.0)


def _plus_mask(u, v, edge):
    arm = np.minimum(0.34 - np.abs(v), 0.95 - np.abs(u))
    bar = np.minimum(0.34 - np.abs(u), 0.95 - np.abs(v))
    return _soft(np.maximum(arm, bar), edge)


def _stripes_mask(u, v, edge):
    band = 0.5 - np.abs(((v * 1.7) % 2.0) - 1.0)
    extent = 0.95 - np.maximum(np.abs(u), np.abs(v))
    return _soft(np.minimum(band * 0.6, extent), edge)


def _template_masks():
    def disk(u, v, e):
        return _soft(1.0 - np.hypot(u, v), e)

    def ring(u, v, e):
        return _soft(0.3 - np.abs(np.hypot(u, v) - 0.72), e)

    def square(u, v, e):
        return _soft(0.82 - np.maximum(np.abs(u), np.abs(v)), e)

    def square_outline(u, v, e):
        return _soft(0.22 - np.abs(np.maximum(np.abs(u), np.abs(v)) - 0.72), e)

    def triangle(u, v, e):
        d = np.minimum(0.62 - v, (v + 0.9) - 1.9 * np.abs(u))
        return _soft(d, e)

    def h_stripes(u, v, e):
        return _stripes_mask(u, v, e)

    def plus(u, v, e):
        return _plus_mask(u, v, e)

    def v_stripes(u, v, e):
        return _stripes_mask(v, u, e)

    def checker(u, v, e):
        cells = np.sign(np.cos(u * 3.4) * np.cos(v * 3.4)) * 0.4
        extent = 0.9 - np.maximum(np.abs(u), np.abs(v))
        return _soft(np.minimum(cells, extent), e)

    def x_cross(u, v, e):
        s = np.sqrt(0.5)
        return _plus_mask((u + v) * s, (u - v) * s, edge=e)

    def diamond(u, v, e):
        return _soft(1.0 - (np.abs(u) + np.abs(v)), e)

    def diamond_outline(u, v, e):
        return _soft(0.24 - np.abs((np.abs(u) + np.abs(v)) - 0.85), e)

    return [
        disk, ring, square, square_outline, triangle,
        h_stripes, plus, v_stripes, checker, x_cross,
        diamond, diamond_outline,
    ]


_TEMPLATES = _template_masks()


def generate_shapes_dataset(num_classes, per_class, height=16, width=16,
                            channels=1, seed=0):
    """Balanced procedural dataset of noisy geometric shapes.

    Deterministic for a fixed seed. Classes are visually separable but the
    jitter ranges make small training sets genuinely limiting.
    """
    if num_classes > len(_TEMPLATES):
        raise ValueError(
            f"at most {len(_TEMPLATES)} classes available, got {num_classes}"
        )
    if height < 16 or width < 16:
        raise ValueError("image size must be at least 16x16")
    if channels not in (1, 3):
        raise ValueError("channels must be 1 or 3")
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width]
    gy = (ys + 0.5) / height * 2.0 - 1.0
    gx = (xs + 0.5) / width * 2.0 - 1.0
    n = num_classes * per_class
    pixels = np.empty((n, height, width, channels), dtype=np.uint8)
    labels = np.empty(n, dtype=np.int64)
    i = 0
    for c in range(num_classes):
        mask_fn = _TEMPLATES[c]
        for _ in range(per_class):
            cx, cy = rng.uniform(-0.28, 0.28, size=2)
            angle = rng.uniform(-0.26, 0.26)
            scale = rng.uniform(0.38, 0.8)
            bg = rng.uniform(0.02, 0.22)
            fg = bg + rng.uniform(0.33, 0.75)
            ca, sa = np.cos(angle), np.sin(angle)
            u = ((gx - cx) * ca + (gy - cy) * sa) / scale
            v = (-(gx - cx) * sa + (gy - cy) * ca) / scale
            edge = 2.0 / (min(height, width) * scale)
            img = bg + (fg - bg) * mask_fn(u, v, edge)
            img = img + rng.normal(0.0, 0.18, size=(height, width))
            img = np.clip(img, 0.0, 1.0)
            b = np.round(img * 255.0).astype(np.uint8)
            pixels[i] = b[:, :, None] if channels == 1 else np.repeat(b[:, :, None], 3, axis=2)
            labels[i] = c
            i += 1
    return LongTailDataset(pixels, labels, np.zeros(n, np.uint8), num_classes)


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches
# ---------------------------------------------------------------------------

_CIFAR_RECORD = 3073  # 1 label byte + 3 * 1024 channel-planar pixel bytes


def load_cifar10_binary(paths):
    """Load CIFAR-10 binary batch files into a balanced dataset.

    Each record is 3073 bytes: a label byte then 32x32x3 pixels stored
    channel-planar. Pixels map to [-1, 1] in memory.
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    pixel_parts, label_parts = [], []
    for path in paths:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size == 0 or raw.size % _CIFAR_RECORD != 0:
            raise ValueError(
                f"{path}: size {raw.size} is not a positive multiple of {_CIFAR_RECORD}"
            )
        rec = raw.reshape(-1, _CIFAR_RECORD)
        labels = rec[:, 0].astype(np.int64)
        if labels.max() > 9:
            raise ValueError(f"{path}: label byte {labels.max()} out of range [0, 9]")
        planes = rec[:, 1:].reshape(-1, 3, 32, 32)
        pixel_parts.append(planes.transpose(0, 2, 3, 1))
        label_parts.append(labels)
    return LongTailDataset(
        np.concatenate(pixel_parts),
        np.concatenate(label_parts),
        np.zeros(sum(len(l) for l in label_parts), np.uint8),
        num_classes=10,
    )


# ---------------------------------------------------------------------------
# LTDS persistence
# ---------------------------------------------------------------------------


def write_ltds(path, dataset):
    """Write a dataset in the LTDS binary format (lossless round-trip)."""
    n = len(dataset)
    h, w, c = dataset.image_shape
    header = np.array([n, dataset.num_classes, h, w, c], dtype="<u4")
    rec_pixels = dataset.pixels.reshape(n, h * w * c)
    labels = dataset.labels.astype("<u2")
    with open(path, "wb") as f:
        f.write(LTDS_MAGIC)
        f.write(header.tobytes())
        for i in range(n):
            f.write(labels[i].tobytes())
            f.write(dataset.origins[i].tobytes())
            f.write(rec_pixels[i].tobytes())


def read_ltds(path):
    """Read a dataset written by `write_ltds`."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(LTDS_MAGIC)] != LTDS_MAGIC:
        raise LtdsError(f"{path}: bad magic {raw[:5]!r}")
    off = len(LTDS_MAGIC)
    header = np.frombuffer(raw, dtype="<u4", count=_HEADER_FIELDS, offset=off)
    if header.size < _HEADER_FIELDS:
        raise LtdsError(f"{path}: truncated header")
    n, m, h, w, c = (int(x) for x in header)
    off += _HEADER_FIELDS * 4
    rec_size = 2 + 1 + h * w * c
    if len(raw) - off != n * rec_size:
        raise LtdsError(
            f"{path}: expected {n * rec_size} record bytes, found {len(raw) - off}"
        )
    rec = np.frombuffer(raw, dtype=np.uint8, offset=off).reshape(n, rec_size)
    labels = rec[:, 0:2].copy().view("<u2").reshape(n).astype(np.int64)
    origins = rec[:, 2]
    pixels = rec[:, 3:].reshape(n, h, w, c)
    if n and labels.max() >= m:
        raise LtdsError(f"{path}: label {labels.max()} >= num_classes {m}")
    return LongTailDataset(pixels, labels, origins, m)
