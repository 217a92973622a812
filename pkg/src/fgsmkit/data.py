"""Datasets: directory loading, synthetic generation, splitting, augmentation."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ppm import PPMError, read_image
from .tensor import Rng


class DataError(ValueError):
    pass


@dataclass
class LabeledImage:
    pixels: np.ndarray  # (C, H, W) in [0, 1]
    label: int


@dataclass
class AugmentConfig:
    rotation_range: float = 15.0

    def __post_init__(self):
        if self.rotation_range < 0:
            raise ValueError(f"rotation_range must be >= 0, got {self.rotation_range}")


@dataclass
class Dataset:
    """Images stacked as one (N, C, H, W) float array plus integer labels.

    ``ids`` tracks where each image came from (file index or synthetic index)
    so splits can be checked as partitions.
    """

    images: np.ndarray
    labels: np.ndarray
    class_names: tuple
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = tuple(self.class_names)
        if self.ids is None:
            self.ids = np.arange(len(self.labels))
        self.ids = np.asarray(self.ids)
        if self.images.ndim != 4 or len(self.images) != len(self.labels) or len(self.ids) != len(self.labels):
            raise DataError(f"inconsistent dataset arrays: images {self.images.shape}, labels {self.labels.shape}")
        if list(self.class_names) != sorted(self.class_names):
            raise DataError(f"class names must be sorted, got {self.class_names}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("label outside the class table")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise DataError("pixel values must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> LabeledImage:
        return LabeledImage(self.images[i], int(self.labels[i]))

    @property
    def n_classes(self):
        return len(self.class_names)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[indices], self.labels[indices], self.class_names, self.ids[indices])

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)


def resize(image: np.ndarray, size) -> np.ndarray:
    """Bilinear resize of a (C, H, W) image, half-pixel centres."""
    if isinstance(size, int):
        size = (size, size)
    c, h, w = image.shape
    oh, ow = size
    if (oh, ow) == (h, w):
        return image.copy()

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis_weights(h, oh)
    x0, x1, fx = axis_weights(w, ow)
    img = image.astype(np.float64)
    rows = img[:, y0, :] * (1 - fy)[None, :, None] + img[:, y1, :] * fy[None, :, None]
    out = rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def load_directory(path, target_size=32) -> Dataset:
    """Load ``<path>/<class_name>/*.ppm``; class order is the sorted
    sub-directory names, files are read in sorted-name order."""
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"no class sub-directories under {root}")
    images, labels = [], []
    for label, cdir in enumerate(class_dirs):
        files = sorted(cdir.glob("*.ppm"))
        if not files:
            raise DataError(f"class directory {cdir.name!r} contains no .ppm images")
        for f in files:
            try:
                img = read_image(f)
            except (OSError, PPMError) as exc:
                raise DataError(f"cannot read {f}: {exc}") from exc
            images.append(resize(img, target_size))
            labels.append(label)
    return Dataset(np.stack(images), np.array(labels), [p.name for p in class_dirs])


def synthesize(n_per_class: int, size: int, rng: Rng, channels: int = 3, noise: float = 0.05, intensity=(0.2, 0.5)) -> Dataset:
    """Two-class toy stand-in for the skin-lesion images.

    ``blob``: a filled disc with Gaussian fall-off; ``ring``: an annulus.
    Centre, radius and per-channel colour are random; Gaussian pixel noise
    (stddev ``noise``) is added and the result clipped to [0, 1]. Images are
    interleaved blob, ring, blob, ...

    The default colour range is deliberately dim: an L-inf budget of 0.1 is
    then large next to the signal, which is what makes the toy task
    attackable, while the bright-centre/dark-centre difference still leaves
    a robust feature for adversarial training to find.
    """
    if n_per_class < 1:
        raise DataError(f"n_per_class must be >= 1, got {n_per_class}")
    if size < 8:
        raise DataError(f"image size must be >= 8, got {size}")
    n = 2 * n_per_class
    labels = np.tile([0, 1], n_per_class)
    cy = rng.uniform(n, 0.35 * size, 0.65 * size)
    cx = rng.uniform(n, 0.35 * size, 0.65 * size)
    radius = rng.uniform(n, 0.18 * size, 0.3 * size)
    colour = rng.uniform((n, channels), *intensity)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r = np.sqrt((yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2)
    rad = radius[:, None, None]
    blob = np.exp(-0.5 * (r / (0.6 * rad)) ** 2)
    width = 0.12 * rad + 0.5
    ring = np.exp(-0.5 * ((r - rad) / width) ** 2)
    profile = np.where(labels[:, None, None] == 0, blob, ring)
    images = colour[:, :, None, None] * profile[:, None]
    images = images + rng.normal(images.shape, 0.0, noise)
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    return Dataset(images, labels, ("blob", "ring"))


def one_hot(labels, n_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    out = np.zeros((len(labels), n_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def stratified_split(dataset: Dataset, train_fraction: float, rng: Rng):
    """Per class, a seeded shuffle sends round(n_c * fraction) images to
    train and the rest to test. Both outputs keep the original ordering."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    train_idx, test_idx = [], []
    for c, name in enumerate(dataset.class_names):
        idx = np.flatnonzero(dataset.labels == c)
        n_train = int(np.floor(len(idx) * train_fraction + 0.5))
        if n_train == 0 or n_train == len(idx):
            raise DataError(f"class {name!r} ({len(idx)} images) would leave one side of the split empty")
        idx = idx[rng.permutation(len(idx))]
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    return dataset.subset(train), dataset.subset(test)


def rotate(image, angle_degrees: float):
    """Rotate about the image centre with bilinear sampling; pixels falling
    outside the source frame read as 0. Accepts a (C, H, W) array or a
    LabeledImage and returns the same kind."""
    if isinstance(image, LabeledImage):
        return LabeledImage(rotate(image.pixels, angle_degrees), image.label)
    if abs(angle_degrees) > 180:
        raise ValueError(f"angle must lie in [-180, 180], got {angle_degrees}")
    if angle_degrees == 0:
        return image.copy()
    c, h, w = image.shape
    a = np.deg2rad(angle_degrees)
    cos, sin = np.cos(a), np.sin(a)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    # inverse map: output pixel -> source location
    sy = cos * dy - sin * dx + cy
    sx = sin * dy + cos * dx + cx
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy, fx = sy - y0, sx - x0
    img = image.astype(np.float64)
    out = np.zeros((c, h, w))
    for oy, ox, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx), (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yi, xi = y0 + oy, x0 + ox
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = img[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        out += vals * (wgt * inside)
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def augment_batch(batch: np.ndarray, config: AugmentConfig, rng: Rng) -> np.ndarray:
    """Rotate every image by its own angle drawn from U[-range, +range]."""
    if config.rotation_range == 0:
        return batch.copy()
    angles = rng.uniform(len(batch), -config.rotation_range, config.rotation_range)
    return np.stack([rotate(img, float(a)) for img, a in zip(batch, angles)])
