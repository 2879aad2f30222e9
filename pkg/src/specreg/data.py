"""Dataset ingestion, normalization, augmentation, and the corruption suite.

Images live as float32 arrays of shape (N, 3, 32, 32) with values in [0, 1]
until normalization. Corruptions are applied in that raw [0, 1] space, before
normalization, and always land back inside [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes
CORRUPTION_KINDS = ("impulse_noise", "fog", "contrast")

# severity 1..5 constants; index 0 of each list is severity 1
CORRUPTION_PARAMS = {
    "impulse_noise": [0.03, 0.06, 0.09, 0.17, 0.27],  # fraction of replaced pixels
    "contrast": [0.4, 0.3, 0.2, 0.1, 0.05],  # contrast scale factor
    "fog": [(1.5, 2.0), (2.0, 2.0), (2.5, 1.7), (2.5, 1.5), (3.0, 1.4)],  # (strength, decay)
}


class DatasetFormatError(ValueError):
    """Raised when a batch file does not follow the 3073-byte record layout."""


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, 32, 32) float32
    labels: np.ndarray  # (N,) int64
    channel_mean: np.ndarray | None = None  # set once normalize() has run
    channel_std: np.ndarray | None = None

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.channel_mean, self.channel_std)


@dataclass
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}, expected one of {CORRUPTION_KINDS}")
        if not 0 <= self.severity <= 5:
            raise ValueError(f"severity must be in 0..5, got {self.severity}")


def _parse_batch_file(path: Path):
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES != 0:
        raise DatasetFormatError(
            f"{path}: file size {raw.size} is not a positive multiple of {RECORD_BYTES}"
        )
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DatasetFormatError(f"{path}: label byte {labels.max()} out of range 0..9")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def load_cifar10(path) -> tuple[Dataset, Dataset]:
    """Read CIFAR-10 binary batches (data_batch_*.bin / test_batch.bin) under path."""
    path = Path(path)
    train_files = sorted(path.glob("data_batch_*.bin"))
    test_file = path / "test_batch.bin"
    if not train_files:
        raise FileNotFoundError(f"no data_batch_*.bin files under {path}")
    if not test_file.exists():
        raise FileNotFoundError(f"missing {test_file}")
    parts = [_parse_batch_file(f) for f in train_files]
    train = Dataset(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
    test = Dataset(*_parse_batch_file(test_file))
    return train, test


def save_cifar10_batch(images: np.ndarray, labels: np.ndarray, path):
    """Write images/labels as one CIFAR-10 binary batch (inverse of the loader)."""
    n = len(labels)
    records = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = np.asarray(labels, dtype=np.uint8)
    pixels = np.clip(np.round(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)
    records[:, 1:] = pixels.reshape(n, -1)
    records.tofile(path)


def normalize(ds: Dataset, mean=None, std=None) -> Dataset:
    """Per-channel (x - mean) / std; stats come from ds itself when not supplied."""
    if mean is None or std is None:
        mean = ds.images.astype(np.float64).mean(axis=(0, 2, 3))
        std = ds.images.astype(np.float64).std(axis=(0, 2, 3))
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise ValueError(f"channel std must be positive, got {std}")
    images = ((ds.images.astype(np.float64) - mean[None, :, None, None]) / std[None, :, None, None])
    return Dataset(images.astype(np.float32), ds.labels, mean, std)


def normalize_images(images: np.ndarray, mean, std) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    out = (images.astype(np.float64) - mean[None, :, None, None]) / std[None, :, None, None]
    return out.astype(np.float32)


def _pad_crop(img: np.ndarray, off_y: int, off_x: int) -> np.ndarray:
    padded = np.pad(img, ((0, 0), (4, 4), (4, 4)))
    return padded[:, off_y : off_y + img.shape[1], off_x : off_x + img.shape[2]]


def _hflip(img: np.ndarray) -> np.ndarray:
    return img[:, :, ::-1]


def augment(img: np.ndarray, seed, crop: bool = True, flip: bool = True) -> np.ndarray:
    """Pad-4-then-random-crop plus p=0.5 horizontal flip, deterministic per seed."""
    rng = np.random.default_rng(seed)
    out = img
    if crop:
        off_y, off_x = rng.integers(0, 9, size=2)
        out = _pad_crop(out, int(off_y), int(off_x))
    if flip and rng.random() < 0.5:
        out = _hflip(out)
    return np.ascontiguousarray(out)


def plasma_fractal(mapsize: int, wibbledecay: float, rng) -> np.ndarray:
    """Diamond-square height map with wrap-around, rescaled to [0, 1] (max exactly 1)."""
    if mapsize & (mapsize - 1):
        raise ValueError(f"mapsize must be a power of two, got {mapsize}")
    maparray = np.zeros((mapsize, mapsize), dtype=np.float64)
    stepsize = mapsize
    wibble = 100.0

    def wibbled_mean(array):
        return array / 4.0 + wibble * rng.uniform(-wibble, wibble, array.shape)

    while stepsize >= 2:
        half = stepsize // 2
        corners = maparray[0:mapsize:stepsize, 0:mapsize:stepsize]
        square_sum = corners + np.roll(corners, -1, axis=0)
        square_sum = square_sum + np.roll(square_sum, -1, axis=1)
        maparray[half:mapsize:stepsize, half:mapsize:stepsize] = wibbled_mean(square_sum)

        centers = maparray[half:mapsize:stepsize, half:mapsize:stepsize]
        corners = maparray[0:mapsize:stepsize, 0:mapsize:stepsize]
        left_sum = centers + np.roll(centers, 1, axis=0) + corners + np.roll(corners, -1, axis=1)
        maparray[0:mapsize:stepsize, half:mapsize:stepsize] = wibbled_mean(left_sum)
        top_sum = centers + np.roll(centers, 1, axis=1) + corners + np.roll(corners, -1, axis=0)
        maparray[half:mapsize:stepsize, 0:mapsize:stepsize] = wibbled_mean(top_sum)

        stepsize //= 2
        wibble /= wibbledecay

    maparray -= maparray.min()
    return maparray / maparray.max()


def corrupt(img: np.ndarray, spec: CorruptionSpec, seed, params=None) -> np.ndarray:
    """Apply one corruption to a single [0, 1] image; severity 0 is the identity."""
    if not 0 <= spec.severity <= 5:
        raise ValueError(f"severity must be in 0..5, got {spec.severity}")
    if spec.severity == 0:
        return img.copy()
    params = CORRUPTION_PARAMS if params is None else params
    level = params[spec.kind][spec.severity - 1]
    rng = np.random.default_rng(seed)
    x = img.astype(np.float64)

    if spec.kind == "impulse_noise":
        replace = rng.random(x.shape) < level
        values = (rng.random(x.shape) < 0.5).astype(np.float64)
        out = np.where(replace, values, x)
    elif spec.kind == "contrast":
        means = x.mean(axis=(1, 2), keepdims=True)
        out = (x - means) * level + means
    else:  # fog
        strength, decay = level
        plasma = plasma_fractal(x.shape[1], decay, rng)
        out = (x + strength * plasma[None, :, :]) / (1.0 + strength)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# distinct low integer frequencies, one (fy, fx) pair per class
_SYNTH_FREQS = [(1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1), (1, 2), (2, 2), (3, 0), (0, 3)]


def synthetic_dataset(n: int, seed: int = 0, classes: int = 10) -> Dataset:
    """Deterministic stand-in classification set of oriented sinusoid textures.

    Each class is a fixed 2D frequency with random phase, per-channel
    amplitude profile, and additive noise. Useful wherever the real data is
    unavailable; same shapes and value range as the loader output.
    """
    if classes > len(_SYNTH_FREQS):
        raise ValueError(f"at most {len(_SYNTH_FREQS)} synthetic classes supported")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=n)
    yy, xx = np.mgrid[0:32, 0:32]
    images = np.empty((n, 3, 32, 32), dtype=np.float32)
    for i, c in enumerate(labels):
        fy, fx = _SYNTH_FREQS[c]
        phase = rng.uniform(0, 2 * np.pi)
        amp = 0.3 + 0.1 * rng.random()
        wave = np.sin(2 * np.pi * (fy * yy + fx * xx) / 32.0 + phase)
        chan_amp = np.array([1.0, 0.4 + 0.06 * c, 0.8 - 0.05 * c])
        img = 0.5 + amp * chan_amp[:, None, None] * wave[None, :, :]
        img = img + rng.normal(0.0, 0.06, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels.astype(np.int64))
