"""Datasets: a synthetic frequency-separable generator and a raw-image
directory format (labels.csv + planar u8 .raw files + dataset.json)."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, LoadError


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise ContractError(f"images must be (N, 3, H, W), got {self.images.shape}")
        if len(self.labels) != len(self.images) or len(self.images) < 1:
            raise ContractError("labels and images disagree or dataset empty")

    def __len__(self):
        return len(self.images)

    @property
    def classes(self) -> int:
        return int(self.labels.max()) + 1


def _normalize01(img: np.ndarray) -> np.ndarray:
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)


def _lowpass_noise(rng: np.random.Generator, size: int, cutoff: float) -> np.ndarray:
    noise = rng.standard_normal((size, size))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    mask = np.sqrt(fy * fy + fx * fx) <= cutoff
    return np.real(np.fft.ifft2(np.fft.fft2(noise) * mask))


def _checkerboard(size: int) -> np.ndarray:
    j = np.arange(size)
    return np.where((j[:, None] + j[None, :]) % 2 == 0, 1.0, -1.0)


def generate_synthetic(n: int, size: int = 16, seed: int = 0,
                       cutoff: float = 0.15, split: str = "train") -> Dataset:
    """Two classes separable by spectrum: class 0 is smooth low-pass
    filtered noise, class 1 the same noise modulated by a +-1 checkerboard
    (which shifts its energy toward Nyquist)."""
    if n < 1 or size < 2:
        raise ContractError("need n >= 1 samples and size >= 2")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    cb = _checkerboard(size)
    images = np.empty((n, 3, size, size))
    for i in range(n):
        for ch in range(3):
            smooth = _lowpass_noise(rng, size, cutoff)
            images[i, ch] = _normalize01(smooth * cb if labels[i] else smooth)
    return Dataset(images, labels, split)


def save_dataset(dataset: Dataset, path):
    """Write the raw directory layout consumed by load_dataset."""
    os.makedirs(path, exist_ok=True)
    h, w = dataset.images.shape[2:]
    with open(os.path.join(path, "dataset.json"), "w") as f:
        json.dump({"height": int(h), "width": int(w)}, f)
    with open(os.path.join(path, "labels.csv"), "w", newline="") as f:
        out = csv.writer(f)
        out.writerow(["filename", "label"])
        for i, label in enumerate(dataset.labels):
            name = f"img_{i:05d}.raw"
            out.writerow([name, int(label)])
            raw = np.rint(np.clip(dataset.images[i] * 255.0, 0, 255)).astype(np.uint8)
            with open(os.path.join(path, name), "wb") as rf:
                rf.write(raw.tobytes())


def load_dataset(path, split: str = "train") -> Dataset:
    sidecar = os.path.join(path, "dataset.json")
    labels_file = os.path.join(path, "labels.csv")
    try:
        with open(sidecar) as f:
            dims = json.load(f)
        h, w = int(dims["height"]), int(dims["width"])
    except (OSError, KeyError, ValueError) as e:
        raise LoadError(f"bad or missing sidecar {sidecar}: {e}") from e
    try:
        with open(labels_file, newline="") as f:
            rows = [r for r in csv.DictReader(f)]
    except OSError as e:
        raise LoadError(f"cannot read {labels_file}: {e}") from e
    if not rows:
        raise LoadError(f"{labels_file} lists no samples")
    images = np.empty((len(rows), 3, h, w))
    labels = np.empty(len(rows), dtype=np.int64)
    expected = 3 * h * w
    for i, row in enumerate(rows):
        name = row.get("filename")
        if name is None or row.get("label") is None:
            raise LoadError(f"{labels_file}: row {i + 1} missing filename/label")
        fpath = os.path.join(path, name)
        try:
            raw = np.fromfile(fpath, dtype=np.uint8)
        except OSError as e:
            raise LoadError(f"cannot read image {fpath}: {e}") from e
        if raw.size != expected:
            raise LoadError(f"{fpath}: got {raw.size} bytes, expected {expected} "
                            f"for 3x{h}x{w}")
        images[i] = raw.reshape(3, h, w) / 255.0
        labels[i] = int(row["label"])
    if (labels < 0).any():
        raise LoadError(f"{labels_file}: negative label")
    return Dataset(images, labels, split)
