"""Diagnostic instruments: attention distance, head diversity, frequency
spectrum of layer inputs, and head-averaged attention maps."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DiagnosticError

DEFAULT_BINS = 10


@dataclass
class ProbeRecord:
    """One layer of one image: attention weights (heads, T, T), the layer
    input (T, C), the token grid and the pixel spacing of one grid step."""
    layer: int
    attention: np.ndarray
    layer_input: np.ndarray
    grid: tuple[int, int]
    pixel_spacing: float

    def __post_init__(self):
        h, w = self.grid
        t = 1 + h * w
        if self.attention.ndim != 3 or self.attention.shape[1:] != (t, t):
            raise ContractError(
                f"attention {self.attention.shape} does not match grid {self.grid}")
        if self.layer_input.shape[0] != t:
            raise ContractError(
                f"layer input {self.layer_input.shape} does not match grid {self.grid}")
        rows = self.attention.sum(axis=-1)
        if not np.allclose(rows, 1.0, atol=1e-6):
            raise ContractError("attention rows must sum to 1")


def grid_distances(grid: tuple[int, int], spacing: float) -> np.ndarray:
    """Euclidean distance (in pixels) between every pair of patch tokens."""
    h, w = grid
    ys, xs = np.divmod(np.arange(h * w), w)
    dy = ys[:, None] - ys[None, :]
    dx = xs[:, None] - xs[None, :]
    return spacing * np.sqrt(dy * dy + dx * dx)


def attention_distance(rec: ProbeRecord) -> np.ndarray:
    """Per-head attention-weighted mean pixel distance, averaged over all
    patch-token queries. The class token carries no grid position, so it is
    dropped as query and key and each row is renormalized over patch keys."""
    h, w = rec.grid
    if h * w < 2:
        raise DiagnosticError(f"grid {rec.grid} too small for distances")
    a = rec.attention[:, 1:, 1:]
    mass = a.sum(axis=-1, keepdims=True)
    if np.any(mass <= 0):
        raise DiagnosticError("a query puts no attention mass on patch tokens")
    d = grid_distances(rec.grid, rec.pixel_spacing)
    return ((a / mass) * d[None]).sum(axis=-1).mean(axis=-1)


def head_diversity(distances: np.ndarray) -> float:
    """Population variance of the per-head distances within one layer."""
    distances = np.asarray(distances, dtype=np.float64)
    if distances.size < 2:
        raise DiagnosticError("head diversity needs at least two heads")
    return float(np.var(distances))


def _dft_matrix(n: int) -> np.ndarray:
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n)


def dft2(grid: np.ndarray) -> np.ndarray:
    """Direct (non-FFT) 2D discrete Fourier transform of an HxW array."""
    h, w = grid.shape
    return _dft_matrix(h) @ grid.astype(np.complex128) @ _dft_matrix(w).T


def radial_bin_index(grid: tuple[int, int], bins: int) -> np.ndarray:
    """Bin index per DFT coefficient. Frequencies are centered, the radius
    is normalized so the axis Nyquist lands at pi, and radii beyond pi
    (grid corners) fold into the last bin."""
    h, w = grid
    fy = (np.arange(h) + h // 2) % h - h // 2
    fx = (np.arange(w) + w // 2) % w - w // 2
    ry = np.abs(fy) / (h / 2.0) if h > 1 else np.zeros(h)
    rx = np.abs(fx) / (w / 2.0) if w > 1 else np.zeros(w)
    omega = np.pi * np.sqrt(ry[:, None] ** 2 + rx[None, :] ** 2)
    idx = np.floor(omega / np.pi * bins).astype(int)
    return np.minimum(idx, bins - 1)


def frequency_share(rec: ProbeRecord, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Histogram of spectral magnitude over normalized radial frequency
    [0, pi]. Per channel the patch tokens (class token excluded) are
    reshaped to the grid and transformed; magnitudes are summed over
    channels and normalized by the total mass."""
    h, w = rec.grid
    patches = rec.layer_input[1:]
    if patches.shape[0] != h * w:
        raise ContractError(f"{patches.shape[0]} patch tokens do not reshape "
                            f"to grid {rec.grid}")
    slab = patches.reshape(h, w, -1)
    mag = np.zeros((h, w))
    for c in range(slab.shape[2]):
        mag += np.abs(dft2(slab[:, :, c]))
    total = mag.sum()
    shares = np.zeros(bins)
    if total > 0:
        np.add.at(shares, radial_bin_index(rec.grid, bins).ravel(), mag.ravel())
        shares /= total
    return shares


def attention_map(rec: ProbeRecord, query: int) -> tuple[np.ndarray, float]:
    """Head-averaged attention row of a patch-token query, reshaped to the
    grid. Returns (map, class_token_mass); map sum + class mass == 1."""
    h, w = rec.grid
    t = 1 + h * w
    if not 1 <= query < t:
        raise ContractError(f"query {query} is not a patch token (1..{t - 1})")
    row = rec.attention[:, query, :].mean(axis=0)
    return row[1:].reshape(h, w), float(row[0])


# -- batch aggregation and file output -------------------------------------


def mean_distances(records: list[ProbeRecord]) -> np.ndarray:
    """Per-head distances averaged across images (records of one layer)."""
    if not records:
        raise DiagnosticError("no records to average")
    return np.mean([attention_distance(r) for r in records], axis=0)


def write_distances_csv(path, per_layer: dict[int, np.ndarray]):
    with open(path, "w", newline="") as f:
        out = csv.writer(f)
        out.writerow(["layer", "head", "distance_px"])
        for layer in sorted(per_layer):
            for head, dist in enumerate(per_layer[layer]):
                out.writerow([layer, head, repr(float(dist))])


def write_diversity_csv(path, per_layer: dict[int, float]):
    with open(path, "w", newline="") as f:
        out = csv.writer(f)
        out.writerow(["layer", "diversity"])
        for layer in sorted(per_layer):
            out.writerow([layer, repr(float(per_layer[layer]))])


def write_spectrum_csv(path, per_layer: dict[int, np.ndarray]):
    with open(path, "w", newline="") as f:
        out = csv.writer(f)
        out.writerow(["layer", "bin", "share"])
        for layer in sorted(per_layer):
            for b, share in enumerate(per_layer[layer]):
                out.writerow([layer, b, repr(float(share))])


def write_pgm(path, image: np.ndarray):
    """8-bit binary PGM, max-normalized."""
    peak = image.max()
    scaled = image / peak if peak > 0 else image
    pixels = np.clip(scaled * 255.0, 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(pixels.tobytes())
