"""Spatial-frequency fingerprints for the synthetic occupation textures.

The synthetic aging texture is an additive oriented sinusoid, so its identity
is a single dominant bin in the 2D periodogram. A nearest-centroid classifier
over normalized periodograms therefore gives an objective, fully automatic
check that a generated image carries the texture of the requested occupation.
"""

from __future__ import annotations

import numpy as np

from .data import SynthProfile, wave_vector
from .errors import DomainError

# Radial bins strictly below this frequency are zeroed in classifier
# features: face structure and tone shifts live there, gratings do not.
LOW_FREQUENCY_CUTOFF = 4.0


def periodogram(image: np.ndarray) -> np.ndarray:
    """|rfft2|^2 of the channel-mean image with the DC bin zeroed."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=0)
    if arr.ndim != 2:
        raise DomainError(f"periodogram expects (H, W) or (C, H, W), got {arr.shape}")
    power = np.abs(np.fft.rfft2(arr)) ** 2
    power[0, 0] = 0.0
    return power


def _radial_frequency(h: int, w_half: int) -> np.ndarray:
    ky = np.minimum(np.arange(h), h - np.arange(h))[:, None]
    kx = np.arange(w_half)[None, :]
    return np.hypot(ky, kx)


def texture_feature(image: np.ndarray) -> np.ndarray:
    """L2-normalized periodogram with the low-frequency face band removed."""
    power = periodogram(image)
    power[_radial_frequency(*power.shape) < LOW_FREQUENCY_CUTOFF] = 0.0
    flat = power.ravel()
    norm = np.linalg.norm(flat)
    return flat / norm if norm > 0 else flat


def dominant_bin(image: np.ndarray) -> tuple[int, int]:
    """(cycles down, cycles right) of the strongest non-DC periodogram bin.

    The vertical index is folded to 0..H/2 so conjugate-symmetric peaks of a
    real image report one canonical location.
    """
    power = periodogram(image)
    ky, kx = np.unravel_index(int(power.argmax()), power.shape)
    h = power.shape[0]
    return min(ky, h - ky), int(kx)


def expected_bin(profile: SynthProfile) -> tuple[int, int]:
    """Nearest integer periodogram bin of a profile's grating."""
    ky, kx = wave_vector(profile)
    return int(round(abs(ky))), int(round(abs(kx)))


class TextureClassifier:
    """Nearest-centroid classifier over per-occupation periodogram features."""

    def __init__(self):
        self.labels: list[int] = []
        self._centroids: np.ndarray | None = None

    def fit(self, labeled: dict[int, list[np.ndarray]]) -> "TextureClassifier":
        if not labeled:
            raise DomainError("classifier needs at least one labeled pool")
        self.labels = sorted(labeled)
        rows = []
        for label in self.labels:
            pool = labeled[label]
            if not pool:
                raise DomainError(f"no samples to fit occupation {label}")
            rows.append(np.mean([texture_feature(img) for img in pool], axis=0))
        self._centroids = np.stack(rows)
        return self

    def predict(self, image: np.ndarray) -> int:
        if self._centroids is None:
            raise DomainError("classifier not fitted")
        feat = texture_feature(image)
        dists = np.linalg.norm(self._centroids - feat[None], axis=1)
        return self.labels[int(dists.argmin())]

    def accuracy(self, images: list[np.ndarray], label: int) -> float:
        if not images:
            raise DomainError("no images to classify")
        hits = sum(self.predict(img) == label for img in images)
        return hits / len(images)
