"""Deterministic synthetic blob dataset standing in for natural images."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .model import Image


@dataclass(frozen=True)
class DatasetSpec:
    classes: int = 2
    shape: tuple[int, int, int] = (1, 8, 8)
    count: int = 2000
    noise: float = 0.1
    seed: int = 7
    amplitude: float = 0.9
    width: float = 1.2
    pattern_seeds: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.classes < 1 or self.count < 0 or self.noise < 0 or self.width <= 0:
            raise UsageError("dataset spec needs classes >= 1, count >= 0, noise >= 0, width > 0")
        if self.pattern_seeds is not None and len(self.pattern_seeds) != self.classes:
            raise UsageError("pattern_seeds needs one seed per class")

    def class_seeds(self) -> tuple[int, ...]:
        if self.pattern_seeds is not None:
            return tuple(self.pattern_seeds)
        return tuple(self.seed * 1000 + m for m in range(self.classes))


@dataclass
class SyntheticDataset:
    X: np.ndarray  # (count, N)
    y: np.ndarray
    shape: tuple[int, int, int]
    spec: DatasetSpec | None = None

    def __len__(self):
        return len(self.y)

    def image(self, i: int) -> Image:
        return Image(self.X[i], self.shape)

    @property
    def images(self) -> list[Image]:
        return [self.image(i) for i in range(len(self))]

    @property
    def labels(self) -> list[int]:
        return [int(v) for v in self.y]

    def split(self, test_fraction: float):
        n_test = int(round(len(self) * test_fraction))
        cut = len(self) - n_test
        return (SyntheticDataset(self.X[:cut], self.y[:cut], self.shape, self.spec),
                SyntheticDataset(self.X[cut:], self.y[cut:], self.shape, self.spec))


def class_templates(spec: DatasetSpec) -> np.ndarray:
    """One Gaussian blob per class and channel, centres kept at least 2 px apart."""
    c, h, w = spec.shape
    rr, cc = np.mgrid[0:h, 0:w]
    templates = np.zeros((spec.classes, c, h, w))
    taken: list[list[tuple[float, float]]] = [[] for _ in range(c)]
    for m, seed in enumerate(spec.class_seeds()):
        rng = np.random.default_rng(seed)
        for ch in range(c):
            for _ in range(1000):
                centre = (rng.uniform(1, h - 2) if h > 3 else (h - 1) / 2,
                          rng.uniform(1, w - 2) if w > 3 else (w - 1) / 2)
                if all(math.dist(centre, p) >= 2.0 for p in taken[ch]):
                    break
            taken[ch].append(centre)
            d2 = (rr - centre[0]) ** 2 + (cc - centre[1]) ** 2
            templates[m, ch] = spec.amplitude * np.exp(-d2 / (2 * spec.width ** 2))
    return templates.reshape(spec.classes, -1)


def generate_dataset(spec: DatasetSpec) -> SyntheticDataset:
    templates = class_templates(spec)
    rng = np.random.default_rng([spec.seed, 0])
    y = rng.permutation(np.arange(spec.count) % spec.classes)
    X = templates[y] + rng.normal(0.0, spec.noise, size=(spec.count, templates.shape[1])) if spec.noise > 0 \
        else templates[y].copy()
    np.clip(X, 0.0, 1.0, out=X)
    return SyntheticDataset(X, y.astype(np.int64), tuple(spec.shape), spec)
