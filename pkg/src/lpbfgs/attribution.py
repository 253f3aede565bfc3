"""Integrated Gradients and attribution-driven pixel selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError, UsageError
from .model import Classifier, Image, as_vector, batch_logit_gradient

STRATEGIES = ("ig-top", "ig-bottom", "random")
DEFAULT_IG_STEPS = 256


@dataclass(frozen=True)
class AttributionMap:
    scores: np.ndarray
    baseline: np.ndarray
    steps: int


def integrated_gradients(model: Classifier, x, baseline=None, label: int = 0,
                         steps: int = DEFAULT_IG_STEPS, chunk: int = 512) -> AttributionMap:
    """Midpoint-rule Integrated Gradients of the ``label`` logit.

    ``baseline`` defaults to the all-zero image.
    """
    v = as_vector(x)
    base = np.zeros_like(v) if baseline is None else as_vector(baseline)
    if base.shape != v.shape:
        raise ShapeError(f"baseline has {base.size} components, input has {v.size}")
    if v.size != model.n_inputs:
        raise ShapeError(f"input has {v.size} components, model expects {model.n_inputs}")
    if steps < 1:
        raise UsageError("integrated gradients needs steps >= 1")
    if not 0 <= label < model.classes:
        raise UsageError(f"label {label} outside [0, {model.classes})")
    diff = v - base
    total = np.zeros_like(v)
    alphas = (np.arange(steps) + 0.5) / steps
    for start in range(0, steps, chunk):
        a = alphas[start:start + chunk]
        total += batch_logit_gradient(model, base + a[:, None] * diff, label).sum(axis=0)
    return AttributionMap(diff * (total / steps), base, steps)


@dataclass(frozen=True)
class PixelSelection:
    """Split of an image into K perturbable components and a frozen remainder.

    ``indices`` plays the role of the 0/1 position map: column p of the map
    has its single 1 at row ``indices[p]``.
    """

    indices: np.ndarray
    selected: np.ndarray
    frozen: np.ndarray
    shape: tuple[int, int, int]

    @property
    def budget(self) -> int:
        return self.indices.size

    def mask(self) -> np.ndarray:
        m = np.zeros(self.frozen.size, dtype=bool)
        m[self.indices] = True
        return m


def selection_from_indices(x, indices, shape=None) -> PixelSelection:
    v = as_vector(x)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= v.size):
        raise UsageError(f"selection indices must lie in [0, {v.size})")
    if np.unique(idx).size != idx.size:
        raise UsageError("selection indices must be distinct")
    if shape is None:
        shape = x.shape if isinstance(x, Image) else (1, 1, v.size)
    selected = v[idx].copy()
    frozen = v.copy()
    frozen[idx] = 0.0
    for a in (idx, selected, frozen):
        a.setflags(write=False)
    return PixelSelection(idx, selected, frozen, tuple(shape))


def rank_pixels(scores: np.ndarray, strategy: str, k: int, seed: int = 0) -> np.ndarray:
    mag = np.abs(np.asarray(scores, dtype=np.float64))
    if strategy == "ig-top":
        # stable sort keeps the lowest flat index first among equal magnitudes
        return np.argsort(-mag, kind="stable")[:k]
    if strategy == "ig-bottom":
        return np.argsort(mag, kind="stable")[:k]
    if strategy == "random":
        return np.random.default_rng(seed).choice(mag.size, size=k, replace=False)
    raise UsageError(f"unknown selector strategy {strategy!r}; expected one of {STRATEGIES}")


def select_pixels(model: Classifier, x, label: int, k: int, strategy: str = "ig-top", seed: int = 0,
                  steps: int = DEFAULT_IG_STEPS, baseline=None,
                  attribution: Optional[AttributionMap] = None) -> PixelSelection:
    v = as_vector(x)
    if not 1 <= k <= v.size:
        raise UsageError(f"pixel budget K must satisfy 1 <= K <= N={v.size}, got {k}")
    if strategy not in STRATEGIES:
        raise UsageError(f"unknown selector strategy {strategy!r}; expected one of {STRATEGIES}")
    if strategy == "random":
        scores = np.zeros(v.size)
    else:
        if attribution is None:
            attribution = integrated_gradients(model, x, baseline, label, steps)
        scores = attribution.scores
    shape = x.shape if isinstance(x, Image) else model.input_shape
    return selection_from_indices(v, rank_pixels(scores, strategy, k, seed), shape)


def reconstruct(selection: PixelSelection, values) -> np.ndarray:
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    if vals.size != selection.budget:
        raise UsageError(f"expected {selection.budget} values, got {vals.size}")
    out = selection.frozen.copy()
    out[selection.indices] = vals
    return out
