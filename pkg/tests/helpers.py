"""Shared oracles and model builders for the test suite."""

import numpy as np

from lpbfgs.model import Classifier, Layer, init_classifier


def random_tanh_model(seed, n=12, hidden=(7, 5), classes=3):
    rng = np.random.default_rng(seed)
    return init_classifier((1, 1, n), hidden, classes, "tanh", rng)


def linear_model(W, b=None):
    W = np.asarray(W, dtype=float)
    b = np.zeros(W.shape[0]) if b is None else b
    return Classifier((Layer(W, b, "identity"),), (1, 1, W.shape[1]))


def central_difference(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def max_rel_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
