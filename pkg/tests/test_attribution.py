import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import linear_model, random_tanh_model
from lpbfgs.attribution import (integrated_gradients, rank_pixels, reconstruct, select_pixels,
                                selection_from_indices)
from lpbfgs.errors import ShapeError, UsageError
from lpbfgs.model import Image, forward_logits


def completeness_error(model, x, label, steps):
    scores = integrated_gradients(model, x, None, label, steps).scores
    gap = forward_logits(model, x)[label] - forward_logits(model, np.zeros_like(x))[label]
    return abs(scores.sum() - gap) / abs(gap)


class TestIntegratedGradients:
    def test_input_equal_to_baseline(self):
        m = random_tanh_model(0)
        x = np.full(12, 0.3)
        assert np.array_equal(integrated_gradients(m, x, x.copy(), 1).scores, np.zeros(12))

    @pytest.mark.parametrize("steps", [1, 4, 64, 256])
    def test_linear_model_exact(self, steps):
        w = np.array([0.5, -0.25, 0.125, 2.0, -1.5])  # dyadic, so the Riemann sum is exact in floats
        m = linear_model(np.vstack([w, -w]))
        x = np.array([0.2, 0.4, 0.6, 0.8, 1.0])
        np.testing.assert_array_equal(integrated_gradients(m, x, None, 0, steps).scores, w * x)

    def test_linear_model_generic_weights(self):
        W = np.random.default_rng(2).normal(size=(2, 9))
        x = np.random.default_rng(3).uniform(size=9)
        np.testing.assert_allclose(integrated_gradients(linear_model(W), x, None, 1, 37).scores, W[1] * x,
                                   rtol=1e-13)

    @pytest.mark.parametrize("seed", range(5))
    def test_completeness(self, seed):
        m = random_tanh_model(seed)
        x = np.random.default_rng(seed).uniform(size=12)
        e1024 = completeness_error(m, x, 0, 1024)
        assert e1024 < 1e-2
        assert completeness_error(m, x, 0, 2048) <= e1024

    def test_error_shrinks_with_steps(self):
        m = random_tanh_model(11)
        x = np.random.default_rng(11).uniform(size=12)
        errs = [completeness_error(m, x, 2, s) for s in (4, 8, 16, 32)]
        assert all(b < a for a, b in zip(errs, errs[1:]))

    def test_shape_mismatch(self):
        m = random_tanh_model(0)
        with pytest.raises(ShapeError):
            integrated_gradients(m, np.zeros(12), np.zeros(5), 0)
        with pytest.raises(UsageError):
            integrated_gradients(m, np.zeros(12), None, 0, steps=0)


class TestSelectPixels:
    def test_two_by_two_example(self):
        # 2x2 image where x3 and x4 carry the largest attributions
        m = linear_model([[0.1, 0.2, 0.9, 0.7], [0.0, 0.0, 0.0, 0.0]])
        img = Image([0.5, 0.5, 0.5, 0.5], (1, 2, 2))
        sel = select_pixels(m, img, 0, 2, "ig-top", steps=8)
        assert list(sel.indices) == [2, 3]
        assert sel.frozen[2] == 0 and sel.frozen[3] == 0
        np.testing.assert_array_equal(sel.frozen[:2], [0.5, 0.5])
        assert sel.shape == (1, 2, 2)

    def test_bottom_and_ordering(self):
        m = linear_model([[0.1, 0.2, 0.9, 0.7], [0.0, 0.0, 0.0, 0.0]])
        sel = select_pixels(m, np.full(4, 0.5), 0, 3, "ig-bottom", steps=8)
        assert list(sel.indices) == [0, 1, 3]

    def test_full_budget(self):
        m = random_tanh_model(1)
        x = np.random.default_rng(1).uniform(size=12)
        sel = select_pixels(m, x, 0, 12)
        assert np.array_equal(sel.frozen, np.zeros(12))
        assert sorted(sel.selected) == sorted(x)
        assert np.array_equal(reconstruct(sel, sel.selected), x)

    def test_random_is_seeded(self):
        m = random_tanh_model(1)
        x = np.full(12, 0.5)
        a = select_pixels(m, x, 0, 5, "random", seed=42)
        b = select_pixels(m, x, 0, 5, "random", seed=42)
        c = select_pixels(m, x, 0, 5, "random", seed=43)
        assert np.array_equal(a.indices, b.indices)
        assert not np.array_equal(a.indices, c.indices)

    @pytest.mark.parametrize("k", [0, 13])
    def test_budget_out_of_range(self, k):
        with pytest.raises(UsageError, match="K"):
            select_pixels(random_tanh_model(0), np.full(12, 0.5), 0, k)

    def test_unknown_strategy(self):
        with pytest.raises(UsageError):
            select_pixels(random_tanh_model(0), np.full(12, 0.5), 0, 2, "saliency")

    def test_ties_break_to_lowest_index(self):
        scores = np.array([0.3, -0.5, 0.5, 0.1, 0.5])
        assert list(rank_pixels(scores, "ig-top", 3)) == [1, 2, 4]
        assert list(rank_pixels(np.zeros(5), "ig-bottom", 2)) == [0, 1]


class TestReconstruct:
    def test_values_zero(self):
        x = np.array([0.1, 0.2, 0.3, 0.4])
        sel = selection_from_indices(x, [1, 3])
        np.testing.assert_array_equal(reconstruct(sel, np.zeros(2)), [0.1, 0.0, 0.3, 0.0])

    def test_single_pixel(self):
        x = np.array([0.1, 0.2, 0.3])
        out = reconstruct(selection_from_indices(x, [0]), [0.5])
        np.testing.assert_array_equal(out, [0.5, 0.2, 0.3])

    def test_length_mismatch(self):
        sel = selection_from_indices(np.zeros(3), [0, 1])
        with pytest.raises(UsageError):
            reconstruct(sel, [0.5])


@st.composite
def image_and_indices(draw):
    n = draw(st.integers(2, 40))
    x = draw(arrays(np.float64, n, elements=st.floats(0, 1)))
    k = draw(st.integers(1, n))
    idx = draw(st.permutations(range(n)))[:k]
    return x, idx


class TestProperties:
    @settings(max_examples=150, deadline=None)
    @given(image_and_indices())
    def test_partition(self, data):
        x, idx = data
        sel = selection_from_indices(x, idx)
        assert np.all(sel.frozen[sel.indices] == 0)
        assert np.array_equal(reconstruct(sel, sel.selected), x)

    @settings(max_examples=150, deadline=None)
    @given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-10, 10)), st.data())
    def test_top_ordering(self, scores, data):
        k = data.draw(st.integers(1, scores.size))
        top = rank_pixels(scores, "ig-top", k)
        rest = np.setdiff1d(np.arange(scores.size), top)
        if rest.size:
            assert np.abs(scores[top]).min() >= np.abs(scores[rest]).max()

    @settings(max_examples=150, deadline=None)
    @given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-10, 10), unique=True), st.data())
    def test_top_bottom_disjoint(self, scores, data):
        if np.unique(np.abs(scores)).size != scores.size:
            return  # +a and -a share a magnitude; not a generic score vector
        k = data.draw(st.integers(1, scores.size // 2))
        top = rank_pixels(scores, "ig-top", k)
        bottom = rank_pixels(scores, "ig-bottom", k)
        assert not set(top) & set(bottom)
