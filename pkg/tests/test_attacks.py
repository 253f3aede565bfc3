import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import central_difference, linear_model, max_rel_error, random_tanh_model
from lpbfgs.attacks import (AttackConfig, attack_loss, classification_loss, cw_attack, fgsm_attack, from_w,
                            jsma_attack, jsma_saliency, lp_bfgs_attack, run_attack, to_w)
from lpbfgs.attribution import reconstruct, select_pixels, selection_from_indices
from lpbfgs.errors import RejectedInput, UsageError
from lpbfgs.model import forward_logits, log_softmax, predict


def eligible(toy, count):
    model, _, test = toy
    out = []
    for i in range(len(test.labels)):
        if predict(model, test.X[i]) == test.y[i]:
            out.append((test.X[i], int(test.y[i])))
        if len(out) == count:
            break
    return model, out


class TestAttackLoss:
    def test_unperturbed_distance_is_zero(self):
        m = random_tanh_model(0)
        x = np.random.default_rng(0).uniform(0.1, 0.9, size=12)
        sel = selection_from_indices(x, [1, 4, 7])
        for loss in ("ce", "cw", "cwlog"):
            val, _ = attack_loss(m, sel, to_w(sel.selected), x, 1, loss, c=3.0)
            lhat = classification_loss(loss, 1)(forward_logits(m, x))[0]
            assert val == pytest.approx(3.0 * lhat, rel=1e-12, abs=1e-12)

    def test_clamp_branch(self):
        m = linear_model([[1.0, 0.0], [0.0, 1.0]])
        x = np.array([0.1, 0.9])  # class 1 wins by 0.8, so y = 0 is misclassified
        sel = selection_from_indices(x, [0, 1])
        val, grad = attack_loss(m, sel, to_w(x), x, 0, "cw", c=5.0, kappa=0.5)
        assert val == pytest.approx(-2.5, abs=1e-12)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    @pytest.mark.parametrize("loss", ["ce", "cw", "cwlog"])
    @pytest.mark.parametrize("seed", range(3))
    def test_finite_differences(self, loss, seed):
        m = random_tanh_model(seed)
        rng = np.random.default_rng(seed)
        x = rng.uniform(size=12)
        sel = selection_from_indices(x, rng.choice(12, 5, replace=False))
        w = rng.normal(scale=0.8, size=5)
        fun = lambda v: attack_loss(m, sel, v, x, 0, loss, c=2.0)[0]
        _, g = attack_loss(m, sel, w, x, 0, loss, c=2.0)
        assert max_rel_error(g, central_difference(fun, w)) < 1e-4

    def test_cwlog_equals_cw(self):
        m = random_tanh_model(5)
        z = forward_logits(m, np.full(12, 0.4))
        a = classification_loss("cw", 2)(z)
        b = classification_loss("cwlog", 2)(z)
        assert a[0] == pytest.approx(b[0], abs=1e-12)
        np.testing.assert_array_equal(a[1], b[1])

    def test_ce_is_true_class_log_probability(self):
        z = np.array([0.3, -1.0, 2.0])
        val, _ = classification_loss("ce", 0)(z)
        assert val == pytest.approx(log_softmax(z)[0], rel=1e-14)

    def test_unknown_loss(self):
        with pytest.raises(UsageError):
            classification_loss("hinge", 0)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(1e-6, 1 - 1e-6)))
    def test_substitution_round_trip(self, values):
        x = np.full(values.size + 3, 0.5)
        sel = selection_from_indices(x, np.arange(values.size))
        np.testing.assert_allclose(reconstruct(sel, from_w(to_w(values))), reconstruct(sel, values),
                                   rtol=0, atol=1e-12)


class TestConfig:
    @pytest.mark.parametrize("kwargs, word", [({"pixels": 0}, "K"), ({"iterations": 0}, "T"),
                                              ({"kappa": -1.0}, "kappa"), ({"delta": 0.5}, "delta"),
                                              ({"attack": "deepfool"}, "attack"), ({"c": -1.0}, "c")])
    def test_invariants(self, kwargs, word):
        with pytest.raises(UsageError, match=word):
            AttackConfig(**kwargs)

    def test_defaults(self):
        d = AttackConfig()
        assert (d.c, d.kappa, d.iterations, d.adam_step, d.eps_fgsm) == (1e3, 0.0, 200, 0.1, 1.0)


class TestLPBFGS:
    def test_linear_full_budget_near_boundary(self):
        w = np.array([0.6, -0.4, 0.3, 0.5, -0.2, 0.7])
        m = linear_model(np.vstack([w, np.zeros(6)]), np.array([0.0, 0.8]))
        x = np.array([0.5, 0.5, 0.5, 0.5, 0.5, 0.5]) + np.array([0.1, 0.0, 0.1, 0.1, 0.0, 0.1])
        margin = w @ x - 0.8
        assert 0 < margin < 0.2
        # oracle: the minimal L2 flip moves along -w by margin/|w|; it stays inside the box
        r_star = -(margin / (w @ w)) * w * 1.001
        assert np.all((x + r_star >= 0) & (x + r_star <= 1))
        assert predict(m, x + r_star) == 1
        cfg = AttackConfig(pixels=6, c=1e3)
        res = lp_bfgs_attack(m, x, 0, cfg)
        assert res.success and res.adv_label == 1

    def test_zero_c_returns_input(self, toy):
        model, items = eligible(toy, 3)
        for x, y in items:
            res = lp_bfgs_attack(model, x, y, AttackConfig(c=0.0, pixels=8))
            # only the atanh clamp delta separates the result from x
            assert not res.success
            np.testing.assert_allclose(res.adversarial, x, rtol=0, atol=1e-6)

    def test_support_and_box(self, toy):
        model, items = eligible(toy, 15)
        for i, (x, y) in enumerate(items):
            for strategy in ("ig-top", "random"):
                cfg = AttackConfig(pixels=8, strategy=strategy, seed=i)
                res = lp_bfgs_attack(model, x, y, cfg)
                changed = np.flatnonzero(res.adversarial != x)
                assert set(changed) <= set(res.indices) and len(changed) <= 8
                assert res.adversarial.min() >= 0 and res.adversarial.max() <= 1

    def test_rejects_misclassified(self):
        m = linear_model([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(RejectedInput):
            lp_bfgs_attack(m, np.array([0.1, 0.9]), 0, AttackConfig(pixels=2))

    def test_deterministic(self, toy):
        model, items = eligible(toy, 3)
        for x, y in items:
            for strategy in ("ig-top", "random"):
                cfg = AttackConfig(pixels=8, strategy=strategy, seed=3)
                a, b = lp_bfgs_attack(model, x, y, cfg), lp_bfgs_attack(model, x, y, cfg)
                assert np.array_equal(a.adversarial, b.adversarial)
                assert a.record(cfg) | {"time_ms": 0} == b.record(cfg) | {"time_ms": 0}

    def test_report_trace(self, toy):
        model, items = eligible(toy, 1)
        reports = []
        res = lp_bfgs_attack(model, *items[0], AttackConfig(pixels=8), report=reports)
        assert len(reports[0].trace) == reports[0].iterations == res.iterations


class TestFGSM:
    def test_zero_eps(self, toy):
        model, items = eligible(toy, 5)
        for x, y in items:
            sel = select_pixels(model, x, y, 8)
            res = fgsm_attack(model, x, y, sel, 0.0)
            assert np.array_equal(res.adversarial, x) and not res.success

    def test_unit_eps_lands_on_corners(self, toy):
        model, items = eligible(toy, 5)
        for x, y in items:
            sel = select_pixels(model, x, y, 8)
            res = fgsm_attack(model, x, y, sel, 1.0)
            assert np.all(np.isin(res.adversarial[sel.indices], [0.0, 1.0]))
            rest = np.setdiff1d(np.arange(x.size), sel.indices)
            assert np.array_equal(res.adversarial[rest], x[rest])

    @pytest.mark.parametrize("seed", range(10))
    def test_linear_closed_form(self, seed):
        rng = np.random.default_rng(seed)
        W = rng.normal(size=(2, 10))
        x = rng.uniform(size=10)
        y = int(np.argmax(W @ x))
        dw = W[y] - W[1 - y]
        sel = selection_from_indices(x, np.arange(10))
        for eps in (0.05, 0.1, 0.3):
            # -log p_y increases along -sign(w_y - w_other)
            x_hat = np.clip(x - eps * np.sign(dw), 0, 1)
            flipped = dw @ x_hat < 0 if y == 0 else dw @ x_hat <= 0
            res = fgsm_attack(linear_model(W), x, y, sel, eps)
            np.testing.assert_allclose(res.adversarial, x_hat, rtol=0, atol=1e-15)
            assert res.success == bool(flipped)


class TestCW:
    def test_loss_matches_attack_loss(self, toy):
        model, items = eligible(toy, 1)
        x, y = items[0]
        sel = select_pixels(model, x, y, 8)
        seen = []
        cfg = AttackConfig(attack="cw", pixels=8, iterations=3, loss="ce")

        import lpbfgs.attacks as mod
        orig = mod.adam_minimize

        def spy(fun, w0, **kw):
            w = w0 + 0.1
            seen.append((fun(w)[0], attack_loss(model, sel, w, x, y, "cw", cfg.c, cfg.kappa)[0]))
            return orig(fun, w0, **kw)

        mod.adam_minimize = spy
        try:
            cw_attack(model, x, y, cfg, sel)
        finally:
            mod.adam_minimize = orig
        assert seen[0][0] == seen[0][1]

    def test_zero_c_returns_input(self, toy):
        model, items = eligible(toy, 2)
        for x, y in items:
            res = cw_attack(model, x, y, AttackConfig(attack="cw", c=0.0, pixels=8, iterations=20))
            np.testing.assert_allclose(res.adversarial, x, rtol=0, atol=1e-6)

    def test_support_matches_lpbfgs(self, toy):
        model, items = eligible(toy, 10)
        for x, y in items:
            sel = select_pixels(model, x, y, 8)
            a = cw_attack(model, x, y, AttackConfig(attack="cw", pixels=8), sel)
            b = lp_bfgs_attack(model, x, y, AttackConfig(pixels=8), sel)
            for res in (a, b):
                assert set(np.flatnonzero(res.adversarial != x)) <= set(sel.indices)
                assert 0 <= res.adversarial.min() and res.adversarial.max() <= 1


class TestJSMA:
    def test_all_ones_fails_immediately(self):
        m = linear_model([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
        res = jsma_attack(m, np.ones(3), 0, 1, max_pixels=6)
        assert not res.success and res.iterations == 0
        assert np.array_equal(res.adversarial, np.ones(3))

    def test_zero_saliency_makes_no_progress(self):
        m = linear_model([[1.0, 1.0, 1.0], [-1.0, -2.0, -0.5]])
        x = np.full(3, 0.2)
        J = np.array([[1.0, 1.0, 1.0], [-1.0, -2.0, -0.5]])
        assert np.array_equal(jsma_saliency(J, 1), np.zeros(3))
        res = jsma_attack(m, x, 0, 1, max_pixels=6)
        assert np.array_equal(res.adversarial, x) and not res.success

    def test_saliency_product_form(self):
        J = np.array([[-1.0, 0.5, -2.0], [2.0, 1.0, -1.0]])
        np.testing.assert_array_equal(jsma_saliency(J, 1), [2.0, 0.0, 0.0])

    def test_budget_respected(self, toy):
        model, items = eligible(toy, 20)
        for i, (x, y) in enumerate(items):
            for k in (4, 8, 9):
                res = jsma_attack(model, x, y, 1 - y, k)
                assert np.count_nonzero(res.adversarial != x) <= k
                assert res.iterations <= k // 2
                assert res.adversarial.max() <= 1.0

    def test_target_must_differ(self, toy):
        model, items = eligible(toy, 1)
        x, y = items[0]
        with pytest.raises(UsageError):
            jsma_attack(model, x, y, y, 8)


class TestDispatch:
    @pytest.mark.parametrize("attack", ["lpbfgs", "fgsm", "cw", "jsma"])
    def test_records_are_deterministic(self, toy, attack):
        model, items = eligible(toy, 2)
        cfg = AttackConfig(attack=attack, pixels=8, iterations=50)
        for i, (x, y) in enumerate(items):
            a = run_attack(model, x, y, cfg, index=i).record(cfg)
            b = run_attack(model, x, y, cfg, index=i).record(cfg)
            assert a | {"time_ms": 0} == b | {"time_ms": 0}
            assert set(a) == {"attack", "loss", "K", "strategy", "success", "orig_label", "adv_label",
                              "confidence", "l0", "l1", "l2", "linf", "iterations", "time_ms", "seed"}
            assert a["l0"] <= 8

    def test_inputs_not_mutated(self, toy):
        model, items = eligible(toy, 1)
        x, y = items[0]
        keep = x.copy()
        for attack in ("lpbfgs", "fgsm", "cw", "jsma"):
            run_attack(model, x, y, AttackConfig(attack=attack, pixels=8, iterations=20))
        assert np.array_equal(x, keep)
