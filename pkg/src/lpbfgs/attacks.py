"""LP-BFGS and baseline attacks (FGSM, C&W-L2 with Adam, JSMA).

LP-BFGS, C&W and FGSM only touch the pixels of a ``PixelSelection``. The
optimisation-based attacks work in the substituted variable
``w = atanh(2 x_sel - 1)`` so that ``0.5 (tanh(w) + 1)`` stays inside the box.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attribution import STRATEGIES, DEFAULT_IG_STEPS, PixelSelection, reconstruct, select_pixels
from .errors import RejectedInput, UsageError
from .model import Classifier, Objective, as_vector, log_softmax, logit_jacobian, softmax, \
    value_and_input_gradient, forward_logits
from .optim import adam_minimize, bfgs_minimize

ATTACKS = ("lpbfgs", "fgsm", "cw", "jsma")
LOSSES = ("ce", "cw", "cwlog")


@dataclass(frozen=True)
class AttackConfig:
    attack: str = "lpbfgs"
    loss: str = "cw"
    c: float = 1e3
    kappa: float = 0.0
    eps_fgsm: float = 1.0
    iterations: int = 200
    tolerance: float = 1e-6
    pixels: int = 20
    strategy: str = "ig-top"
    adam_step: float = 0.1
    seed: int = 0
    delta: float = 1e-6
    ig_steps: int = DEFAULT_IG_STEPS
    jsma_theta: float = 1.0
    max_step: Optional[float] = 2.0

    def __post_init__(self):
        if self.attack not in ATTACKS:
            raise UsageError(f"unknown attack {self.attack!r}; expected one of {ATTACKS}")
        if self.loss not in LOSSES:
            raise UsageError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.strategy not in STRATEGIES:
            raise UsageError(f"unknown selector {self.strategy!r}; expected one of {STRATEGIES}")
        if not self.c >= 0:
            raise UsageError(f"c must be >= 0, got {self.c}")
        if not self.kappa >= 0:
            raise UsageError(f"kappa must be >= 0, got {self.kappa}")
        if self.iterations < 1:
            raise UsageError(f"iterations T must be >= 1, got {self.iterations}")
        if self.pixels < 1:
            raise UsageError(f"pixel budget K must be >= 1, got {self.pixels}")
        if not 0 < self.delta < 0.5:
            raise UsageError(f"atanh clamp delta must lie in (0, 0.5), got {self.delta}")
        if self.ig_steps < 1:
            raise UsageError(f"ig_steps must be >= 1, got {self.ig_steps}")
        if self.max_step is not None and not self.max_step > 0:
            raise UsageError(f"max_step must be positive, got {self.max_step}")
        if self.tolerance < 0 or self.eps_fgsm < 0 or self.adam_step <= 0:
            raise UsageError("tolerance and eps_fgsm must be >= 0, adam step > 0")

    @property
    def loss_name(self) -> str:
        """Loss label used in reports; fixed for the baselines."""
        return {"lpbfgs": self.loss, "cw": "cw", "fgsm": "ce", "jsma": "none"}[self.attack]

    @property
    def strategy_name(self) -> str:
        return "none" if self.attack == "jsma" else self.strategy


@dataclass
class AttackResult:
    adversarial: np.ndarray
    success: bool
    orig_label: int
    adv_label: int
    confidence: float
    perturbation: np.ndarray
    iterations: int
    time_ms: float = 0.0
    indices: Optional[np.ndarray] = field(default=None, repr=False)

    def record(self, config: AttackConfig, pixels: Optional[int] = None) -> dict:
        from .metrics import perturbation_norms

        l0, l1, l2, linf = perturbation_norms(self.perturbation)
        return {
            "attack": config.attack,
            "loss": config.loss_name,
            "K": config.pixels if pixels is None else pixels,
            "strategy": config.strategy_name,
            "success": bool(self.success),
            "orig_label": int(self.orig_label),
            "adv_label": int(self.adv_label),
            "confidence": float(self.confidence),
            "l0": int(l0),
            "l1": float(l1),
            "l2": float(l2),
            "linf": float(linf),
            "iterations": int(self.iterations),
            "time_ms": float(self.time_ms),
            "seed": int(config.seed),
        }


def _finish(model, x, y, adv, iterations, t0, indices=None) -> AttackResult:
    logits = forward_logits(model, adv)
    label = int(np.argmax(logits))
    return AttackResult(adv, label != y, int(y), label, float(softmax(logits)[label]), adv - x, iterations,
                        (time.perf_counter() - t0) * 1e3, indices)


def _check_input(model, x, y):
    if not 0 <= y < model.classes:
        raise UsageError(f"label {y} outside [0, {model.classes})")
    if int(np.argmax(forward_logits(model, x))) != y:
        raise RejectedInput(f"model already misclassifies the input (label {y})")


# -- substituted-space loss ---------------------------------------------------------


def to_w(values, delta: float = 1e-6) -> np.ndarray:
    return np.arctanh(2.0 * np.clip(values, delta, 1.0 - delta) - 1.0)


def from_w(w) -> np.ndarray:
    return 0.5 * (np.tanh(w) + 1.0)


def classification_loss(kind: str, y: int, kappa: float = 0.0):
    """Return ``logits -> (value, d value / d logits)`` for one of the three losses.

    ce: log softmax_y. cw: max(Z_y - max_{i!=y} Z_i, -kappa). cwlog: the same
    margin on log-probabilities (equal to the logit margin up to rounding).
    """
    if kind == "ce":
        return Objective("log-prob", y)
    if kind not in ("cw", "cwlog"):
        raise UsageError(f"unknown loss {kind!r}; expected one of {LOSSES}")

    def margin(logits):
        z = log_softmax(logits) if kind == "cwlog" else logits
        others = z.copy()
        others[y] = -np.inf
        j = int(np.argmax(others))
        m = z[y] - z[j]
        g = np.zeros_like(logits)
        if m > -kappa:
            g[y], g[j] = 1.0, -1.0
            return float(m), g
        return -float(kappa), g

    return margin


_DIST_KINK = 1e-12


def attack_loss(model: Classifier, selection: PixelSelection, w, x, y: int, loss: str = "cw",
                c: float = 1e3, kappa: float = 0.0) -> tuple[float, np.ndarray]:
    """Total loss ``|R(w) - x|_2 + c * Lhat(R(w))`` and its gradient in w."""
    w = np.asarray(w, dtype=np.float64)
    xv = as_vector(x)
    t = np.tanh(w)
    adv = reconstruct(selection, 0.5 * (t + 1.0))
    r = adv - xv
    dist = float(np.linalg.norm(r))
    lhat, dx, _ = value_and_input_gradient(model, adv, classification_loss(loss, y, kappa))
    dx = c * dx
    # below rounding level |r| sits at its kink, where 0 is the subgradient
    if dist > _DIST_KINK:
        dx = dx + r / dist
    grad = dx[selection.indices] * 0.5 * (1.0 - t * t)
    return dist + c * lhat, grad


def _selection_for(model, x, y, config, selection):
    if selection is not None:
        return selection
    return select_pixels(model, x, y, config.pixels, config.strategy, seed=config.seed, steps=config.ig_steps)


def lp_bfgs_attack(model: Classifier, x, y: int, config: AttackConfig = AttackConfig(),
                   selection: Optional[PixelSelection] = None, report: Optional[list] = None) -> AttackResult:
    """Run BFGS on the selected pixels in tanh space.

    Among accepted iterates, the lowest-objective one that fools the model is
    returned; if none does, the final iterate is. When ``report`` is a list
    the BFGS ``MinimizeReport`` (with per-iteration trace) is appended to it.
    """
    t0 = time.perf_counter()
    xv = as_vector(x)
    _check_input(model, xv, y)
    sel = _selection_for(model, x, y, config, selection)
    w0 = to_w(sel.selected, config.delta)

    def fun(w):
        return attack_loss(model, sel, w, xv, y, config.loss, config.c, config.kappa)

    best = [np.inf, None]

    def keep_best(k, w, f, g):
        if f < best[0] and int(np.argmax(forward_logits(model, reconstruct(sel, from_w(w))))) != y:
            best[0], best[1] = f, w.copy()

    rep = bfgs_minimize(fun, w0, tol=config.tolerance, max_iter=config.iterations, max_step=config.max_step,
                        callback=keep_best, trace=report is not None)
    if report is not None:
        report.append(rep)
    w_hat = rep.x if best[1] is None else best[1]
    adv = reconstruct(sel, from_w(w_hat))
    return _finish(model, xv, y, adv, rep.iterations, t0, sel.indices)


def cw_attack(model: Classifier, x, y: int, config: AttackConfig = AttackConfig(attack="cw"),
              selection: Optional[PixelSelection] = None) -> AttackResult:
    """C&W-L2 restricted to the selection, minimised with Adam.

    Uses the cw margin loss regardless of ``config.loss``.
    """
    t0 = time.perf_counter()
    xv = as_vector(x)
    _check_input(model, xv, y)
    sel = _selection_for(model, x, y, config, selection)
    w0 = to_w(sel.selected, config.delta)

    def fun(w):
        return attack_loss(model, sel, w, xv, y, "cw", config.c, config.kappa)

    best = [np.inf, None]

    def keep_best(k, w, f, g):
        if f < best[0] and int(np.argmax(forward_logits(model, reconstruct(sel, from_w(w))))) != y:
            best[0], best[1] = f, w.copy()

    rep = adam_minimize(fun, w0, step=config.adam_step, iters=config.iterations, callback=keep_best)
    w_hat = rep.x if best[1] is None else best[1]
    adv = reconstruct(sel, from_w(w_hat))
    return _finish(model, xv, y, adv, rep.iterations, t0, sel.indices)


def fgsm_attack(model: Classifier, x, y: int, selection: PixelSelection, eps: float = 1.0) -> AttackResult:
    """One signed-gradient step of size ``eps`` on the selected pixels."""
    t0 = time.perf_counter()
    xv = as_vector(x)
    _check_input(model, xv, y)
    grad = value_and_input_gradient(model, xv, Objective("ce", y))[1]
    step = np.zeros_like(xv)
    step[selection.indices] = eps * np.sign(grad[selection.indices])
    adv = np.clip(xv + step, 0.0, 1.0)
    return _finish(model, xv, y, adv, 1, t0, selection.indices)


def jsma_saliency(jacobian: np.ndarray, target: int) -> np.ndarray:
    """Increase-direction saliency map from the logit Jacobian."""
    dt = jacobian[target]
    dother = jacobian.sum(axis=0) - dt
    s = dt * np.abs(dother)
    s[(dt < 0) | (dother > 0)] = 0.0
    return s


def jsma_attack(model: Classifier, x, y: int, target: int, max_pixels: int, theta: float = 1.0) -> AttackResult:
    """Targeted JSMA raising two salient pixels by ``theta`` per iteration.

    Runs at most ``max_pixels // 2`` iterations. ``success`` reports whether
    the prediction left ``y``, not whether it reached ``target``.
    """
    t0 = time.perf_counter()
    xv = as_vector(x)
    _check_input(model, xv, y)
    if target == y or not 0 <= target < model.classes:
        raise UsageError(f"JSMA target must be a class other than the true label {y}")
    adv = xv.copy()
    it = 0
    for it in range(1, max_pixels // 2 + 1):
        sal = jsma_saliency(logit_jacobian(model, adv), target)
        sal[adv >= 1.0] = 0.0
        order = np.argsort(-sal, kind="stable")[:2]
        order = order[sal[order] > 0]
        if order.size == 0:
            it -= 1
            break
        adv[order] = np.minimum(adv[order] + theta, 1.0)
        if int(np.argmax(forward_logits(model, adv))) == target:
            break
    return _finish(model, xv, y, adv, it, t0)


def jsma_target(model: Classifier, y: int, seed: int, index: int = 0) -> int:
    """Seeded random label different from ``y``."""
    rng = np.random.default_rng([seed, index])
    t = int(rng.integers(model.classes - 1))
    return t + 1 if t >= y else t


def run_attack(model: Classifier, x, y: int, config: AttackConfig, selection: Optional[PixelSelection] = None,
               index: int = 0) -> AttackResult:
    """Dispatch on ``config.attack``; computes the selection when one is needed and not given."""
    if config.attack == "jsma":
        return jsma_attack(model, x, y, jsma_target(model, y, config.seed, index), config.pixels,
                           config.jsma_theta)
    if selection is None:
        _check_input(model, as_vector(x), y)
        selection = _selection_for(model, x, y, config, None)
    if config.attack == "fgsm":
        return fgsm_attack(model, x, y, selection, config.eps_fgsm)
    if config.attack == "cw":
        return cw_attack(model, x, y, config, selection)
    return lp_bfgs_attack(model, x, y, config, selection)
