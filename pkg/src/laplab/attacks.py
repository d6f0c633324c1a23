"""Input-space adversarial perturbations: the single-step FGSM family,
multi-step PGD, and robust-accuracy evaluation.

Attacks are pure given (seed, net, batch, cfg). Perturbations are returned
as deltas so callers can inspect or re-apply them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .util import per_example_ce, subrng

FGSM_VARIANTS = ("v-fgsm", "r-fgsm", "n-fgsm")
VARIANTS = FGSM_VARIANTS + ("pgd", "none")

# noise-init scale (multiple of epsilon) per single-step variant
_INIT_SCALE = {"v-fgsm": 0, "r-fgsm": 1, "n-fgsm": 2}


def default_alpha(variant: str, epsilon: float) -> float:
    """Documented step sizes: 1.25 eps for r-fgsm, eps for v/n-fgsm, eps/4 for pgd."""
    variant = variant.lower()
    if variant == "r-fgsm":
        return 1.25 * epsilon
    if variant == "pgd":
        return epsilon / 4.0
    return epsilon


@dataclass
class AttackConfig:
    variant: str
    epsilon: float
    alpha: float | None = None
    init_scale: int | None = None
    steps: int = 10
    restarts: int = 1
    clamp_input: bool = True

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown attack variant {self.variant!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.alpha is None:
            self.alpha = default_alpha(self.variant, self.epsilon)
        if self.init_scale is None:
            self.init_scale = _INIT_SCALE.get(self.variant, 1)
        if self.variant in FGSM_VARIANTS and self.init_scale not in (0, 1, 2):
            raise ValueError("init_scale must be 0, 1 or 2 for the FGSM family")
        if self.variant == "n-fgsm" and self.alpha > self.epsilon:
            # keeps ||delta||_inf <= (init_scale+1)*eps without an eps-clamp
            raise ValueError("n-fgsm requires alpha <= epsilon")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")


def draw_init_noise(cfg: AttackConfig, shape, rng) -> np.ndarray:
    bound = cfg.init_scale * cfg.epsilon
    if bound == 0:
        return np.zeros(shape)
    return rng.uniform(-bound, bound, size=shape)


def fgsm_from_grad(images, eta, grad_x, cfg: AttackConfig) -> np.ndarray:
    """Finish a single-step attack from an already computed input gradient."""
    delta = eta + cfg.alpha * np.sign(grad_x)
    if cfg.variant in ("v-fgsm", "r-fgsm"):
        np.clip(delta, -cfg.epsilon, cfg.epsilon, out=delta)
    if cfg.clamp_input:
        delta = np.clip(images + delta, 0.0, 1.0) - images
    return delta


def fgsm(net, images, labels, cfg: AttackConfig, seed) -> np.ndarray:
    """One-step sign-gradient attack with variant-specific noise init."""
    if cfg.variant not in FGSM_VARIANTS:
        raise ValueError(f"fgsm requires an FGSM-family variant, got {cfg.variant!r}")
    rng = subrng(seed)
    eta = draw_init_noise(cfg, images.shape, rng)
    _, grads = net.loss_and_grads(images + eta, labels)
    return fgsm_from_grad(images, eta, grads["x"], cfg)


def pgd(net, images, labels, cfg: AttackConfig, seed, zero_init: bool = False) -> np.ndarray:
    """Projected sign-gradient descent in the L-inf ball, with restarts.

    x + delta is clamped to [0, 1] after the init and every step; across
    restarts the highest per-example loss wins, first restart on ties.
    """
    if cfg.variant != "pgd":
        raise ValueError(f"pgd requires variant 'pgd', got {cfg.variant!r}")
    eps = cfg.epsilon
    best_delta = np.zeros_like(images)
    best_loss = np.full(len(images), -np.inf)
    for r in range(cfg.restarts):
        rng = subrng(seed, 7, r)
        if zero_init or eps == 0:
            delta = np.zeros_like(images)
        else:
            delta = rng.uniform(-eps, eps, size=images.shape)
        delta = np.clip(images + delta, 0.0, 1.0) - images
        for _ in range(cfg.steps):
            _, grads = net.loss_and_grads(images + delta, labels)
            delta = np.clip(delta + cfg.alpha * np.sign(grads["x"]), -eps, eps)
            delta = np.clip(images + delta, 0.0, 1.0) - images
        losses = per_example_ce(net.logits(images + delta), labels)
        better = losses > best_loss
        best_delta[better] = delta[better]
        best_loss[better] = losses[better]
    return best_delta


def attack_delta(net, images, labels, cfg: AttackConfig, seed) -> np.ndarray:
    if cfg.variant == "none":
        return np.zeros_like(images)
    if cfg.variant == "pgd":
        return pgd(net, images, labels, cfg, seed)
    return fgsm(net, images, labels, cfg, seed)


def evaluate(net, dataset: Dataset, cfg: AttackConfig, seed: int = 0,
             batch_size: int = 256) -> float:
    """Fraction of examples classified correctly on x + delta.

    variant "none" gives natural accuracy; argmax ties go to the lowest
    class index.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    correct = 0
    for bi, start in enumerate(range(0, len(dataset), batch_size)):
        x = dataset.images[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        delta = attack_delta(net, x, y, cfg, [seed, bi])
        preds = np.argmax(net.logits(x + delta), axis=1)
        correct += int((preds == y).sum())
    return correct / len(dataset)
