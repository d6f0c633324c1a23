"""Adversarial weight perturbations: the layer-aware lambda schedule and
the perturbation generators it drives.

Per-layer magnitudes decrease from former to latter ordinals under the
lap-* modes; the awp-* ablation modes use a uniform magnitude. Norms are
taken layer-wise throughout, and biases never receive perturbation mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, fgsm
from .util import per_example_ce, subrng

MODES = ("none", "lap-joint", "lap-seq", "lap-random", "lap-inf",
         "awp-original", "awp-modified")
LAP_MODES = ("lap-joint", "lap-seq", "lap-random", "lap-inf")
AWP_MODES = ("awp-original", "awp-modified")


def layer_lambda(l: int, L: int, beta: float, gamma: float) -> float:
    """Per-ordinal perturbation strength beta * (1 - (ln l / ln(L+1))**gamma)."""
    if not 1 <= l <= L:
        raise ValueError(f"ordinal {l} outside 1..{L}")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return beta * (1.0 - (np.log(l) / np.log(L + 1)) ** gamma)


@dataclass
class PerturbSchedule:
    mode: str
    beta: float
    gamma: float
    num_layers: int
    lambdas: tuple = field(init=False)

    def __post_init__(self):
        self.mode = self.mode.lower()
        if self.mode not in MODES:
            raise ValueError(f"unknown perturbation mode {self.mode!r}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.num_layers < 1:
            raise ValueError("num_layers must be at least 1")
        L = self.num_layers
        if self.mode == "none":
            self.lambdas = tuple(0.0 for _ in range(L))
        elif self.mode in AWP_MODES:
            # ablation baselines perturb every layer at full strength
            self.lambdas = tuple(self.beta for _ in range(L))
        else:
            self.lambdas = tuple(layer_lambda(l, L, self.beta, self.gamma)
                                 for l in range(1, L + 1))

    def lam(self, ordinal: int) -> float:
        return self.lambdas[ordinal - 1]


@dataclass
class WeightDelta:
    """Per-ordinal weight-shaped perturbation tensors; no bias slots."""
    tensors: dict  # ordinal -> ndarray

    def __post_init__(self):
        self._pre_apply = None  # snapshot taken by apply, used for exact undo

    def norm(self, ordinal: int) -> float:
        return float(np.linalg.norm(self.tensors[ordinal]))


def _check_shapes(tensors: dict, net) -> None:
    for layer in net.param_layers:
        t = tensors.get(layer.ordinal)
        if t is None:
            raise ValueError(f"missing tensor for ordinal {layer.ordinal}")
        if t.shape != layer.weight.shape:
            raise ValueError(
                f"ordinal {layer.ordinal}: tensor shape {t.shape} != weight shape {layer.weight.shape}")


def compute_nu(param_grads: dict, net, schedule: PerturbSchedule,
               seed: int | None = None) -> WeightDelta:
    """Build the weight perturbation from per-ordinal weight gradients.

    lap-joint / lap-seq: lambda_l * (g_l / ||g_l||) * ||w_l||.
    lap-random: the gradient direction is replaced by a seeded standard
    normal draw. lap-inf: lambda_l * sign(g_l) * ||w_l|| / sqrt(numel),
    magnitude-matched to the L2 form. Zero-gradient layers get zero.
    """
    if schedule.mode not in LAP_MODES + AWP_MODES:
        raise ValueError(f"compute_nu undefined for mode {schedule.mode!r}")
    if schedule.mode == "lap-random" and seed is None:
        raise ValueError("lap-random requires a seed")
    _check_shapes(param_grads, net)
    out = {}
    for layer in net.param_layers:
        lam = schedule.lam(layer.ordinal)
        g = param_grads[layer.ordinal]
        wnorm = np.linalg.norm(layer.weight)
        if schedule.mode == "lap-random":
            g = subrng(seed, layer.ordinal).standard_normal(layer.weight.shape)
        if schedule.mode == "lap-inf":
            gnorm = np.linalg.norm(g)
            if lam == 0.0 or gnorm == 0.0:
                out[layer.ordinal] = np.zeros_like(layer.weight)
            else:
                out[layer.ordinal] = lam * np.sign(g) * wnorm / np.sqrt(g.size)
        else:
            gnorm = np.linalg.norm(g)
            if lam == 0.0 or gnorm == 0.0:
                out[layer.ordinal] = np.zeros_like(layer.weight)
            else:
                out[layer.ordinal] = lam * (g / gnorm) * wnorm
    return WeightDelta(out)


def apply(net, nu: WeightDelta) -> None:
    """w_l += nu_l in place; biases untouched. Needs exclusive access."""
    _check_shapes(nu.tensors, net)
    nu._pre_apply = {l.ordinal: l.weight.copy() for l in net.param_layers}
    for layer in net.param_layers:
        layer.weight += nu.tensors[layer.ordinal]


def subtract(net, nu: WeightDelta) -> None:
    """w_l -= nu_l in place; biases untouched.

    When the weights are bit-identical to the state an immediately
    preceding apply(net, nu) left behind, the original weights are restored
    exactly (float addition is not losslessly invertible); otherwise the
    subtraction is elementwise.
    """
    _check_shapes(nu.tensors, net)
    pre = nu._pre_apply
    if pre is not None and all(
            l.ordinal in pre and np.array_equal(l.weight, pre[l.ordinal] + nu.tensors[l.ordinal])
            for l in net.param_layers):
        for layer in net.param_layers:
            layer.weight[...] = pre[layer.ordinal]
    else:
        for layer in net.param_layers:
            layer.weight -= nu.tensors[layer.ordinal]
    nu._pre_apply = None


def perturbation_retention(net, images, labels, attack_cfg: AttackConfig,
                           schedule: PerturbSchedule, seed: int = 0) -> float:
    """Fraction of examples whose input perturbation stays loss-increasing
    after the weight perturbation is applied.

    delta is generated at the unperturbed weights; nu comes from the clean
    weight gradient. Both loss evaluations use the perturbed weights. The
    input network is left untouched (all work happens on a clone).
    """
    probe = net.clone()
    delta = fgsm(probe, images, labels, attack_cfg, seed)
    _, grads = probe.loss_and_grads(images, labels)
    nu = compute_nu(probe.weight_grads(grads), probe, schedule, seed=seed)
    apply(probe, nu)
    loss_adv = per_example_ce(probe.logits(images + delta), labels)
    loss_clean = per_example_ce(probe.logits(images), labels)
    return float(np.mean(loss_adv >= loss_clean))
