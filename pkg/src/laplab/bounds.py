"""Generalization-bound arithmetic for a layer-aware perturbation schedule:
the KL complexity proxy, the assembled bound, and an empirical estimate of
the worst-case perturbed-loss gap.

The bound's empirical loss is 0-1 error (bounded in [0, 1]); cross-entropy
variants are available for the smooth-gap measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import perturb
from .data import Dataset
from .perturb import PerturbSchedule, WeightDelta, compute_nu
from .util import per_example_ce, subrng


class BoundError(ValueError):
    pass


@dataclass
class BoundReport:
    empirical_loss: float
    worst_case_gap: float
    complexity_term: float
    total_bound: float
    n: int
    delta: float
    kl_proxy: float


def kl_proxy(schedule: PerturbSchedule) -> float:
    """Sum over ordinals of 1 / (2 * lambda_l**2)."""
    total = 0.0
    for l, lam in enumerate(schedule.lambdas, start=1):
        if lam == 0.0:
            raise BoundError(f"lambda is zero at ordinal {l}; the bound diverges")
        total += 1.0 / (2.0 * lam * lam)
    return total


def lap_bound(emp_loss: float, worst_gap: float, schedule: PerturbSchedule,
              n: int, delta: float) -> BoundReport:
    """Assemble the bound: empirical loss + worst-case gap + complexity,
    with complexity 4 * sqrt((kl_proxy + ln(2n/delta)) / n)."""
    if n < 1:
        raise BoundError("n must be at least 1")
    if not 0.0 < delta < 1.0:
        raise BoundError("delta must lie in (0, 1)")
    if worst_gap < 0:
        raise BoundError("worst_gap must be non-negative")
    kl = kl_proxy(schedule)
    complexity = 4.0 * np.sqrt((kl + np.log(2.0 * n / delta)) / n)
    return BoundReport(
        empirical_loss=emp_loss,
        worst_case_gap=worst_gap,
        complexity_term=float(complexity),
        total_bound=float(emp_loss + worst_gap + complexity),
        n=n, delta=delta, kl_proxy=kl)


def _dataset_loss(net, dataset: Dataset, kind: str, batch_size: int = 256) -> float:
    total = 0.0
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        logits = net.logits(x)
        if kind == "zero_one":
            total += float((np.argmax(logits, axis=1) != y).sum())
        else:
            total += float(per_example_ce(logits, y).sum())
    return total / len(dataset)


def _random_delta_like(nu: WeightDelta, rng) -> WeightDelta:
    """Random directions with the same per-ordinal norms as nu."""
    out = {}
    for ordinal, t in nu.tensors.items():
        d = rng.standard_normal(t.shape)
        dnorm = np.linalg.norm(d)
        target = np.linalg.norm(t)
        out[ordinal] = d * (target / dnorm) if dnorm > 0 else np.zeros_like(d)
    return WeightDelta(out)


def measure_worst_gap(net, dataset: Dataset, schedule: PerturbSchedule,
                      tries: int, seed: int, loss_kind: str = "zero_one") -> float:
    """Approximate the worst perturbed-loss gap: best of the
    gradient-direction perturbation and tries-1 random probes at the same
    per-layer norms. Returns max(0, best perturbed loss - base loss)."""
    if tries < 1:
        raise BoundError("tries must be at least 1")
    if loss_kind not in ("zero_one", "ce"):
        raise BoundError(f"unknown loss kind {loss_kind!r}")
    probe = net.clone()
    base = _dataset_loss(probe, dataset, loss_kind)
    _, grads = probe.loss_and_grads(dataset.images, dataset.labels)
    nu = compute_nu(probe.weight_grads(grads), probe, schedule, seed=seed)
    best = -np.inf
    for t in range(tries):
        cand = nu if t == 0 else _random_delta_like(nu, subrng(seed, 37, t))
        perturb.apply(probe, cand)
        best = max(best, _dataset_loss(probe, dataset, loss_kind))
        perturb.subtract(probe, cand)
    return max(0.0, best - base)
