"""Adversarial-training orchestration: SGD with momentum and weight decay,
cyclic / piecewise learning-rate schedules, per-epoch robustness metrics,
and the catastrophic-overfitting detector.

All randomness derives from the run seed, so identical configs reproduce
identical histories and checkpoints bit-for-bit (wall-clock fields aside).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import perturb
from .attacks import AttackConfig, attack_delta, draw_init_noise, evaluate, fgsm_from_grad
from .data import Dataset, augment
from .perturb import PerturbSchedule, compute_nu
from .util import subrng


@dataclass
class CyclicLR:
    max_lr: float
    peak_epoch: float
    total_epochs: float


@dataclass
class PiecewiseLR:
    initial_lr: float
    milestones: tuple
    decay: float


def lr_at(t: float, schedule) -> float:
    """Learning rate at fractional epoch t; beyond the horizon it clamps
    to the schedule's final value."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if isinstance(schedule, CyclicLR):
        if t <= schedule.peak_epoch:
            return schedule.max_lr * t / schedule.peak_epoch
        if t >= schedule.total_epochs:
            return 0.0
        return schedule.max_lr * (schedule.total_epochs - t) / (schedule.total_epochs - schedule.peak_epoch)
    if isinstance(schedule, PiecewiseLR):
        passed = sum(1 for m in schedule.milestones if t >= m)
        return schedule.initial_lr / schedule.decay ** passed
    raise TypeError(f"unknown schedule {schedule!r}")


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    lr_schedule: object
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    use_augment: bool = True
    eval_pgd_steps: int = 10
    final_pgd_steps: int = 50
    final_pgd_restarts: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class MetricsRecord:
    epoch: int
    lr: float
    train_loss: float
    natural_acc: float
    fgsm_acc: float
    pgd_acc: float
    epoch_wall_seconds: float

    def to_json(self, **extra) -> str:
        obj = {"epoch": self.epoch, "lr": self.lr, "train_loss": self.train_loss,
               "nat_acc": self.natural_acc, "fgsm_acc": self.fgsm_acc,
               "pgd_acc": self.pgd_acc, "wall_s": self.epoch_wall_seconds}
        obj.update(extra)
        return json.dumps(obj)


@dataclass
class CoEvent:
    epoch: int
    peak_pgd_acc: float


@dataclass
class RunHistory:
    records: list = field(default_factory=list)
    co_event: CoEvent | None = None
    final_net: object = None
    peak_net: object = None
    peak_epoch: int = 0
    pgd50_10_acc: float | None = None

    def jsonl_lines(self) -> list:
        lines = []
        for i, r in enumerate(self.records):
            if i == len(self.records) - 1 and self.pgd50_10_acc is not None:
                lines.append(r.to_json(pgd50_10_acc=self.pgd50_10_acc))
            else:
                lines.append(r.to_json())
        return lines

    def write_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for line in self.jsonl_lines():
                f.write(line + "\n")


class SgdState:
    """Momentum buffers keyed by parameter leaf name."""

    def __init__(self, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def update(self, net, grads: dict, lr: float) -> None:
        for layer in net.param_layers:
            for suffix, arr in (("w", layer.weight), ("b", layer.bias)):
                key = f"{layer.name}.{suffix}"
                g = grads[key] + self.weight_decay * arr
                v = self.velocity.get(key)
                v = g if v is None else self.momentum * v + g
                self.velocity[key] = v
                arr -= lr * v


def train_step(net, images, labels, attack_cfg: AttackConfig,
               schedule: PerturbSchedule, opt: SgdState, lr: float,
               step_seed) -> float:
    """One optimizer step; returns the loss the update was taken on.

    Modes: "none" is plain AT; lap-joint shares a single backward between
    delta and nu; lap-seq spends an extra backward on nu; awp-original
    restores the perturbation after the update, awp-modified and the lap
    modes accumulate it.
    """
    mode = schedule.mode
    if mode == "none":
        delta = attack_delta(net, images, labels, attack_cfg, step_seed)
        loss, grads = net.loss_and_grads(images + delta, labels)
        opt.update(net, grads, lr)
        return loss

    if mode in ("lap-joint", "lap-random", "lap-inf"):
        if attack_cfg.variant not in ("v-fgsm", "r-fgsm", "n-fgsm"):
            raise ValueError(f"mode {mode!r} requires a single-step attack variant")
        rng = subrng(step_seed)
        eta = draw_init_noise(attack_cfg, images.shape, rng)
        _, grads = net.loss_and_grads(images + eta, labels)
        delta = fgsm_from_grad(images, eta, grads["x"], attack_cfg)
        nu = compute_nu(net.weight_grads(grads), net, schedule, seed=step_seed)
        perturb.apply(net, nu)
        loss, grads = net.loss_and_grads(images + delta, labels)
        opt.update(net, grads, lr)
        return loss

    if mode == "lap-seq":
        if attack_cfg.variant not in ("v-fgsm", "r-fgsm", "n-fgsm"):
            raise ValueError("lap-seq requires a single-step attack variant")
        rng = subrng(step_seed)
        eta = draw_init_noise(attack_cfg, images.shape, rng)
        _, grads = net.loss_and_grads(images + eta, labels)
        delta = fgsm_from_grad(images, eta, grads["x"], attack_cfg)
        _, grads = net.loss_and_grads(images + delta, labels)
        nu = compute_nu(net.weight_grads(grads), net, schedule, seed=step_seed)
        perturb.apply(net, nu)
        loss, grads = net.loss_and_grads(images + delta, labels)
        opt.update(net, grads, lr)
        return loss

    if mode in ("awp-original", "awp-modified"):
        delta = attack_delta(net, images, labels, attack_cfg, step_seed)
        _, grads = net.loss_and_grads(images + delta, labels)
        nu = compute_nu(net.weight_grads(grads), net, schedule, seed=step_seed)
        perturb.apply(net, nu)
        loss, grads = net.loss_and_grads(images + delta, labels)
        opt.update(net, grads, lr)
        if mode == "awp-original":
            perturb.subtract(net, nu)
        return loss

    raise ValueError(f"unknown perturbation mode {mode!r}")


def detect_co(records) -> CoEvent | None:
    """First epoch where multi-step robustness collapses while single-step
    defense stays high: pgd < 0.25 * running peak, pgd < 0.05, fgsm >= 0.5."""
    if hasattr(records, "records"):
        records = records.records
    if not records:
        raise ValueError("history has no records")
    peak = 0.0
    for r in records:
        peak = max(peak, r.pgd_acc)
        if r.pgd_acc < 0.25 * peak and r.pgd_acc < 0.05 and r.fgsm_acc >= 0.5:
            return CoEvent(r.epoch, peak)
    return None


def train(net, train_set: Dataset, test_set: Dataset, cfg: TrainConfig,
          attack_cfg: AttackConfig, schedule: PerturbSchedule,
          log=None) -> RunHistory:
    """Run the full training loop and per-epoch evaluation.

    Each epoch shuffles, augments, and steps through mini-batches, then
    measures natural, V-FGSM, and PGD accuracy on the test split.
    epoch_wall_seconds times the optimization phase only. A final
    PGD-50-10 evaluation lands in the history tail.
    """
    eps = attack_cfg.epsilon
    fgsm_eval = AttackConfig("v-fgsm", eps)
    pgd_eval = AttackConfig("pgd", eps, steps=cfg.eval_pgd_steps, restarts=1)
    opt = SgdState(cfg.momentum, cfg.weight_decay)
    history = RunHistory()
    n = len(train_set)
    num_batches = (n + cfg.batch_size - 1) // cfg.batch_size
    best_pgd = -1.0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = subrng(cfg.seed, 11, epoch).permutation(n)
        losses = []
        lr = 0.0
        for bi in range(num_batches):
            idx = order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]
            x = train_set.images[idx]
            y = train_set.labels[idx]
            if cfg.use_augment:
                x = augment(x, [cfg.seed, 13, epoch, bi])
            lr = lr_at(epoch - 1 + (bi + 1) / num_batches, cfg.lr_schedule)
            losses.append(train_step(net, x, y, attack_cfg, schedule, opt, lr,
                                     [cfg.seed, 17, epoch, bi]))
        wall = time.perf_counter() - t0
        rec = MetricsRecord(
            epoch=epoch, lr=lr, train_loss=float(np.mean(losses)),
            natural_acc=evaluate(net, test_set, AttackConfig("none", 0.0)),
            fgsm_acc=evaluate(net, test_set, fgsm_eval, seed=[cfg.seed, 19, epoch]),
            pgd_acc=evaluate(net, test_set, pgd_eval, seed=[cfg.seed, 23, epoch]),
            epoch_wall_seconds=wall)
        history.records.append(rec)
        if rec.pgd_acc > best_pgd:
            best_pgd = rec.pgd_acc
            history.peak_net = net.clone()
            history.peak_epoch = epoch
        if log:
            log(rec)
    history.final_net = net
    history.co_event = detect_co(history.records)
    final_cfg = AttackConfig("pgd", eps, steps=cfg.final_pgd_steps,
                             restarts=cfg.final_pgd_restarts)
    history.pgd50_10_acc = evaluate(net, test_set, final_cfg, seed=[cfg.seed, 29])
    return history
