"""Investigative instruments for dissecting robustness collapse:
loss-landscape probes in input and per-layer weight space, kernel singular
spectra, and magnitude-based weight removal.

Every instrument is read-only with respect to the network it is handed;
mutation happens on clones.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, evaluate
from .data import Dataset
from .util import subrng, thread_count


@dataclass
class LandscapeGrid:
    subject: object          # "input" or an ordinal
    a: np.ndarray            # axis offsets, center exactly 0
    b: np.ndarray
    values: np.ndarray       # delta-loss matrix, values[i, j] at (a[i], b[j])
    direction_seed: int

    def mean_abs(self) -> float:
        return float(np.mean(np.abs(self.values)))

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("a,b,delta_loss\n")
            for i, av in enumerate(self.a):
                for j, bv in enumerate(self.b):
                    f.write(f"{av!r},{bv!r},{self.values[i, j]!r}\n")


def _axis(half_width: float, resolution: int) -> np.ndarray:
    if resolution < 3 or resolution % 2 == 0:
        raise ValueError("resolution must be an odd integer >= 3")
    half = resolution // 2
    return (np.arange(resolution) - half) * (half_width / half)


def _eval_rows(make_point, a, b) -> np.ndarray:
    """Fill the grid row by row; rows may run in parallel, each on its own
    evaluator (and hence its own network clone)."""
    values = np.empty((len(a), len(b)))

    def run_row(i):
        point = make_point()
        for j in range(len(b)):
            values[i, j] = point(a[i], b[j])

    workers = min(thread_count(), len(a))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_row, range(len(a))))
    else:
        for i in range(len(a)):
            run_row(i)
    return values


def landscape_input(model, images, labels, half_width: float, resolution: int,
                    seed: int) -> LandscapeGrid:
    """Delta-loss over a 2-D slice of input space spanned by two unit-norm
    random directions shared across the batch."""
    d1 = subrng(seed, 1).standard_normal(images.shape)
    d2 = subrng(seed, 2).standard_normal(images.shape)
    d1 /= np.linalg.norm(d1)
    d2 /= np.linalg.norm(d2)
    base = model.mean_loss(images, labels)
    a = _axis(half_width, resolution)
    b = _axis(half_width, resolution)

    def make_point():
        probe = model.clone() if hasattr(model, "clone") else model

        def point(av, bv):
            if av == 0.0 and bv == 0.0:
                return 0.0
            return probe.mean_loss(images + av * d1 + bv * d2, labels) - base

        return point

    return LandscapeGrid("input", a, b, _eval_rows(make_point, a, b), seed)


def landscape_layer(net, images, labels, ordinal: int, half_width: float,
                    resolution: int, seed: int) -> LandscapeGrid:
    """Delta-loss over a 2-D slice of one layer's weight space.

    Directions are norm-matched: rescaled to ||w_l||, so offset 1.0 means a
    100% relative weight change. Other layers stay untouched; the input
    network is never mutated (clones do the walking).
    """
    layer = net.layer(ordinal)
    wnorm = np.linalg.norm(layer.weight)
    dirs = []
    for tag in (1, 2):
        d = subrng(seed, tag, ordinal).standard_normal(layer.weight.shape)
        dnorm = np.linalg.norm(d)
        dirs.append(d * (wnorm / dnorm) if dnorm > 0 else np.zeros_like(d))
    d1, d2 = dirs
    base = net.clone().mean_loss(images, labels)
    a = _axis(half_width, resolution)
    b = _axis(half_width, resolution)

    def make_point():
        probe = net.clone()
        probe_layer = probe.layer(ordinal)
        w0 = probe_layer.weight.copy()

        def point(av, bv):
            if av == 0.0 and bv == 0.0:
                return 0.0
            probe_layer.weight[...] = w0 + av * d1 + bv * d2
            v = probe.mean_loss(images, labels) - base
            probe_layer.weight[...] = w0
            return v

        return point

    return LandscapeGrid(ordinal, a, b, _eval_rows(make_point, a, b), seed)


# ----------------------------------------------------------------------
# singular spectra


@dataclass
class SpectrumReport:
    ordinal: int
    singular_values: np.ndarray   # descending
    variance: float               # population variance of the values


def _one_sided_jacobi(m: np.ndarray, rel_tol: float = 1e-10,
                      max_sweeps: int = 60) -> np.ndarray:
    """Singular values via one-sided Jacobi rotations on the columns."""
    a = np.array(m.T if m.shape[0] < m.shape[1] else m, dtype=np.float64)
    n = a.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                ci = a[:, i]
                cj = a[:, j]
                apq = float(ci @ cj)
                app = float(ci @ ci)
                aqq = float(cj @ cj)
                denom = np.sqrt(app * aqq)
                if denom == 0.0 or abs(apq) <= rel_tol * denom:
                    continue
                rotated = True
                tau = (aqq - app) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau)) if tau != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                a[:, i], a[:, j] = c * ci - s * cj, s * ci + c * cj
        if not rotated:
            break
    sv = np.sqrt((a * a).sum(axis=0))
    sv.sort()
    return sv[::-1].copy()


def matricize(layer) -> np.ndarray:
    """Conv kernels flatten to (out_channels, in*kh*kw); dense stays as is."""
    w = layer.weight
    return w.reshape(w.shape[0], -1) if layer.kind == "conv2d" else w


def singular_spectrum(net, ordinal: int) -> SpectrumReport:
    m = matricize(net.layer(ordinal))
    sv = _one_sided_jacobi(m)[: min(m.shape)]
    return SpectrumReport(ordinal, sv, float(np.var(sv)))


def write_spectra_csv(reports, path) -> None:
    with open(path, "w") as f:
        f.write("ordinal,rank,sigma\n")
        for rep in reports:
            for rank, sv in enumerate(rep.singular_values, start=1):
                f.write(f"{rep.ordinal},{rank},{sv!r}\n")


# ----------------------------------------------------------------------
# weight removal


@dataclass
class PruneSpec:
    ordinal_range: tuple     # (lo, hi) inclusive
    selection: str           # "random" | "smallest" | "largest"
    rate: float
    seed: int = 0

    def __post_init__(self):
        if self.selection not in ("random", "smallest", "largest"):
            raise ValueError(f"unknown selection {self.selection!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")
        lo, hi = self.ordinal_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad ordinal range {self.ordinal_range}")


def prune(net, spec: PruneSpec):
    """Zero out the selected fraction of weights within the ordinal range
    on a clone; biases untouched, ties broken by flat index."""
    lo, hi = spec.ordinal_range
    if hi > net.num_ordinals:
        raise ValueError(f"ordinal range {spec.ordinal_range} exceeds L={net.num_ordinals}")
    pruned = net.clone()
    layers = [l for l in pruned.param_layers if lo <= l.ordinal <= hi]
    flat = np.concatenate([l.weight.ravel() for l in layers])
    total = flat.size
    k = int(np.floor(spec.rate * total + 0.5))
    if k > 0:
        if spec.selection == "random":
            chosen = subrng(spec.seed, 31).choice(total, size=k, replace=False)
        elif spec.selection == "smallest":
            chosen = np.argsort(np.abs(flat), kind="stable")[:k]
        else:
            chosen = np.argsort(-np.abs(flat), kind="stable")[:k]
        flat[chosen] = 0.0
        offset = 0
        for l in layers:
            size = l.weight.size
            l.weight[...] = flat[offset:offset + size].reshape(l.weight.shape)
            offset += size
    return pruned


@dataclass
class ParadoxReport:
    natural_acc: float
    fgsm_acc: float
    pgd_acc: float
    paradox_flag: bool


def paradox_report(net, dataset: Dataset, eps: float, pgd_steps: int = 10,
                   pgd_restarts: int = 1, seed: int = 0) -> ParadoxReport:
    """Evaluate the single-step vs multi-step accuracy split; the flag
    fires when FGSM defense is high while PGD robustness is near zero."""
    nat = evaluate(net, dataset, AttackConfig("none", 0.0), seed=seed)
    fg = evaluate(net, dataset, AttackConfig("v-fgsm", eps), seed=seed)
    pg = evaluate(net, dataset, AttackConfig("pgd", eps, steps=pgd_steps,
                                             restarts=pgd_restarts), seed=seed)
    return ParadoxReport(nat, fg, pg, bool(fg >= 0.5 and pg <= 0.05))
