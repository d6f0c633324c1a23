"""Canned collapse-reproduction pipeline: the calibrated desk-scale recipe
behind the acceptance battery and the co-repro subcommand.

The constants below are recorded fixtures from a one-time calibration
sweep; they are the settings under which the collapse reliably appears and
the layer-aware mitigation reliably prevents it.
"""

from __future__ import annotations

import numpy as np

from . import perturb
from .attacks import AttackConfig, evaluate
from .data import gen_synthetic
from .diagnostics import (PruneSpec, landscape_layer, paradox_report, prune,
                          singular_spectrum, write_spectra_csv)
from .network import build, desk_cnn_spec, save_checkpoint
from .perturb import PerturbSchedule, perturbation_retention
from .trainer import CyclicLR, TrainConfig, train

# dataset fixtures
DATA_KIND = "bars-vs-checkers"
DATA_SIZE = 16
N_TRAIN = 2000
N_TEST = 500
NOISE_STD = 0.3
DATA_SEED = 100

# training fixtures
CO_EPS = 64 / 255           # calibrated collapse-inducing budget
EPOCHS = 30
BATCH_SIZE = 128
MAX_LR = 0.2
PEAK_EPOCH = 15
SEEDS = (1, 2, 3)

# mitigation fixtures (beta from a one-time sweep over {0.01, 0.03, 0.05, 0.1})
LAP_BETA = 0.05
GAMMA = 0.3

# diagnostics fixtures
PRUNE_RATES = (0.10, 0.15, 0.20)
LANDSCAPE_RESOLUTION = 13
LANDSCAPE_HALF_WIDTH = 1.0
PROBE_COUNT = 256
RETENTION_BETA = 0.05


def make_datasets():
    train_set = gen_synthetic(DATA_KIND, N_TRAIN, DATA_SIZE, NOISE_STD, seed=[DATA_SEED, 0])
    test_set = gen_synthetic(DATA_KIND, N_TEST, DATA_SIZE, NOISE_STD, seed=[DATA_SEED, 1])
    return train_set, test_set


def train_config(seed: int) -> TrainConfig:
    return TrainConfig(epochs=EPOCHS, batch_size=BATCH_SIZE,
                       lr_schedule=CyclicLR(MAX_LR, PEAK_EPOCH, EPOCHS), seed=seed)


def co_run(seed: int, train_set=None, test_set=None, log=None):
    """V-FGSM training at the collapse-inducing budget."""
    if train_set is None:
        train_set, test_set = make_datasets()
    net = build(desk_cnn_spec(), seed)
    return train(net, train_set, test_set, train_config(seed),
                 AttackConfig("v-fgsm", CO_EPS),
                 PerturbSchedule("none", 0.0, 1.0, net.num_ordinals), log=log)


def lap_run(seed: int, beta: float = LAP_BETA, train_set=None, test_set=None, log=None):
    """Identical setup with joint layer-aware weight perturbation."""
    if train_set is None:
        train_set, test_set = make_datasets()
    net = build(desk_cnn_spec(), seed)
    return train(net, train_set, test_set, train_config(seed),
                 AttackConfig("v-fgsm", CO_EPS),
                 PerturbSchedule("lap-joint", beta, GAMMA, net.num_ordinals), log=log)


def _epoch_log(tag, log):
    if log is None:
        return None
    return lambda r: log(f"  [{tag}] epoch {r.epoch:2d} nat {r.natural_acc:.3f} "
                         f"fgsm {r.fgsm_acc:.3f} pgd {r.pgd_acc:.3f}")


def run_acceptance(out_dir=None, seeds=SEEDS, log=None) -> dict:
    """Run the collapse/mitigation/diagnostics battery; returns one verdict
    record per criterion. Writes metrics, checkpoints, grids, and spectra
    under out_dir when given."""
    log = log or (lambda *a: None)
    train_set, test_set = make_datasets()
    results = {}

    co_histories = {}
    for seed in seeds:
        log(f"collapse run, seed {seed}")
        co_histories[seed] = co_run(seed, train_set, test_set, _epoch_log(f"co s{seed}", log))
        if out_dir:
            co_histories[seed].write_jsonl(out_dir / f"co_seed{seed}.metrics.jsonl")
            save_checkpoint(co_histories[seed].final_net, out_dir / f"co_seed{seed}_final.lapc")
            save_checkpoint(co_histories[seed].peak_net, out_dir / f"co_seed{seed}_peak.lapc")

    fired = {s: h.co_event for s, h in co_histories.items()}
    co_ok = sum(e is not None for e in fired.values()) >= 2
    post = {s: h.records[-1] for s, h in co_histories.items()}
    paradox_ok = all(h.co_event is None or
                     (h.records[h.co_event.epoch - 1].fgsm_acc >= 0.5 and
                      h.records[h.co_event.epoch - 1].pgd_acc <= 0.05)
                     for h in co_histories.values())
    results["AC-3"] = {
        "passed": bool(co_ok and paradox_ok),
        "fired": {s: (e.epoch if e else None) for s, e in fired.items()},
        "final": {s: {"nat": r.natural_acc, "fgsm": r.fgsm_acc, "pgd": r.pgd_acc}
                  for s, r in post.items()},
    }
    log(f"AC-3: fired {results['AC-3']['fired']}")

    lap_histories = {}
    for seed in seeds:
        log(f"mitigation run, seed {seed}")
        lap_histories[seed] = lap_run(seed, LAP_BETA, train_set, test_set,
                                      _epoch_log(f"lap s{seed}", log))
        if out_dir:
            lap_histories[seed].write_jsonl(out_dir / f"lap_seed{seed}.metrics.jsonl")
            save_checkpoint(lap_histories[seed].final_net, out_dir / f"lap_seed{seed}_final.lapc")
    lap_no_co = all(h.co_event is None for h in lap_histories.values())
    margins = {s: lap_histories[s].records[-1].pgd_acc - co_histories[s].records[-1].pgd_acc
               for s in seeds}
    results["AC-4"] = {
        "passed": bool(lap_no_co and all(m >= 0.10 for m in margins.values())),
        "pgd_margins": margins,
        "lap_fired": {s: (h.co_event.epoch if h.co_event else None)
                      for s, h in lap_histories.items()},
    }
    log(f"AC-4: margins {margins}")

    # pick a collapsed seed for the forensic criteria
    co_seed = next((s for s in seeds if co_histories[s].co_event is not None), seeds[0])
    co_hist = co_histories[co_seed]
    co_net = co_hist.final_net
    peak_net = co_hist.peak_net

    results["AC-5"] = _prune_criterion(co_net, test_set, out_dir, log)
    results["AC-6"] = _spectrum_criterion(co_net, peak_net, out_dir, log)
    results["AC-7"] = _landscape_criterion(co_net, peak_net, test_set, out_dir, log)

    lap_net = lap_histories[co_seed].final_net
    retention = perturbation_retention(
        lap_net, test_set.images, test_set.labels,
        AttackConfig("v-fgsm", CO_EPS),
        PerturbSchedule("lap-joint", RETENTION_BETA, GAMMA, lap_net.num_ordinals),
        seed=0)
    results["AC-12"] = {"passed": bool(retention >= 0.9), "retention": retention}
    log(f"AC-12: retention {retention:.3f}")
    return results


def _prune_criterion(co_net, test_set, out_dir, log) -> dict:
    base = paradox_report(co_net, test_set, CO_EPS)
    former = {}
    for rate in PRUNE_RATES:
        rep = paradox_report(prune(co_net, PruneSpec((1, 2), "largest", rate, seed=0)),
                             test_set, CO_EPS)
        former[rate] = rep
    # best rate in the allowed band: largest FGSM drop that doesn't hurt PGD
    usable = [r for r in PRUNE_RATES
              if former[r].pgd_acc >= base.pgd_acc and
              base.fgsm_acc - former[r].fgsm_acc >= 0.10]
    rate = usable[0] if usable else PRUNE_RATES[0]
    latter = paradox_report(prune(co_net, PruneSpec((3, 4), "largest", rate, seed=0)),
                            test_set, CO_EPS)
    small = paradox_report(prune(co_net, PruneSpec((1, 2), "smallest", 0.10, seed=0)),
                           test_set, CO_EPS)
    former_drop = base.fgsm_acc - former[rate].fgsm_acc
    latter_drop = base.fgsm_acc - latter.fgsm_acc
    nat_shift = abs(small.natural_acc - base.natural_acc)
    passed = (bool(usable) and nat_shift < 0.05 and latter_drop < former_drop)
    result = {"passed": bool(passed), "rate": rate,
              "base": vars(base), "former": vars(former[rate]),
              "latter": vars(latter), "small": vars(small),
              "former_fgsm_drop": former_drop, "latter_fgsm_drop": latter_drop,
              "smallest_nat_shift": nat_shift}
    log(f"AC-5: former drop {former_drop:.3f}, latter drop {latter_drop:.3f}, "
        f"nat shift {nat_shift:.3f}")
    return result


def _spectrum_criterion(co_net, peak_net, out_dir, log) -> dict:
    post = singular_spectrum(co_net, 1)
    pre = singular_spectrum(peak_net, 1)
    if out_dir:
        write_spectra_csv([singular_spectrum(co_net, l.ordinal)
                           for l in co_net.param_layers], out_dir / "spectra_post_co.csv")
        write_spectra_csv([singular_spectrum(peak_net, l.ordinal)
                           for l in peak_net.param_layers], out_dir / "spectra_pre_co.csv")
    ratio = post.variance / pre.variance if pre.variance > 0 else np.inf
    log(f"AC-6: ordinal-1 spectrum variance ratio {ratio:.2f}")
    return {"passed": bool(ratio >= 1.5), "variance_post": post.variance,
            "variance_pre": pre.variance, "ratio": float(ratio)}


def _landscape_criterion(co_net, peak_net, test_set, out_dir, log) -> dict:
    x = test_set.images[:PROBE_COUNT]
    y = test_set.labels[:PROBE_COUNT]
    sharp = {}
    for tag, net in (("post", co_net), ("pre", peak_net)):
        for ordinal in (1, co_net.num_ordinals):
            grid = landscape_layer(net, x, y, ordinal, LANDSCAPE_HALF_WIDTH,
                                   LANDSCAPE_RESOLUTION, seed=7)
            sharp[(tag, ordinal)] = grid.mean_abs()
            if out_dir:
                grid.write_csv(out_dir / f"landscape_{tag}_layer{ordinal}.csv")
    last = co_net.num_ordinals
    r1 = sharp[("post", 1)] / max(sharp[("pre", 1)], 1e-12)
    rl = sharp[("post", last)] / max(sharp[("pre", last)], 1e-12)
    log(f"AC-7: ordinal-1 sharpening x{r1:.2f}, ordinal-{last} x{rl:.2f}")
    return {"passed": bool(r1 >= 2.0 and rl < r1), "ratio_ordinal1": float(r1),
            f"ratio_ordinal{last}": float(rl),
            "mean_abs": {f"{t}{o}": v for (t, o), v in sharp.items()}}
