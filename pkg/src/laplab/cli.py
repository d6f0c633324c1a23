"""Command-line entry point tying the library to config files, checkpoints,
and metrics artifacts.

Configs are strict JSON: unknown keys are rejected, and epsilon, beta, and
gamma must always be explicit. Exit codes: 0 success, 1 config error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, repro
from .attacks import AttackConfig, evaluate
from .bounds import lap_bound, measure_worst_gap
from .data import Dataset, gen_synthetic, load_csv, load_idx
from .diagnostics import (PruneSpec, landscape_input, landscape_layer,
                          paradox_report, prune, singular_spectrum,
                          write_spectra_csv)
from .network import NetSpec, build, desk_cnn_spec, load_checkpoint, save_checkpoint
from .perturb import MODES, PerturbSchedule
from .trainer import CyclicLR, PiecewiseLR, TrainConfig, train


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------
# strict config parsing


def _require(block: dict, path: str, key: str):
    if key not in block:
        raise ConfigError(f"{path}.{key}: missing required key")
    return block[key]


def _check_keys(block: dict, path: str, allowed) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: expected an object")
    for k in block:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}: unknown key")


def _num(value, path: str) -> float:
    """Numbers, or fraction strings like "64/255"."""
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str) and "/" in value:
        a, _, b = value.partition("/")
        try:
            return float(a) / float(b)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{path}: bad fraction {value!r}") from None
    raise ConfigError(f"{path}: expected a number, got {value!r}")


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(p) as f:
            cfg = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from None
    _check_keys(cfg, "config", {"dataset", "model", "train", "attack", "perturb",
                                "output", "landscape", "prune", "bound"})
    return cfg


def make_datasets(block: dict) -> tuple[Dataset, Dataset]:
    kind = _require(block, "dataset", "kind")
    if kind in ("bars-vs-checkers", "gaussian-blobs"):
        _check_keys(block, "dataset", {"kind", "n_train", "n_test", "size", "noise_std", "seed"})
        seed = int(_require(block, "dataset", "seed"))
        args = dict(kind=kind, size=int(_require(block, "dataset", "size")),
                    noise_std=_num(_require(block, "dataset", "noise_std"), "dataset.noise_std"))
        train_set = gen_synthetic(n=int(_require(block, "dataset", "n_train")),
                                  seed=[seed, 0], **args)
        test_set = gen_synthetic(n=int(_require(block, "dataset", "n_test")),
                                 seed=[seed, 1], **args)
        return train_set, test_set
    if kind == "idx":
        _check_keys(block, "dataset", {"kind", "train_images", "train_labels",
                                       "test_images", "test_labels", "num_classes"})
        nc = block.get("num_classes")
        return (load_idx(_require(block, "dataset", "train_images"),
                         _require(block, "dataset", "train_labels"), nc),
                load_idx(_require(block, "dataset", "test_images"),
                         _require(block, "dataset", "test_labels"), nc))
    if kind == "csv":
        _check_keys(block, "dataset", {"kind", "train_path", "test_path", "shape", "num_classes"})
        shape = tuple(block["shape"]) if "shape" in block else None
        nc = block.get("num_classes")
        return (load_csv(_require(block, "dataset", "train_path"), shape, nc),
                load_csv(_require(block, "dataset", "test_path"), shape, nc))
    raise ConfigError(f"dataset.kind: unknown kind {kind!r}")


def make_netspec(block: dict) -> NetSpec:
    _check_keys(block, "model", {"arch", "widths", "input_shape", "num_classes", "stages"})
    arch = block.get("arch")
    if arch == "desk-cnn":
        return desk_cnn_spec(
            input_shape=tuple(block.get("input_shape", (1, 16, 16))),
            num_classes=int(block.get("num_classes", 2)),
            widths=tuple(block.get("widths", (8, 16, 64))))
    if arch is not None:
        raise ConfigError(f"model.arch: unknown arch {arch!r}")
    spec = NetSpec(tuple(_require(block, "model", "input_shape")),
                   int(_require(block, "model", "num_classes")),
                   _require(block, "model", "stages"))
    try:
        spec.validate()
    except ValueError as e:
        raise ConfigError(f"model: {e}") from None
    return spec


def make_attack(block: dict) -> AttackConfig:
    _check_keys(block, "attack", {"variant", "epsilon", "alpha", "init_scale",
                                  "steps", "restarts", "clamp_input"})
    kwargs = dict(variant=_require(block, "attack", "variant"),
                  epsilon=_num(_require(block, "attack", "epsilon"), "attack.epsilon"))
    if "alpha" in block:
        kwargs["alpha"] = _num(block["alpha"], "attack.alpha")
    if "init_scale" in block:
        kwargs["init_scale"] = int(block["init_scale"])
    if "steps" in block:
        kwargs["steps"] = int(block["steps"])
    if "restarts" in block:
        kwargs["restarts"] = int(block["restarts"])
    if "clamp_input" in block:
        kwargs["clamp_input"] = bool(block["clamp_input"])
    try:
        return AttackConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(f"attack: {e}") from None


def make_schedule(block: dict, num_layers: int) -> PerturbSchedule:
    _check_keys(block, "perturb", {"mode", "beta", "gamma"})
    mode = _require(block, "perturb", "mode")
    if mode not in MODES:
        raise ConfigError(f"perturb.mode: unknown mode {mode!r}")
    if mode == "none":
        return PerturbSchedule("none", 0.0, 1.0, num_layers)
    beta = _num(_require(block, "perturb", "beta"), "perturb.beta")
    gamma = _num(_require(block, "perturb", "gamma"), "perturb.gamma")
    try:
        return PerturbSchedule(mode, beta, gamma, num_layers)
    except ValueError as e:
        raise ConfigError(f"perturb: {e}") from None


def make_train_config(block: dict, seed: int) -> TrainConfig:
    _check_keys(block, "train", {"epochs", "batch_size", "momentum", "weight_decay",
                                 "lr_schedule", "augment", "eval_pgd_steps",
                                 "final_pgd_steps", "final_pgd_restarts"})
    lrb = _require(block, "train", "lr_schedule")
    kind = _require(lrb, "train.lr_schedule", "kind")
    epochs = int(_require(block, "train", "epochs"))
    if kind == "cyclic":
        _check_keys(lrb, "train.lr_schedule", {"kind", "max_lr", "peak_epoch"})
        sched = CyclicLR(_num(_require(lrb, "train.lr_schedule", "max_lr"), "train.lr_schedule.max_lr"),
                         _num(_require(lrb, "train.lr_schedule", "peak_epoch"), "train.lr_schedule.peak_epoch"),
                         float(epochs))
    elif kind == "piecewise":
        _check_keys(lrb, "train.lr_schedule", {"kind", "initial_lr", "milestones", "decay"})
        sched = PiecewiseLR(_num(_require(lrb, "train.lr_schedule", "initial_lr"), "train.lr_schedule.initial_lr"),
                            tuple(_require(lrb, "train.lr_schedule", "milestones")),
                            _num(_require(lrb, "train.lr_schedule", "decay"), "train.lr_schedule.decay"))
    else:
        raise ConfigError(f"train.lr_schedule.kind: unknown kind {kind!r}")
    try:
        return TrainConfig(
            epochs=epochs,
            batch_size=int(_require(block, "train", "batch_size")),
            lr_schedule=sched,
            momentum=_num(block.get("momentum", 0.9), "train.momentum"),
            weight_decay=_num(block.get("weight_decay", 5e-4), "train.weight_decay"),
            seed=seed,
            use_augment=bool(block.get("augment", True)),
            eval_pgd_steps=int(block.get("eval_pgd_steps", 10)),
            final_pgd_steps=int(block.get("final_pgd_steps", 50)),
            final_pgd_restarts=int(block.get("final_pgd_restarts", 10)))
    except ValueError as e:
        raise ConfigError(f"train: {e}") from None


# ----------------------------------------------------------------------
# subcommands


def _out_dir(args, cfg) -> Path:
    if args.out:
        d = Path(args.out)
    elif cfg and "output" in cfg:
        block = cfg["output"]
        _check_keys(block, "output", {"dir", "run_name"})
        d = Path(_require(block, "output", "dir")) / block.get("run_name", "run")
    else:
        raise ConfigError("no output directory: pass --out or set output.dir")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_manifest(out: Path, command: str, cfg, seed) -> None:
    manifest = {
        "command": command,
        "seed": seed,
        "resolved_config": cfg,
        "versions": {"laplab": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else 0
    train_set, test_set = make_datasets(_require(cfg, "config", "dataset"))
    spec = make_netspec(_require(cfg, "config", "model"))
    net = build(spec, init_seed=seed)
    attack_cfg = make_attack(_require(cfg, "config", "attack"))
    schedule = make_schedule(_require(cfg, "config", "perturb"), net.num_ordinals)
    tcfg = make_train_config(_require(cfg, "config", "train"), seed)
    out = _out_dir(args, cfg)
    _write_manifest(out, "train", cfg, seed)

    def log(rec):
        if not args.quiet:
            print(f"epoch {rec.epoch:3d}  lr {rec.lr:.4f}  loss {rec.train_loss:.4f}  "
                  f"nat {rec.natural_acc:.3f}  fgsm {rec.fgsm_acc:.3f}  pgd {rec.pgd_acc:.3f}  "
                  f"({rec.epoch_wall_seconds:.1f}s)")

    history = train(net, train_set, test_set, tcfg, attack_cfg, schedule, log=log)
    history.write_jsonl(out / "metrics.jsonl")
    save_checkpoint(history.final_net, out / "final.lapc")
    save_checkpoint(history.peak_net, out / "peak.lapc")
    if not args.quiet:
        if history.co_event:
            print(f"catastrophic overfitting at epoch {history.co_event.epoch} "
                  f"(peak pgd {history.co_event.peak_pgd_acc:.3f})")
        print(f"final pgd-50-10 accuracy: {history.pgd50_10_acc:.3f}")
    return 0


def cmd_attack_eval(args) -> int:
    cfg = load_config(args.config)
    _, test_set = make_datasets(_require(cfg, "config", "dataset"))
    net = load_checkpoint(args.checkpoint)
    attack_cfg = make_attack(_require(cfg, "config", "attack"))
    seed = args.seed if args.seed is not None else 0
    acc = evaluate(net, test_set, attack_cfg, seed=seed)
    report = {"variant": attack_cfg.variant, "epsilon": attack_cfg.epsilon,
              "steps": attack_cfg.steps, "restarts": attack_cfg.restarts,
              "accuracy": acc}
    out = _out_dir(args, cfg)
    _write_manifest(out, "attack-eval", cfg, seed)
    with open(out / "attack_eval.json", "w") as f:
        json.dump(report, f, indent=2)
    if not args.quiet:
        print(json.dumps(report))
    return 0


def cmd_landscape(args) -> int:
    cfg = load_config(args.config)
    block = cfg.get("landscape", {})
    _check_keys(block, "landscape", {"subjects", "half_width_input", "half_width_layer",
                                     "resolution", "seed", "probe_count"})
    _, test_set = make_datasets(_require(cfg, "config", "dataset"))
    net = load_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else int(block.get("seed", 0))
    res = int(block.get("resolution", 21))
    hw_in = _num(block.get("half_width_input", 4 * 8 / 255), "landscape.half_width_input")
    hw_layer = _num(block.get("half_width_layer", 1.0), "landscape.half_width_layer")
    count = int(block.get("probe_count", 256))
    x = test_set.images[:count]
    y = test_set.labels[:count]
    out = _out_dir(args, cfg)
    _write_manifest(out, "landscape", cfg, seed)
    subjects = block.get("subjects", ["input"] + [l.ordinal for l in net.param_layers])
    for subject in subjects:
        if subject == "input":
            grid = landscape_input(net, x, y, hw_in, res, seed)
            grid.write_csv(out / "landscape_input.csv")
        else:
            grid = landscape_layer(net, x, y, int(subject), hw_layer, res, seed)
            grid.write_csv(out / f"landscape_layer{int(subject)}.csv")
        if not args.quiet:
            print(f"landscape {subject}: mean |dloss| = {grid.mean_abs():.6f}")
    return 0


def cmd_svd(args) -> int:
    net = load_checkpoint(args.checkpoint)
    reports = [singular_spectrum(net, l.ordinal) for l in net.param_layers]
    out = _out_dir(args, None) if args.out else Path(".")
    write_spectra_csv(reports, out / "spectra.csv")
    if not args.quiet:
        for rep in reports:
            print(f"ordinal {rep.ordinal}: top sigma {rep.singular_values[0]:.6f}  "
                  f"variance {rep.variance:.6f}")
    return 0


def cmd_prune_eval(args) -> int:
    cfg = load_config(args.config)
    block = cfg.get("prune", {})
    _check_keys(block, "prune", {"ordinal_range", "selection", "rates", "seed",
                                 "pgd_steps", "pgd_restarts"})
    _, test_set = make_datasets(_require(cfg, "config", "dataset"))
    attack_cfg = make_attack(_require(cfg, "config", "attack"))
    eps = attack_cfg.epsilon
    net = load_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else int(block.get("seed", 0))
    pgd_steps = int(block.get("pgd_steps", 10))
    pgd_restarts = int(block.get("pgd_restarts", 1))
    base = paradox_report(net, test_set, eps, pgd_steps, pgd_restarts, seed)
    sweep = []
    lo, hi = block.get("ordinal_range", [1, max(1, net.num_ordinals // 2)])
    selection = block.get("selection", "largest")
    for rate in block.get("rates", [0.05, 0.1, 0.15, 0.2]):
        pruned = prune(net, PruneSpec((int(lo), int(hi)), selection, float(rate), seed))
        rep = paradox_report(pruned, test_set, eps, pgd_steps, pgd_restarts, seed)
        sweep.append({"rate": float(rate), "selection": selection,
                      "ordinal_range": [int(lo), int(hi)],
                      "nat_acc": rep.natural_acc, "fgsm_acc": rep.fgsm_acc,
                      "pgd_acc": rep.pgd_acc})
    report = {"epsilon": eps,
              "base": {"nat_acc": base.natural_acc, "fgsm_acc": base.fgsm_acc,
                       "pgd_acc": base.pgd_acc, "paradox_flag": base.paradox_flag},
              "sweep": sweep}
    out = _out_dir(args, cfg)
    _write_manifest(out, "prune-eval", cfg, seed)
    with open(out / "prune_eval.json", "w") as f:
        json.dump(report, f, indent=2)
    if not args.quiet:
        print(json.dumps(report["base"]))
        for row in sweep:
            print(json.dumps(row))
    return 0


def cmd_bound(args) -> int:
    cfg = load_config(args.config)
    block = cfg.get("bound", {})
    _check_keys(block, "bound", {"delta", "tries", "seed", "n"})
    train_set, test_set = make_datasets(_require(cfg, "config", "dataset"))
    net = load_checkpoint(args.checkpoint)
    schedule = make_schedule(_require(cfg, "config", "perturb"), net.num_ordinals)
    seed = args.seed if args.seed is not None else int(block.get("seed", 0))
    delta = _num(_require(block, "bound", "delta"), "bound.delta")
    tries = int(_require(block, "bound", "tries"))
    n = int(block.get("n", len(train_set)))
    from .bounds import _dataset_loss
    emp01 = _dataset_loss(net, train_set, "zero_one")
    emp_ce = _dataset_loss(net, train_set, "ce")
    gap01 = measure_worst_gap(net, train_set, schedule, tries, seed, "zero_one")
    gap_ce = measure_worst_gap(net, train_set, schedule, tries, seed, "ce")
    rep = lap_bound(emp01, gap01, schedule, n, delta)
    payload = {"empirical_loss": rep.empirical_loss, "worst_case_gap": rep.worst_case_gap,
               "complexity_term": rep.complexity_term, "total_bound": rep.total_bound,
               "n": rep.n, "delta": rep.delta, "kl_proxy": rep.kl_proxy,
               "cross_entropy": {"empirical_loss": emp_ce, "worst_case_gap": gap_ce}}
    out = _out_dir(args, cfg)
    _write_manifest(out, "bound", cfg, seed)
    with open(out / "bound.json", "w") as f:
        json.dump(payload, f, indent=2)
    if not args.quiet:
        print(json.dumps(payload))
    return 0


def cmd_co_repro(args) -> int:
    out = Path(args.out) if args.out else Path("co-repro-out")
    out.mkdir(parents=True, exist_ok=True)
    seeds = tuple(args.seeds) if args.seeds else repro.SEEDS
    log = (lambda *a: None) if args.quiet else print
    results = repro.run_acceptance(out, seeds=seeds, log=log)
    with open(out / "summary.json", "w") as f:
        json.dump(results, f, indent=2, default=float)
    for name in sorted(results):
        verdict = "PASS" if results[name]["passed"] else "FAIL"
        print(f"{name} {verdict}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="laplab",
        description="Adversarial-training lab: single-step attacks, layer-aware "
                    "weight perturbation, and overfitting-collapse diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, checkpoint=False):
        if config:
            p.add_argument("--config", required=True, help="JSON experiment config")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="LAPC checkpoint path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("train", help="run a full training experiment"))
    common(sub.add_parser("attack-eval", help="evaluate a checkpoint under an attack"),
           checkpoint=True)
    common(sub.add_parser("landscape", help="export loss-landscape grids"), checkpoint=True)
    p_svd = sub.add_parser("svd", help="export per-layer singular spectra")
    common(p_svd, config=False, checkpoint=True)
    common(sub.add_parser("prune-eval", help="weight-removal sweep and paradox report"),
           checkpoint=True)
    common(sub.add_parser("bound", help="generalization-bound report"), checkpoint=True)
    p_co = sub.add_parser("co-repro", help="canned collapse-reproduction pipeline")
    p_co.add_argument("--seeds", type=int, nargs="*", default=None)
    p_co.add_argument("--out", default=None)
    p_co.add_argument("--quiet", action="store_true")

    args = parser.parse_args(argv)
    handlers = {"train": cmd_train, "attack-eval": cmd_attack_eval,
                "landscape": cmd_landscape, "svd": cmd_svd,
                "prune-eval": cmd_prune_eval, "bound": cmd_bound,
                "co-repro": cmd_co_repro}
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
