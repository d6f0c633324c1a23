"""CLI exit codes, strict config validation, artifact and manifest output."""

import json

import numpy as np
import pytest

from laplab.cli import main
from laplab.network import build, desk_cnn_spec, save_checkpoint


def base_config(out_dir, epochs=1):
    return {
        "dataset": {"kind": "bars-vs-checkers", "n_train": 48, "n_test": 24,
                    "size": 16, "noise_std": 0.3, "seed": 5},
        "model": {"arch": "desk-cnn"},
        "train": {"epochs": epochs, "batch_size": 24,
                  "lr_schedule": {"kind": "cyclic", "max_lr": 0.05, "peak_epoch": 1},
                  "eval_pgd_steps": 2, "final_pgd_steps": 2, "final_pgd_restarts": 1},
        "attack": {"variant": "v-fgsm", "epsilon": "8/255"},
        "perturb": {"mode": "lap-joint", "beta": 0.01, "gamma": 0.3},
        "output": {"dir": str(out_dir), "run_name": "t"},
    }


def write_config(tmp_path, cfg):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_missing_config_exits_1(capsys):
    assert main(["train", "--config", "/nonexistent/config.json"]) == 1
    assert "config error" in capsys.readouterr().err


def test_invalid_json_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"dataset": }')
    assert main(["train", "--config", str(path)]) == 1
    assert "line 1" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = base_config(tmp_path / "out")
    cfg["attack"]["budget"] = 3
    assert main(["train", "--config", write_config(tmp_path, cfg), "--quiet"]) == 1
    assert "attack.budget" in capsys.readouterr().err


def test_epsilon_must_be_explicit(tmp_path, capsys):
    cfg = base_config(tmp_path / "out")
    del cfg["attack"]["epsilon"]
    assert main(["train", "--config", write_config(tmp_path, cfg), "--quiet"]) == 1
    assert "attack.epsilon" in capsys.readouterr().err


def test_beta_must_be_explicit_for_lap_modes(tmp_path, capsys):
    cfg = base_config(tmp_path / "out")
    del cfg["perturb"]["beta"]
    assert main(["train", "--config", write_config(tmp_path, cfg), "--quiet"]) == 1
    assert "perturb.beta" in capsys.readouterr().err


def test_train_writes_artifacts_and_manifest(tmp_path):
    out = tmp_path / "out"
    cfg = base_config(out)
    code = main(["train", "--config", write_config(tmp_path, cfg), "--seed", "3", "--quiet"])
    assert code == 0
    run_dir = out / "t"
    for name in ("metrics.jsonl", "final.lapc", "peak.lapc", "manifest.json"):
        assert (run_dir / name).exists(), name
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["seed"] == 3
    assert manifest["resolved_config"]["attack"]["epsilon"] == "8/255"
    assert "numpy" in manifest["versions"]
    lines = (run_dir / "metrics.jsonl").read_text().strip().split("\n")
    assert json.loads(lines[-1]).get("pgd50_10_acc") is not None


def test_attack_eval_eps_zero_equals_natural(tmp_path):
    net = build(desk_cnn_spec(), 7)
    ck = tmp_path / "net.lapc"
    save_checkpoint(net, ck)
    cfg = base_config(tmp_path / "o1")
    cfg["attack"] = {"variant": "pgd", "epsilon": 0.0, "steps": 3}
    code = main(["attack-eval", "--config", write_config(tmp_path, cfg),
                 "--checkpoint", str(ck), "--out", str(tmp_path / "o1"), "--quiet"])
    assert code == 0
    adv = json.loads((tmp_path / "o1" / "attack_eval.json").read_text())
    cfg["attack"] = {"variant": "none", "epsilon": 0}
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    main(["attack-eval", "--config", str(tmp_path / "config.json"),
          "--checkpoint", str(ck), "--out", str(tmp_path / "o2"), "--quiet"])
    nat = json.loads((tmp_path / "o2" / "attack_eval.json").read_text())
    assert adv["accuracy"] == nat["accuracy"]


def test_svd_and_landscape_outputs(tmp_path):
    net = build(desk_cnn_spec(), 1)
    ck = tmp_path / "net.lapc"
    save_checkpoint(net, ck)
    assert main(["svd", "--checkpoint", str(ck), "--out", str(tmp_path / "svd"), "--quiet"]) == 0
    spectra = (tmp_path / "svd" / "spectra.csv").read_text().strip().split("\n")
    assert spectra[0] == "ordinal,rank,sigma"
    assert any(line.startswith("4,") for line in spectra[1:])

    cfg = base_config(tmp_path / "lout")
    cfg["landscape"] = {"subjects": ["input", 1], "resolution": 3, "probe_count": 8,
                        "half_width_layer": 0.5}
    code = main(["landscape", "--config", write_config(tmp_path, cfg),
                 "--checkpoint", str(ck), "--out", str(tmp_path / "lout"), "--quiet"])
    assert code == 0
    assert (tmp_path / "lout" / "landscape_input.csv").exists()
    assert (tmp_path / "lout" / "landscape_layer1.csv").exists()


def test_prune_eval_and_bound_reports(tmp_path):
    net = build(desk_cnn_spec(), 2)
    ck = tmp_path / "net.lapc"
    save_checkpoint(net, ck)
    cfg = base_config(tmp_path / "p")
    cfg["prune"] = {"ordinal_range": [1, 2], "selection": "largest",
                    "rates": [0.1], "pgd_steps": 2}
    code = main(["prune-eval", "--config", write_config(tmp_path, cfg),
                 "--checkpoint", str(ck), "--out", str(tmp_path / "p"), "--quiet"])
    assert code == 0
    rep = json.loads((tmp_path / "p" / "prune_eval.json").read_text())
    assert {"base", "sweep", "epsilon"} <= set(rep)
    assert rep["sweep"][0]["rate"] == 0.1

    cfg = base_config(tmp_path / "b")
    cfg["bound"] = {"delta": 0.05, "tries": 2}
    code = main(["bound", "--config", write_config(tmp_path, cfg),
                 "--checkpoint", str(ck), "--out", str(tmp_path / "b"), "--quiet"])
    assert code == 0
    rep = json.loads((tmp_path / "b" / "bound.json").read_text())
    assert rep["total_bound"] >= rep["empirical_loss"]
    assert rep["complexity_term"] > 0


def test_checkpoint_error_is_runtime_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.lapc"
    bad.write_bytes(b"NOPE" + b"\x00" * 16)
    assert main(["svd", "--checkpoint", str(bad), "--out", str(tmp_path), "--quiet"]) == 2
    assert "BadMagicError" in capsys.readouterr().err
