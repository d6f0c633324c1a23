"""Acceptance battery: one test per criterion, each printing a PASS/FAIL
verdict line. The collapse/mitigation pipeline runs once per session and
its artifacts feed the forensic criteria."""

import numpy as np
import pytest

from laplab import repro
from laplab.attacks import AttackConfig
from laplab.autodiff import finite_diff_check
from laplab.bounds import kl_proxy, lap_bound
from laplab.data import gen_synthetic
from laplab.network import (BadMagicError, TruncatedError, VersionMismatchError,
                            build, desk_cnn_spec, load_checkpoint, save_checkpoint)
from laplab.perturb import PerturbSchedule, layer_lambda
from laplab.trainer import SgdState, train_step

from test_autodiff import random_checkable_graph
from test_bounds import COMPLEXITY_FIXTURE
from test_diagnostics import gram_singular_values
from test_perturb import LAMBDA_5_L17


def verdict(name, passed, detail=""):
    print(f"{name} {'PASS' if passed else 'FAIL'}{': ' + detail if detail else ''}")
    assert passed, f"{name}: {detail}"


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("co-repro")
    return repro.run_acceptance(out, log=lambda *a: None)


def test_ac1_gradient_correctness():
    worst = 0.0
    for seed in range(50):
        graph, bindings = random_checkable_graph(seed)
        report = finite_diff_check(graph, bindings, step=1e-4, tolerance=1e-6)
        worst = max(worst, report.max_rel_error)
        if not report.passed:
            verdict("AC-1", False, f"seed {seed}: rel err {report.max_rel_error:.3e}")
    verdict("AC-1", True, f"50 architectures, worst rel err {worst:.3e} <= 1e-6")


def test_ac2_lambda_schedule():
    exact_beta = all(layer_lambda(1, L, 0.05, 0.3) == 0.05 for L in (4, 17))
    lams = [layer_lambda(l, 17, 0.05, 0.3) for l in range(1, 18)]
    decreasing = all(a > b for a, b in zip(lams, lams[1:]))
    oracle = abs(layer_lambda(5, 17, 0.05, 0.3) - LAMBDA_5_L17) <= 1e-9
    verdict("AC-2", exact_beta and decreasing and oracle,
            f"lambda_5 = {lams[4]:.10f} vs oracle {LAMBDA_5_L17:.10f}")


def test_ac3_collapse_reproduction(pipeline):
    r = pipeline["AC-3"]
    verdict("AC-3", r["passed"], f"fired at epochs {r['fired']}, finals {r['final']}")


def test_ac4_lap_mitigation(pipeline):
    r = pipeline["AC-4"]
    verdict("AC-4", r["passed"],
            f"no collapse {r['lap_fired']}, pgd margins {r['pgd_margins']}")


def test_ac5_shortcut_pruning(pipeline):
    r = pipeline["AC-5"]
    verdict("AC-5", r["passed"],
            f"former fgsm drop {r['former_fgsm_drop']:.3f}, "
            f"latter drop {r['latter_fgsm_drop']:.3f}, "
            f"smallest-prune nat shift {r['smallest_nat_shift']:.3f}")


def test_ac6_singular_value_sharpening(pipeline):
    r = pipeline["AC-6"]
    verdict("AC-6", r["passed"], f"ordinal-1 variance ratio {r['ratio']:.2f} >= 1.5")


def test_ac7_landscape_sharpening(pipeline):
    r = pipeline["AC-7"]
    last = [k for k in r if k.startswith("ratio_ordinal") and k != "ratio_ordinal1"][0]
    verdict("AC-7", r["passed"],
            f"ordinal-1 x{r['ratio_ordinal1']:.2f}, {last} x{r[last]:.2f}")


def test_ac8_svd_oracle():
    rng = np.random.default_rng(0)
    from laplab.diagnostics import _one_sided_jacobi
    worst = 0.0
    for _ in range(100):
        m = rng.integers(2, 33)
        n = rng.integers(2, 33)
        a = rng.standard_normal((m, n))
        got = _one_sided_jacobi(a)[: min(m, n)]
        want = gram_singular_values(a)
        rel = np.abs(got - want).max() / max(want.max(), 1e-12)
        worst = max(worst, rel)
    verdict("AC-8", worst <= 1e-8, f"100 matrices, worst rel err {worst:.2e}")


def test_ac9_bound_arithmetic():
    sched = PerturbSchedule("awp-original", 0.5, 0.3, 4)
    rep = lap_bound(0.0, 0.0, sched, 1000, 0.05)
    complexity_ok = abs(rep.complexity_term - COMPLEXITY_FIXTURE) <= 1e-6
    kl_ok = abs(kl_proxy(sched) - 8.0) <= 1e-12
    verdict("AC-9", complexity_ok and kl_ok,
            f"complexity {rep.complexity_term:.6f} vs {COMPLEXITY_FIXTURE:.6f}")


def test_ac10_awp_identities():
    from laplab import perturb
    from laplab.perturb import compute_nu

    net_plain = build(desk_cnn_spec(), 8)
    net_awp = build(desk_cnn_spec(), 8)
    ds = gen_synthetic("bars-vs-checkers", 64, 16, 0.3, seed=30)
    cfg = AttackConfig("r-fgsm", 8 / 255)
    opt_a = SgdState(0.9, 5e-4)
    opt_b = SgdState(0.9, 5e-4)
    for step in range(5):
        train_step(net_plain, ds.images, ds.labels, cfg,
                   PerturbSchedule("none", 0.0, 1.0, 4), opt_a, 0.05, [3, step])
        train_step(net_awp, ds.images, ds.labels, cfg,
                   PerturbSchedule("awp-original", 0.0, 0.3, 4), opt_b, 0.05, [3, step])
    identical = all(np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
                    for a, b in zip(net_plain.param_layers, net_awp.param_layers))

    net = build(desk_cnn_spec(), 9)
    before = [l.weight.copy() for l in net.param_layers]
    _, grads = net.loss_and_grads(ds.images, ds.labels)
    nu = compute_nu(net.weight_grads(grads), net,
                    PerturbSchedule("awp-original", 0.05, 0.3, 4))
    perturb.apply(net, nu)
    perturb.subtract(net, nu)
    restored = all(np.array_equal(l.weight, w) for l, w in zip(net.param_layers, before))
    verdict("AC-10", identical and restored,
            f"beta-0 bit-identity {identical}, apply/subtract restore {restored}")


def test_ac11_checkpoint_persistence(tmp_path):
    net = build(desk_cnn_spec(), 11)
    path = tmp_path / "net.lapc"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    rng = np.random.default_rng(1)
    same = True
    for _ in range(100):
        x = rng.uniform(0, 1, (1, 1, 16, 16))
        if not np.array_equal(net.logits(x), loaded.logits(x)):
            same = False
            break

    raw = bytearray(path.read_bytes())
    bad_magic = bytes(b"XXXX") + bytes(raw[4:])
    (tmp_path / "bad_magic.lapc").write_bytes(bad_magic)
    bad_version = bytes(raw[:4]) + b"\x07" + bytes(raw[5:])
    (tmp_path / "bad_version.lapc").write_bytes(bad_version)
    (tmp_path / "trunc.lapc").write_bytes(bytes(raw[: len(raw) // 2]))
    errors_ok = True
    for name, exc in (("bad_magic", BadMagicError), ("bad_version", VersionMismatchError),
                      ("trunc", TruncatedError)):
        try:
            load_checkpoint(tmp_path / f"{name}.lapc")
            errors_ok = False
        except exc:
            pass
        except Exception:
            errors_ok = False
    verdict("AC-11", same and errors_ok,
            f"100 round-trip inputs bit-identical {same}, distinct errors {errors_ok}")


def test_ac12_retention_property(pipeline):
    r = pipeline["AC-12"]
    verdict("AC-12", r["passed"], f"retention fraction {r['retention']:.3f} >= 0.9")
