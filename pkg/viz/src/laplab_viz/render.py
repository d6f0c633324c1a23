"""Render training-lab artifacts to image files.

Kinds: curves (metrics JSONL), surface (grid CSV), spectra (spectra CSV),
prune (prune-sweep JSON). Curve figures follow the natural-solid /
robust-dashed convention. Output bytes are stable across re-renders of the
same inputs.
"""

from __future__ import annotations

import argparse
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .schemas import (SchemaError, load_grid, load_metrics, load_prune_report,
                      load_spectra)

KINDS = ("curves", "surface", "spectra", "prune")


def _save(fig, out_path):
    # a bare metadata dict keeps matplotlib's version stamp out of the file,
    # so identical inputs produce identical bytes
    fig.savefig(out_path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def render_curves(paths, out_path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for path in paths:
        records = load_metrics(path)
        epochs = [r["epoch"] for r in records]
        label = str(path).rsplit("/", 1)[-1].replace(".metrics.jsonl", "")
        ax.plot(epochs, [r["nat_acc"] for r in records], "-", label=f"{label} natural")
        ax.plot(epochs, [r["pgd_acc"] for r in records], "--", label=f"{label} robust (PGD)")
        ax.plot(epochs, [r["fgsm_acc"] for r in records], ":", label=f"{label} FGSM")
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    _save(fig, out_path)


def render_surface(paths, out_path):
    n = len(paths)
    fig = plt.figure(figsize=(5 * n, 4))
    for i, path in enumerate(paths):
        a, b, values = load_grid(path)
        ax = fig.add_subplot(1, n, i + 1, projection="3d")
        aa, bb = np.meshgrid(a, b, indexing="ij")
        ax.plot_surface(aa, bb, values, cmap="viridis", linewidth=0)
        ax.set_xlabel("a")
        ax.set_ylabel("b")
        ax.set_zlabel("delta loss")
        ax.set_title(str(path).rsplit("/", 1)[-1], fontsize=8)
    _save(fig, out_path)


def render_spectra(paths, out_path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for path in paths:
        spectra = load_spectra(path)
        stem = str(path).rsplit("/", 1)[-1].replace(".csv", "")
        for ordinal in sorted(spectra):
            ax.plot(range(1, len(spectra[ordinal]) + 1), spectra[ordinal],
                    marker="o", markersize=2.5, linewidth=1,
                    label=f"{stem} layer {ordinal}")
    ax.set_xlabel("rank")
    ax.set_ylabel("singular value")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    _save(fig, out_path)


def render_prune(paths, out_path):
    fig, axes = plt.subplots(1, len(paths), figsize=(5 * len(paths), 4), squeeze=False)
    for ax, path in zip(axes[0], paths):
        report = load_prune_report(path)
        rates = [0.0] + [row["rate"] for row in report["sweep"]]
        base = report["base"]
        nat = [base["nat_acc"]] + [r["nat_acc"] for r in report["sweep"]]
        fgsm = [base["fgsm_acc"]] + [r["fgsm_acc"] for r in report["sweep"]]
        pgd = [base["pgd_acc"]] + [r["pgd_acc"] for r in report["sweep"]]
        ax.plot(rates, nat, "-", marker="o", label="natural")
        ax.plot(rates, fgsm, ":", marker="s", label="FGSM")
        ax.plot(rates, pgd, "--", marker="^", label="robust (PGD)")
        ax.set_xlabel("removal rate")
        ax.set_ylabel("test accuracy")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
    _save(fig, out_path)


RENDERERS = {"curves": render_curves, "surface": render_surface,
             "spectra": render_spectra, "prune": render_prune}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render", description="Render training-lab artifacts to figures.")
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("inputs", nargs="+", help="artifact files of the given kind")
    parser.add_argument("-o", "--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        RENDERERS[args.kind](args.inputs, args.out)
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
