"""Shared helpers: deterministic sub-seeded RNG streams, per-example
losses, and the thread-cap environment knob."""

from __future__ import annotations

import os

import numpy as np


def subrng(*parts) -> np.random.Generator:
    """Deterministic generator keyed by a tuple of integer tags.

    Nested sequences are flattened, values reduced mod 2**32 so negative
    tags stay valid SeedSequence entropy.
    """
    flat = []

    def put(p):
        if isinstance(p, (list, tuple)):
            for v in p:
                put(v)
        else:
            flat.append(int(p) % (2 ** 32))

    put(parts)
    return np.random.default_rng(flat)


def per_example_ce(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Softmax cross-entropy per example, computed from raw logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    m = z.max(axis=1, keepdims=True)
    lse = (np.log(np.exp(z - m).sum(axis=1, keepdims=True)) + m).ravel()
    return lse - z[np.arange(len(y)), y]


def thread_count() -> int:
    """Parallelism cap from LAPLAB_THREADS; 0 or unset means auto."""
    raw = os.environ.get("LAPLAB_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        return os.cpu_count() or 1
    return n
