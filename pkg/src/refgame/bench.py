"""Benchmark the numba-jit kernels against the pure-numpy fallback on
training-shaped workloads (GRU sequence forward+backward, CRF forward and
Viterbi)."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .neural import kernels


@dataclass
class BenchRow:
    name: str
    numpy_ms: float
    numba_ms: float | None

    @property
    def speedup(self) -> float | None:
        if self.numba_ms is None or self.numba_ms == 0:
            return None
        return self.numpy_ms / self.numba_ms


def _time(fn, repeats: int) -> float:
    fn()  # warmup (and jit compile)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def run_benchmark(
    seq_len: int = 120, hidden: int = 256, embed: int = 256, repeats: int = 20, seed: int = 0
) -> list[BenchRow]:
    rng = np.random.default_rng(seed)
    wx = rng.normal(size=(seq_len, 3 * hidden))
    u = rng.normal(size=(3 * hidden, hidden)) * 0.05
    h0 = np.zeros(hidden)
    h_seq, z_seq, r_seq, hb_seq = kernels.gru_forward(wx, u, h0)
    h_prev = np.vstack([h0[None], h_seq[:-1]])
    dh = rng.normal(size=(seq_len, hidden))
    emissions = rng.normal(size=(seq_len, 3))
    trans = rng.normal(size=(3, 3))
    start = np.zeros(3)

    cases = {
        "gru_forward": lambda: kernels.gru_forward(wx, u, h0),
        "gru_backward": lambda: kernels.gru_backward(u, h_prev, z_seq, r_seq, hb_seq, dh),
        "crf_alphas": lambda: kernels.crf_alphas(emissions, trans, start),
        "crf_viterbi": lambda: kernels.crf_viterbi_path(emissions, trans, start),
    }
    rows = []
    previous = kernels.get_backend()
    try:
        for name, fn in cases.items():
            kernels.set_backend("numpy")
            numpy_ms = _time(fn, repeats)
            numba_ms = None
            if kernels.HAS_NUMBA:
                kernels.set_backend("numba")
                numba_ms = _time(fn, repeats)
            rows.append(BenchRow(name=name, numpy_ms=numpy_ms, numba_ms=numba_ms))
    finally:
        kernels.set_backend(previous)
    return rows


def format_rows(rows: list[BenchRow]) -> str:
    lines = [f"{'kernel':<14} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}"]
    for r in rows:
        numba = f"{r.numba_ms:10.3f}" if r.numba_ms is not None else f"{'n/a':>10}"
        speed = f"{r.speedup:7.1f}x" if r.speedup is not None else f"{'n/a':>8}"
        lines.append(f"{r.name:<14} {r.numpy_ms:10.3f} {numba} {speed}")
    return "\n".join(lines)
