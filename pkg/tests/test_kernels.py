"""The numba-jit kernels and the pure-numpy fallback must be numerically
interchangeable; the env flag and runtime switch select between them."""

from __future__ import annotations

import subprocess
import sys

import numpy as np
import pytest

from refgame.neural import kernels


@pytest.fixture
def restore_backend():
    previous = kernels.get_backend()
    yield
    kernels.set_backend(previous)


def _gru_inputs(seed=0, T=40, H=16):
    rng = np.random.default_rng(seed)
    wx = rng.normal(size=(T, 3 * H))
    u = rng.normal(size=(3 * H, H)) * 0.2
    h0 = rng.normal(size=H) * 0.1
    dh = rng.normal(size=(T, H))
    return wx, u, h0, dh


@pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba not installed")
def test_gru_backends_agree(restore_backend):
    wx, u, h0, dh = _gru_inputs()
    kernels.set_backend("numpy")
    f_np = kernels.gru_forward(wx, u, h0)
    prev = np.vstack([h0[None], f_np[0][:-1]])
    b_np = kernels.gru_backward(u, prev, f_np[1], f_np[2], f_np[3], dh)
    kernels.set_backend("numba")
    f_nb = kernels.gru_forward(wx, u, h0)
    b_nb = kernels.gru_backward(u, prev, f_nb[1], f_nb[2], f_nb[3], dh)
    for a, b in zip(f_np, f_nb):
        assert np.allclose(a, b, atol=1e-13)
    for a, b in zip(b_np, b_nb):
        assert np.allclose(a, b, atol=1e-12)


@pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba not installed")
def test_crf_backends_agree(restore_backend):
    rng = np.random.default_rng(1)
    em = rng.normal(size=(12, 3))
    tr = rng.normal(size=(3, 3))
    st = rng.normal(size=3)
    results = {}
    for backend in ("numpy", "numba"):
        kernels.set_backend(backend)
        alpha, logz = kernels.crf_alphas(em, tr, st)
        beta = kernels.crf_betas(em, tr)
        path, score = kernels.crf_viterbi_path(em, tr, st)
        results[backend] = (alpha, logz, beta, np.asarray(path), score)
    a, b = results["numpy"], results["numba"]
    assert np.allclose(a[0], b[0], atol=1e-12)
    assert a[1] == pytest.approx(b[1], abs=1e-12)
    assert np.allclose(a[2], b[2], atol=1e-12)
    assert np.array_equal(a[3], b[3])
    assert a[4] == pytest.approx(b[4], abs=1e-12)


def test_env_flag_selects_numpy():
    out = subprocess.run(
        [sys.executable, "-c",
         "from refgame.neural import kernels; print(kernels.get_backend())"],
        env={"PATH": "/usr/bin:/bin", "REFGAME_NUMBA": "0"},
        capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"


@pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba not installed")
def test_env_flag_selects_numba():
    out = subprocess.run(
        [sys.executable, "-c",
         "from refgame.neural import kernels; print(kernels.get_backend())"],
        env={"PATH": "/usr/bin:/bin", "REFGAME_NUMBA": "1"},
        capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numba"


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.set_backend("gpu")


def test_benchmark_runs_small():
    from refgame.bench import format_rows, run_benchmark

    rows = run_benchmark(seq_len=10, hidden=8, repeats=2)
    table = format_rows(rows)
    assert "gru_forward" in table and "crf_viterbi" in table
    assert all(r.numpy_ms > 0 for r in rows)
