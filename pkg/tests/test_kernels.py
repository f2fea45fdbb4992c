"""The numba and numpy kernels must agree; the backward kernels must match finite differences."""
import os
import subprocess
import sys

import numpy as np
import pytest

from pantyping import kernels
from pantyping.encoder import lstm_step

BACKENDS = {
    "numpy": (kernels.lstm_forward_numpy, kernels.lstm_backward_numpy,
              kernels.path_product_forward_numpy, kernels.path_product_backward_numpy),
    "numba": (kernels.lstm_forward_numba, kernels.lstm_backward_numba,
              kernels.path_product_forward_numba, kernels.path_product_backward_numba),
}


def _lstm_case(rng, T=6, dw=4, dh=3):
    return (rng.normal(size=(T, dw)), rng.normal(scale=0.6, size=(4 * dh, dw + dh)),
            rng.normal(size=4 * dh), rng.normal(size=dh), rng.normal(size=dh))


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_lstm_forward_matches_step_function(backend, rng):
    X, W, b, h0, c0 = _lstm_case(rng)
    H, C, _ = BACKENDS[backend][0](X, W, b, h0, c0)
    h, c = h0, c0
    for t in range(X.shape[0]):
        h, c = lstm_step(X[t], h, c, W, b)
        np.testing.assert_allclose(H[t + 1], h, atol=1e-13)
        np.testing.assert_allclose(C[t + 1], c, atol=1e-13)


def test_backends_agree(rng):
    for _ in range(5):
        X, W, b, h0, c0 = _lstm_case(rng, T=int(rng.integers(1, 9)))
        out_np = kernels.lstm_forward_numpy(X, W, b, h0, c0)
        out_nb = kernels.lstm_forward_numba(X, W, b, h0, c0)
        for a, c in zip(out_np, out_nb):
            np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-14)
        H, C, G = out_np
        dh_last = rng.normal(size=h0.shape)
        back_np = kernels.lstm_backward_numpy(X, W, H, C, G, dh_last)
        back_nb = kernels.lstm_backward_numba(X, W, H, C, G, dh_last)
        for a, c in zip(back_np, back_nb):
            np.testing.assert_allclose(a, c, rtol=1e-11, atol=1e-13)

    E = rng.normal(size=(6, 5))
    idx = np.array([[0, 0, 0], [0, 1, 0], [0, 1, 2], [3, 4, 5]])
    lengths = np.array([1, 2, 3, 3])
    np.testing.assert_allclose(kernels.path_product_forward_numpy(E, idx, lengths),
                               kernels.path_product_forward_numba(E, idx, lengths), rtol=1e-14)
    dout = rng.normal(size=(4, 5))
    np.testing.assert_allclose(kernels.path_product_backward_numpy(E, idx, lengths, dout),
                               kernels.path_product_backward_numba(E, idx, lengths, dout),
                               rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_lstm_backward_finite_differences(backend, rng):
    fwd, bwd = BACKENDS[backend][:2]
    X, W, b, _, _ = _lstm_case(rng, T=4)
    dh = W.shape[0] // 4
    zero = np.zeros(dh)
    weights = rng.normal(size=dh)

    def loss():
        return float(weights @ fwd(X, W, b, zero, zero)[0][-1])

    H, C, G = fwd(X, W, b, zero, zero)
    dX, dW, db = bwd(X, W, H, C, G, weights)
    eps = 1e-6
    for arr, grad in ((X, dX), (W, dW), (b, db)):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            up = loss()
            arr[idx] = old - eps
            down = loss()
            arr[idx] = old
            assert abs((up - down) / (2 * eps) - grad[idx]) < 1e-8


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_path_product_handles_zero_entries(backend):
    fwd, bwd = BACKENDS[backend][2:]
    E = np.array([[0.0, 2.0], [3.0, 0.0], [5.0, 7.0]])
    idx = np.array([[0, 1, 2]])
    lengths = np.array([3])
    np.testing.assert_array_equal(fwd(E, idx, lengths), [[0.0, 0.0]])
    dE = bwd(E, idx, lengths, np.ones((1, 2)))
    # leave-one-out products: d/dE[0,0] = 3*5, d/dE[1,1] = 2*7
    np.testing.assert_array_equal(dE, [[15.0, 0.0], [0.0, 14.0], [0.0, 0.0]])


def test_active_backend_matches_env_flag():
    from pantyping import _jit

    expected = kernels.lstm_forward_numba if _jit.USE_NUMBA else kernels.lstm_forward_numpy
    assert kernels.lstm_forward is expected


def _backend_probe(value):
    env = {k: v for k, v in os.environ.items() if k != "PANTYPING_BACKEND"}
    if value is not None:
        env["PANTYPING_BACKEND"] = value
    code = "from pantyping import _jit, kernels; print(_jit.USE_NUMBA, kernels.lstm_forward.__name__)"
    return subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)


def test_numpy_flag_selects_fallback():
    proc = _backend_probe("numpy")
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.split() == ["False", "lstm_forward_numpy"]


def test_invalid_flag_rejected():
    proc = _backend_probe("fortran")
    assert proc.returncode != 0
    assert "PANTYPING_BACKEND" in proc.stderr
