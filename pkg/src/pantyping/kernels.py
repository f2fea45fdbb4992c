"""Hot kernels: LSTM recurrence (forward + backprop through time) and
multiplicative path composition.

Each kernel has an explicit-loop numba implementation and a vectorised numpy
implementation with identical signatures.  The public names at the bottom of
the module are bound to one of the two according to ``PANTYPING_BACKEND``;
both variants stay importable for the equivalence tests and the benchmark.

Gate layout inside the stacked LSTM weight ``W`` (shape ``4*dh x (dw+dh)``)
is input, forget, output, candidate.
"""
import numpy as np

from ._jit import USE_NUMBA, njit


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------- numpy


def lstm_forward_numpy(X, W, b, h0, c0):
    T, dw = X.shape
    dh = h0.shape[0]
    H = np.zeros((T + 1, dh))
    C = np.zeros((T + 1, dh))
    G = np.zeros((T, 4 * dh))
    H[0] = h0
    C[0] = c0
    Wx = W[:, :dw]
    Wh = W[:, dw:]
    for t in range(T):
        a = Wx @ X[t] + Wh @ H[t] + b
        gi = _sigmoid(a[:dh])
        gf = _sigmoid(a[dh:2 * dh])
        go = _sigmoid(a[2 * dh:3 * dh])
        gg = np.tanh(a[3 * dh:])
        C[t + 1] = gf * C[t] + gi * gg
        H[t + 1] = go * np.tanh(C[t + 1])
        G[t, :dh] = gi
        G[t, dh:2 * dh] = gf
        G[t, 2 * dh:3 * dh] = go
        G[t, 3 * dh:] = gg
    return H, C, G


def lstm_backward_numpy(X, W, H, C, G, dh_last):
    T, dw = X.shape
    dh = H.shape[1]
    dX = np.zeros_like(X)
    dW = np.zeros_like(W)
    db = np.zeros(4 * dh)
    dh_next = dh_last.copy()
    dc_next = np.zeros(dh)
    Wx = W[:, :dw]
    Wh = W[:, dw:]
    da = np.empty(4 * dh)
    for t in range(T - 1, -1, -1):
        gi = G[t, :dh]
        gf = G[t, dh:2 * dh]
        go = G[t, 2 * dh:3 * dh]
        gg = G[t, 3 * dh:]
        tc = np.tanh(C[t + 1])
        dc = dc_next + dh_next * go * (1.0 - tc * tc)
        da[:dh] = dc * gg * gi * (1.0 - gi)
        da[dh:2 * dh] = dc * C[t] * gf * (1.0 - gf)
        da[2 * dh:3 * dh] = dh_next * tc * go * (1.0 - go)
        da[3 * dh:] = dc * gi * (1.0 - gg * gg)
        dW[:, :dw] += np.outer(da, X[t])
        dW[:, dw:] += np.outer(da, H[t])
        db += da
        dX[t] = Wx.T @ da
        dh_next = Wh.T @ da
        dc_next = dc * gf
    return dX, dW, db


def path_product_forward_numpy(E, idx, lengths):
    N = idx.shape[0]
    out = np.ones((N, E.shape[1]))
    for j in range(idx.shape[1]):
        live = lengths > j
        out[live] *= E[idx[live, j]]
    return out


def path_product_backward_numpy(E, idx, lengths, dout):
    N, L = idx.shape
    d = E.shape[1]
    # prefix[j] = product of the first j members, suffix[j] = product of members j..end
    prefix = np.ones((L + 1, N, d))
    for j in range(L):
        live = (lengths > j)[:, None]
        prefix[j + 1] = np.where(live, prefix[j] * E[idx[:, j]], prefix[j])
    suffix = np.ones((L + 1, N, d))
    for j in range(L - 1, -1, -1):
        live = (lengths > j)[:, None]
        suffix[j] = np.where(live, suffix[j + 1] * E[idx[:, j]], suffix[j + 1])
    dE = np.zeros_like(E)
    for j in range(L):
        live = lengths > j
        contrib = dout[live] * prefix[j][live] * suffix[j + 1][live]
        np.add.at(dE, idx[live, j], contrib)
    return dE


# ---------------------------------------------------------------- numba


@njit(cache=True)
def _sig(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    ex = np.exp(x)
    return ex / (1.0 + ex)


@njit(cache=True)
def lstm_forward_numba(X, W, b, h0, c0):
    T, dw = X.shape
    dh = h0.shape[0]
    H = np.zeros((T + 1, dh))
    C = np.zeros((T + 1, dh))
    G = np.zeros((T, 4 * dh))
    H[0, :] = h0
    C[0, :] = c0
    a = np.empty(4 * dh)
    for t in range(T):
        for r in range(4 * dh):
            acc = b[r]
            for k in range(dw):
                acc += W[r, k] * X[t, k]
            for k in range(dh):
                acc += W[r, dw + k] * H[t, k]
            a[r] = acc
        for k in range(dh):
            gi = _sig(a[k])
            gf = _sig(a[dh + k])
            go = _sig(a[2 * dh + k])
            gg = np.tanh(a[3 * dh + k])
            c = gf * C[t, k] + gi * gg
            C[t + 1, k] = c
            H[t + 1, k] = go * np.tanh(c)
            G[t, k] = gi
            G[t, dh + k] = gf
            G[t, 2 * dh + k] = go
            G[t, 3 * dh + k] = gg
    return H, C, G


@njit(cache=True)
def lstm_backward_numba(X, W, H, C, G, dh_last):
    T, dw = X.shape
    dh = H.shape[1]
    dX = np.zeros_like(X)
    dW = np.zeros_like(W)
    db = np.zeros(4 * dh)
    dh_next = dh_last.copy()
    dc_next = np.zeros(dh)
    da = np.empty(4 * dh)
    for t in range(T - 1, -1, -1):
        for k in range(dh):
            gi = G[t, k]
            gf = G[t, dh + k]
            go = G[t, 2 * dh + k]
            gg = G[t, 3 * dh + k]
            tc = np.tanh(C[t + 1, k])
            dc = dc_next[k] + dh_next[k] * go * (1.0 - tc * tc)
            da[k] = dc * gg * gi * (1.0 - gi)
            da[dh + k] = dc * C[t, k] * gf * (1.0 - gf)
            da[2 * dh + k] = dh_next[k] * tc * go * (1.0 - go)
            da[3 * dh + k] = dc * gi * (1.0 - gg * gg)
            dc_next[k] = dc * gf
        for r in range(4 * dh):
            g = da[r]
            db[r] += g
            for k in range(dw):
                dW[r, k] += g * X[t, k]
            for k in range(dh):
                dW[r, dw + k] += g * H[t, k]
        for k in range(dw):
            acc = 0.0
            for r in range(4 * dh):
                acc += W[r, k] * da[r]
            dX[t, k] = acc
        for k in range(dh):
            acc = 0.0
            for r in range(4 * dh):
                acc += W[r, dw + k] * da[r]
            dh_next[k] = acc
    return dX, dW, db


@njit(cache=True)
def path_product_forward_numba(E, idx, lengths):
    N = idx.shape[0]
    d = E.shape[1]
    out = np.ones((N, d))
    for t in range(N):
        for j in range(lengths[t]):
            row = idx[t, j]
            for k in range(d):
                out[t, k] *= E[row, k]
    return out


@njit(cache=True)
def path_product_backward_numba(E, idx, lengths, dout):
    N = idx.shape[0]
    d = E.shape[1]
    dE = np.zeros_like(E)
    for t in range(N):
        L = lengths[t]
        for k in range(d):
            # leave-one-out products without division, so zeros are safe
            for j in range(L):
                acc = dout[t, k]
                for m in range(L):
                    if m != j:
                        acc *= E[idx[t, m], k]
                dE[idx[t, j], k] += acc
    return dE


if USE_NUMBA:
    lstm_forward = lstm_forward_numba
    lstm_backward = lstm_backward_numba
    path_product_forward = path_product_forward_numba
    path_product_backward = path_product_backward_numba
else:
    lstm_forward = lstm_forward_numpy
    lstm_backward = lstm_backward_numpy
    path_product_forward = path_product_forward_numpy
    path_product_backward = path_product_backward_numpy
