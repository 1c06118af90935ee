"""Numpy layer kernels with hand-written backward passes.

Every forward returns ``(output, cache)``; the matching backward takes the
upstream gradient and the cache and returns the input gradient plus a dict
of parameter gradients.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def logsumexp(a, axis=None, keepdims=False):
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return out


def log_softmax(z):
    return z - logsumexp(z, axis=-1, keepdims=True)


# -- convolution / pooling over (channel, time, freq) ------------------------

def _im2col(x):
    cin, T, F = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    return sliding_window_view(xp, (3, 3), axis=(1, 2)).transpose(0, 3, 4, 1, 2).reshape(cin * 9, T * F)


def conv3x3_forward(x, w, b):
    """Same-padded 3x3 convolution of x (cin, T, F) with w (cout, cin, 3, 3)."""
    cin, T, F = x.shape
    cols = _im2col(x)
    out = w.reshape(w.shape[0], -1) @ cols + b[:, None]
    return out.reshape(-1, T, F), (cols, x.shape)


def conv3x3_backward(dout, cache, w, need_dx=True):
    cols, (cin, T, F) = cache
    cout = w.shape[0]
    d = dout.reshape(cout, -1)
    grads = {"w": (d @ cols.T).reshape(w.shape), "b": d.sum(axis=1)}
    if not need_dx:
        return None, grads
    # input gradient = correlation of dout with the flipped, channel-swapped kernel
    w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx = (w_t.reshape(cin, -1) @ _im2col(dout)).reshape(cin, T, F)
    return dx, grads


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def maxpool2_forward(x):
    """2x2 max-pool, stride 2, ceil mode (odd edges pooled over what exists)."""
    C, T, F = x.shape
    T2, F2 = -(-T // 2), -(-F // 2)
    xp = np.full((C, 2 * T2, 2 * F2), -np.inf)
    xp[:, :T, :F] = x
    win = xp.reshape(C, T2, 2, F2, 2).transpose(0, 1, 3, 2, 4).reshape(C, T2, F2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2_backward(dout, cache):
    idx, (C, T, F) = cache
    T2, F2 = idx.shape[1], idx.shape[2]
    dwin = np.zeros((C, T2, F2, 4))
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    dxp = dwin.reshape(C, T2, F2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(C, 2 * T2, 2 * F2)
    return dxp[:, :T, :F]


# -- recurrent directions ----------------------------------------------------
# LSTM gates stacked (input, forget, cell, output) with one bias vector.
# GRU gates stacked (reset, update, new) with separate input/hidden biases.

GATES = {"lstm": 4, "gru": 3}


def lstm_forward(X, p):
    T = X.shape[0]
    U = p["w_hh"].shape[1]
    xp = X @ p["w_ih"].T + p["b"]
    H = np.zeros((T, U))
    C = np.zeros((T, U))
    acts = np.zeros((T, 4 * U))
    h = np.zeros(U)
    c = np.zeros(U)
    w_hh_t = p["w_hh"].T
    for t in range(T):
        a = xp[t] + h @ w_hh_t
        i = sigmoid(a[:U])
        f = sigmoid(a[U:2 * U])
        g = np.tanh(a[2 * U:3 * U])
        o = sigmoid(a[3 * U:])
        c = f * c + i * g
        h = o * np.tanh(c)
        acts[t, :U], acts[t, U:2 * U], acts[t, 2 * U:3 * U], acts[t, 3 * U:] = i, f, g, o
        H[t], C[t] = h, c
    return H, (X, H, C, acts)


def lstm_backward(dH, cache, p):
    X, H, C, acts = cache
    T, U = H.shape
    w_hh = p["w_hh"]
    dA = np.zeros((T, 4 * U))
    dh_next = np.zeros(U)
    dc_next = np.zeros(U)
    for t in range(T - 1, -1, -1):
        i, f, g, o = acts[t, :U], acts[t, U:2 * U], acts[t, 2 * U:3 * U], acts[t, 3 * U:]
        c_prev = C[t - 1] if t > 0 else np.zeros(U)
        tc = np.tanh(C[t])
        dh = dH[t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        da = dA[t]
        da[:U] = di * i * (1.0 - i)
        da[U:2 * U] = df * f * (1.0 - f)
        da[2 * U:3 * U] = dg * (1.0 - g * g)
        da[3 * U:] = do * o * (1.0 - o)
        dh_next = da @ w_hh
        dc_next = dc * f
    H_prev = np.vstack([np.zeros((1, U)), H[:-1]])
    grads = {"w_ih": dA.T @ X, "w_hh": dA.T @ H_prev, "b": dA.sum(axis=0)}
    return dA @ p["w_ih"], grads


def gru_step(xp_t, h, p):
    """One GRU step given the precomputed input projection ``xp_t`` (bias included)."""
    U = h.shape[0]
    gh = p["w_hh"] @ h + p["b_hh"]
    r = sigmoid(xp_t[:U] + gh[:U])
    z = sigmoid(xp_t[U:2 * U] + gh[U:2 * U])
    n = np.tanh(xp_t[2 * U:] + r * gh[2 * U:])
    return (1.0 - z) * n + z * h, (r, z, n, gh[2 * U:])


def gru_forward(X, p, h0=None):
    T = X.shape[0]
    U = p["w_hh"].shape[1]
    xp = X @ p["w_ih"].T + p["b_ih"]
    H = np.zeros((T, U))
    gates = np.zeros((T, 4 * U))
    h = np.zeros(U) if h0 is None else h0
    for t in range(T):
        h, (r, z, n, ghn) = gru_step(xp[t], h, p)
        H[t] = h
        gates[t, :U], gates[t, U:2 * U], gates[t, 2 * U:3 * U], gates[t, 3 * U:] = r, z, n, ghn
    return H, (X, H, gates, np.zeros(U) if h0 is None else h0)


def gru_backward(dH, cache, p):
    X, H, gates, h0 = cache
    T, U = H.shape
    w_hh = p["w_hh"]
    dGx = np.zeros((T, 3 * U))
    dGh = np.zeros((T, 3 * U))
    dh_next = np.zeros(U)
    for t in range(T - 1, -1, -1):
        r, z, n, ghn = gates[t, :U], gates[t, U:2 * U], gates[t, 2 * U:3 * U], gates[t, 3 * U:]
        h_prev = H[t - 1] if t > 0 else h0
        dh = dH[t] + dh_next
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dan = dn * (1.0 - n * n)
        dar = dan * ghn * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dGx[t, :U], dGx[t, U:2 * U], dGx[t, 2 * U:] = dar, daz, dan
        dGh[t, :U], dGh[t, U:2 * U], dGh[t, 2 * U:] = dar, daz, dan * r
        dh_next = dh * z + dGh[t] @ w_hh
    H_prev = np.vstack([h0[None, :], H[:-1]])
    grads = {"w_ih": dGx.T @ X, "b_ih": dGx.sum(axis=0),
             "w_hh": dGh.T @ H_prev, "b_hh": dGh.sum(axis=0)}
    return dGx @ p["w_ih"], grads


RNN_FORWARD = {"lstm": lstm_forward, "gru": gru_forward}
RNN_BACKWARD = {"lstm": lstm_backward, "gru": gru_backward}


def birnn_forward(kind, X, p_fwd, p_bwd):
    Hf, cf = RNN_FORWARD[kind](X, p_fwd)
    Hb, cb = RNN_FORWARD[kind](X[::-1], p_bwd)
    return np.concatenate([Hf, Hb[::-1]], axis=1), (cf, cb)


def birnn_backward(kind, dH, cache, p_fwd, p_bwd):
    cf, cb = cache
    U = dH.shape[1] // 2
    dXf, gf = RNN_BACKWARD[kind](dH[:, :U], cf, p_fwd)
    dXb, gb = RNN_BACKWARD[kind](np.ascontiguousarray(dH[::-1, U:]), cb, p_bwd)
    return dXf + dXb[::-1], gf, gb


# -- affine + log-softmax ----------------------------------------------------

def affine_log_softmax_forward(h, w, b):
    return log_softmax(h @ w + b), h


def affine_log_softmax_backward(dlogp, logp, h, w):
    dz = dlogp - np.exp(logp) * dlogp.sum(axis=-1, keepdims=True)
    return dz @ w.T, {"w": h.T @ dz, "b": dz.sum(axis=0)}
