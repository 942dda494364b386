"""Pure numpy LSTM sequence kernels.

These mirror the compiled extension (`lstn.kernels._core`) exactly: the input
projection ``xproj = X @ Wx`` is precomputed by the caller with one big matmul
and shared across the batch rows, so the kernels only run the serial
recurrence.  Shapes:

    xproj : (T, 4H)   per-step input projection, shared by every batch row
    h0,c0 : (B, H)    initial hidden / cell state per row
    Wh    : (H, 4H)   recurrent weights, gate order (input, forget, cand, out)
    b     : (4H,)     gate bias

Forward returns ``hs, cs, gates`` each with leading dims (T, B, ...); ``gates``
holds the post-activation gate values needed by the backward pass.
"""

import numpy as np

BACKEND = "python"


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_seq_forward(xproj, h0, c0, Wh, b):
    T = xproj.shape[0]
    B, H = h0.shape
    hs = np.empty((T, B, H))
    cs = np.empty((T, B, H))
    gates = np.empty((T, B, 4 * H))
    h, c = h0, c0
    for t in range(T):
        z = h @ Wh + xproj[t] + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :, :H] = i
        gates[t, :, H : 2 * H] = f
        gates[t, :, 2 * H : 3 * H] = g
        gates[t, :, 3 * H :] = o
        cs[t] = c
        hs[t] = h
    return hs, cs, gates


def lstm_seq_backward(dhs, dc_last, h0, c0, Wh, hs, cs, gates):
    """Reverse pass; ``dhs`` carries the upstream gradient for every step's h.

    Returns ``dxproj (T, 4H)`` summed over batch rows (valid because the input
    projection is shared), plus ``dh0, dc0, dWh``.  The bias gradient equals
    ``dxproj.sum(axis=0)`` and is left to the caller.
    """
    T, B, H = hs.shape
    dxproj = np.empty((T, 4 * H))
    dWh = np.zeros_like(Wh)
    dh = np.zeros((B, H))
    dc = np.array(dc_last, copy=True)
    for t in range(T - 1, -1, -1):
        i = gates[t, :, :H]
        f = gates[t, :, H : 2 * H]
        g = gates[t, :, 2 * H : 3 * H]
        o = gates[t, :, 3 * H :]
        tc = np.tanh(cs[t])
        dht = dhs[t] + dh
        dct = dc + dht * o * (1.0 - tc * tc)
        c_prev = cs[t - 1] if t > 0 else c0
        h_prev = hs[t - 1] if t > 0 else h0
        dz = np.empty((B, 4 * H))
        dz[:, :H] = (dct * g) * i * (1.0 - i)
        dz[:, H : 2 * H] = (dct * c_prev) * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = (dct * i) * (1.0 - g * g)
        dz[:, 3 * H :] = (dht * tc) * o * (1.0 - o)
        dxproj[t] = dz.sum(axis=0)
        dWh += h_prev.T @ dz
        dh = dz @ Wh.T
        dc = dct * f
    return dxproj, dh, dc, dWh
