"""Batched network derivatives, numpy implementation.

A batch of ``N`` input points is pushed through the tanh network carrying
*channels*: channel 0 is the value, then for each differentiation direction
its first derivative and (for order 2) its second derivative. The backward
pass is the exact adjoint of that forward-over-forward computation, so the
gradient of any loss built from the output channels (e.g. a PDE residual)
with respect to the parameters comes out in one sweep.

The compiled ``_kernel`` extension implements the same two functions.
"""

from __future__ import annotations

import numpy as np

IMPLEMENTATION = "python"


def channel_layout(orders):
    """Return ``[(d1_index, d2_index or -1), ...]`` per direction and the channel count."""
    layout = []
    c = 1
    for order in orders:
        if order not in (1, 2):
            raise ValueError(f"direction order must be 1 or 2, got {order}")
        if order == 2:
            layout.append((c, c + 1))
            c += 2
        else:
            layout.append((c, -1))
            c += 1
    return layout, c


def forward(weights, biases, inputs, seeds, orders, keep_cache=True, workspace=None):
    """Output channels ``(C, N)`` and the cache needed by :func:`backward`.

    ``workspace`` is accepted for signature parity with the compiled kernel
    and ignored here.
    """
    X = np.ascontiguousarray(inputs, dtype=np.float64)
    seeds = np.ascontiguousarray(seeds, dtype=np.float64).reshape(len(orders), X.shape[1])
    layout, C = channel_layout(orders)
    N = X.shape[0]
    cache = {"X": X, "seeds": seeds, "orders": tuple(orders), "Z": [], "A": [], "S1": [], "H": []}
    n_hidden = len(weights) - 1

    W0, b0 = weights[0], biases[0]
    Z = np.zeros((C, N, W0.shape[0]))
    Z[0] = X @ W0.T + b0
    for j, (i1, _) in enumerate(layout):
        Z[i1] = W0 @ seeds[j]
    H = None
    for l in range(n_hidden):
        if l > 0:
            W, b = weights[l], biases[l]
            Z = H @ W.T
            Z[0] += b
        A = np.tanh(Z[0])
        S1 = 1.0 - A * A
        S2 = -2.0 * A * S1
        H = np.empty_like(Z)
        H[0] = A
        for i1, i2 in layout:
            H[i1] = S1 * Z[i1]
            if i2 >= 0:
                H[i2] = S2 * Z[i1] * Z[i1] + S1 * Z[i2]
        if keep_cache:
            cache["Z"].append(Z)
            cache["A"].append(A)
            cache["S1"].append(S1)
            cache["H"].append(H)
    Wl, bl = weights[-1], biases[-1]
    if n_hidden == 0:
        out = np.zeros((C, N, Wl.shape[0]))
        out[0] = X @ Wl.T + bl
        for j, (i1, _) in enumerate(layout):
            out[i1] = Wl @ seeds[j]
    else:
        out = H @ Wl.T
        out[0] += bl
    return out[:, :, 0], cache


def backward(weights, cache, g_out, grad, workspace=None):
    """Accumulate d(loss)/d(theta) into the flat array ``grad`` (overwritten).

    ``g_out`` holds d(loss)/d(output channel) with shape ``(C, N)``.
    """
    X, seeds, orders = cache["X"], cache["seeds"], cache["orders"]
    layout, C = channel_layout(orders)
    n_hidden = len(weights) - 1
    g_out = np.ascontiguousarray(g_out, dtype=np.float64)
    offsets = _offsets(weights)
    grad[...] = 0.0

    Wl = weights[-1]
    gW, gb = _views(grad, offsets, n_hidden, Wl.shape)
    if n_hidden == 0:
        gW[...] = g_out[0] @ X
        for j, (i1, _) in enumerate(layout):
            gW[0] += g_out[i1].sum() * seeds[j]
        gb[...] = g_out[0].sum()
        return grad
    H = cache["H"][-1]
    gW[0] = np.tensordot(g_out, H, axes=([0, 1], [0, 1]))
    gb[0] = g_out[0].sum()
    gH = g_out[:, :, None] * Wl[0][None, None, :]

    for l in range(n_hidden - 1, -1, -1):
        Z, A, S1 = cache["Z"][l], cache["A"][l], cache["S1"][l]
        S2 = -2.0 * A * S1
        S3 = -2.0 * S1 * S1 + 4.0 * A * A * S1
        gZ = np.empty_like(gH)
        g0 = gH[0] * S1
        for i1, i2 in layout:
            z1 = Z[i1]
            g0 += gH[i1] * S2 * z1
            if i2 >= 0:
                g0 += gH[i2] * (S3 * z1 * z1 + S2 * Z[i2])
                gZ[i1] = gH[i1] * S1 + 2.0 * gH[i2] * S2 * z1
                gZ[i2] = gH[i2] * S1
            else:
                gZ[i1] = gH[i1] * S1
        gZ[0] = g0
        W = weights[l]
        gW, gb = _views(grad, offsets, l, W.shape)
        gb[...] = gZ[0].sum(axis=0)
        if l > 0:
            Hp = cache["H"][l - 1]
            gW[...] = gZ.reshape(-1, W.shape[0]).T @ Hp.reshape(-1, W.shape[1])
            gH = gZ @ W
        else:
            gW[...] = gZ[0].T @ X
            for j, (i1, _) in enumerate(layout):
                gW += np.outer(gZ[i1].sum(axis=0), seeds[j])
    return grad


def _offsets(weights):
    offs = []
    off = 0
    for W in weights:
        offs.append(off)
        off += W.size + W.shape[0]
    return offs


def _views(grad, offsets, l, shape):
    off = offsets[l]
    n = shape[0] * shape[1]
    return grad[off : off + n].reshape(shape), grad[off + n : off + n + shape[0]]
