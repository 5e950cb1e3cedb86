"""Pure-numpy GRU sequence kernels.

These operate in "projection space": the caller precomputes the input
projections ``x @ W_g + b_g`` for all timesteps in one matmul (that part
is already a single large BLAS call), and the kernel runs the recurrent
time loop.  The compiled backend implements the same two entry points
with fused elementwise loops; both must agree to numerical tolerance.

Shapes use the (T, B, H) orientation.  ``mask`` is (T, B) in the same
dtype as the activations; a zero entry freezes the hidden state through
that step, so padded positions neither advance state nor leak gradient
into the gates.

Gate convention:

    z = sigmoid(xz + h_prev @ Uz)
    r = sigmoid(xr + h_prev @ Ur)
    n = tanh(xn + (r * h_prev) @ Un)
    h = (1 - z) * h_prev + z * n
"""
from __future__ import annotations

import numpy as np


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def gru_forward(xz, xr, xn, uz, ur, un, h0, mask):
    """Run the recurrent loop; returns (hs, z_stack, r_stack, n_stack)."""
    T, B, H = xz.shape
    hs = np.empty((T, B, H), dtype=h0.dtype)
    zs = np.empty_like(hs)
    rs = np.empty_like(hs)
    ns = np.empty_like(hs)
    h = h0
    for t in range(T):
        z = _sigmoid(xz[t] + h @ uz)
        r = _sigmoid(xr[t] + h @ ur)
        n = np.tanh(xn[t] + (r * h) @ un)
        m = mask[t][:, None]
        h = m * ((1.0 - z) * h + z * n) + (1.0 - m) * h
        zs[t], rs[t], ns[t], hs[t] = z, r, n, h
    return hs, zs, rs, ns


def gru_backward(dhs, hs, zs, rs, ns, uz, ur, un, h0, mask):
    """Reverse-mode pass matching :func:`gru_forward`.

    ``dhs`` holds the gradient w.r.t. every output state (any gradient
    on the final state must already be summed into ``dhs[-1]``).
    Returns pre-activation gradients (daz, dar, dan), each (T, B, H),
    and dh0.  Weight gradients are left to the caller, which can form
    them with stacked matmuls against the h_prev stack.
    """
    T, B, H = dhs.shape
    daz = np.empty_like(dhs)
    dar = np.empty_like(dhs)
    dan = np.empty_like(dhs)
    carry = np.zeros((B, H), dtype=dhs.dtype)
    for t in range(T - 1, -1, -1):
        h_prev = hs[t - 1] if t > 0 else h0
        z, r, n = zs[t], rs[t], ns[t]
        m = mask[t][:, None]
        dh = dhs[t] + carry
        dh_step = dh * m
        dh_prev = dh * (1.0 - m) + dh_step * (1.0 - z)
        dn = dh_step * z
        dz = dh_step * (n - h_prev)
        dan[t] = dn * (1.0 - n * n)
        dtmp = dan[t] @ un.T
        dr = dtmp * h_prev
        dh_prev += dtmp * r
        daz[t] = dz * z * (1.0 - z)
        dar[t] = dr * r * (1.0 - r)
        carry = dh_prev + daz[t] @ uz.T + dar[t] @ ur.T
    return daz, dar, dan, carry
