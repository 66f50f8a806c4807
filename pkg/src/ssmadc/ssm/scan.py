"""Selective scan: the input-dependent diagonal linear recurrence.

For every channel ``c`` and state index ``j``::

    h[t, c, j] = exp(dt[t, c] * A[c, j]) * h[t-1, c, j] + dt[t, c] * B[t, j] * x[t, c]
    y[t, c]    = sum_j C[t, j] * h[t, c, j] + D[c] * x[t, c]

with ``h[-1] = 0`` (Euler-style input discretization).  The forward kernel
keeps a single ``(d_inner, n)`` state buffer and a fixed-size block of decay
factors, so its working memory does not depend on the sequence length.  The backward kernel rematerializes the
state trajectory and runs right to left.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _scan_fwd(x, dt, decay, B, C, D, h, y, t0):
    T, d, n = decay.shape
    for s in range(T):
        t = t0 + s
        for c in range(d):
            bx = dt[t, c] * x[t, c]
            acc = D[c] * x[t, c]
            for j in range(n):
                hv = decay[s, c, j] * h[c, j] + bx * B[t, j]
                h[c, j] = hv
                acc += C[t, j] * hv
            y[t, c] = acc


@njit(cache=True)
def _scan_states(x, dt, decay, B, hs):
    L, d, n = hs.shape
    for c in range(d):
        for j in range(n):
            hs[0, c, j] = dt[0, c] * x[0, c] * B[0, j]
    for t in range(1, L):
        for c in range(d):
            bx = dt[t, c] * x[t, c]
            for j in range(n):
                hs[t, c, j] = decay[t, c, j] * hs[t - 1, c, j] + bx * B[t, j]


@njit(cache=True)
def _scan_bwd(x, dt, A, B, C, D, decay, hs, dy, dx, ddt, dA, dB, dC, dD, g):
    L, d, n = hs.shape
    for t in range(L - 1, -1, -1):
        for c in range(d):
            dyc = dy[t, c]
            xc = x[t, c]
            dtc = dt[t, c]
            dD[c] += dyc * xc
            dxt = dyc * D[c]
            ddtt = 0.0
            for j in range(n):
                gv = g[c, j] + dyc * C[t, j]
                dC[t, j] += dyc * hs[t, c, j]
                a = decay[t, c, j]
                ga = gv * hs[t - 1, c, j] * a if t > 0 else 0.0
                ddtt += ga * A[c, j] + gv * B[t, j] * xc
                dA[c, j] += ga * dtc
                dB[t, j] += gv * dtc * xc
                dxt += gv * dtc * B[t, j]
                g[c, j] = gv * a
            dx[t, c] = dxt
            ddt[t, c] = ddtt


# Decay factors exp(dt * A) are produced by numpy in time blocks of at most
# this many elements, so the forward working set stays independent of L.
BLOCK_ELEMENTS = 1 << 16


def block_steps(d_inner: int, n: int) -> int:
    return max(1, BLOCK_ELEMENTS // (d_inner * n))


def _as_f64(*arrays):
    return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrays)


def _check(x, dt, A, B, C, D):
    L, d = x.shape
    n = A.shape[1]
    if L < 1:
        raise ValueError("sequence length must be >= 1")
    if dt.shape != (L, d) or A.shape != (d, n) or B.shape != (L, n) \
            or C.shape != (L, n) or D.shape != (d,):
        raise ValueError(f"inconsistent scan shapes x{x.shape} dt{dt.shape} A{A.shape} "
                         f"B{B.shape} C{C.shape} D{D.shape}")
    for name, arr in (("x", x), ("dt", dt), ("A", A), ("B", B), ("C", C), ("D", D)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in {name}")
    if np.any(dt < 0):
        raise ValueError("step sizes dt must be non-negative")


def selective_scan(x, dt, A, B, C, D) -> np.ndarray:
    """Run the recurrence over ``x`` (L, d_inner); returns ``y`` (L, d_inner).

    ``dt`` is (L, d_inner), ``A`` (d_inner, n), ``B`` and ``C`` (L, n),
    ``D`` (d_inner,).
    """
    x, dt, A, B, C, D = _as_f64(x, dt, A, B, C, D)
    _check(x, dt, A, B, C, D)
    L, d = x.shape
    h = np.zeros(A.shape)
    y = np.empty_like(x)
    step = min(L, block_steps(d, A.shape[1]))
    buf = np.empty((step,) + A.shape)
    for t0 in range(0, L, step):
        decay = buf[:min(step, L - t0)]
        np.multiply(dt[t0:t0 + step, :, None], A, out=decay)
        np.exp(decay, out=decay)
        _scan_fwd(x, dt, decay, B, C, D, h, y, t0)
    return y


def selective_scan_backward(x, dt, A, B, C, D, dy):
    """Gradients ``(dx, ddt, dA, dB, dC, dD)`` of ``sum(y * dy)``."""
    x, dt, A, B, C, D, dy = _as_f64(x, dt, A, B, C, D, dy)
    L, d = x.shape
    n = A.shape[1]
    decay = np.exp(dt[:, :, None] * A)
    hs = np.empty((L, d, n))
    _scan_states(x, dt, decay, B, hs)
    dx = np.empty_like(x)
    ddt = np.empty_like(x)
    dA = np.zeros_like(A)
    dB = np.zeros_like(B)
    dC = np.zeros_like(C)
    dD = np.zeros_like(D)
    _scan_bwd(x, dt, A, B, C, D, decay, hs, dy, dx, ddt, dA, dB, dC, dD, np.zeros((d, n)))
    return dx, ddt, dA, dB, dC, dD


def scan_state_bytes(d_inner: int, n: int) -> int:
    """Bytes of recurrent state plus decay block the forward pass holds (independent of L)."""
    return (1 + block_steps(d_inner, n)) * d_inner * n * np.dtype(np.float64).itemsize
