"""Batched forward, backward and sensitivity kernels.

Every supported layer is a short sequence of *substeps* acting on the full
feature vector ``y`` of size ``n``::

    residual:  y <- y + h * A @ act(B @ y + c)
    dense:     y <- act(B @ y + c)

``A`` and ``B`` are zero-padded to ``n x n``; padded hidden units see a zero
pre-activation and every supported activation maps 0 to 0, so they are inert.

Each public function dispatches to a numba kernel (per-sample loops) or to
a vectorised numpy twin, see :mod:`hdnn._accel`.
"""

from __future__ import annotations

import numpy as np

from ._accel import njit, numba_enabled

RESIDUAL = 0
DENSE = 1


# --- numba kernels ----------------------------------------------------------


@njit
def _act(x, code):
    if code == 0:
        return np.tanh(x)
    if code == 1:
        return x if x > 0.0 else 0.0
    return abs(x)


@njit
def _dact(x, code):
    if code == 0:
        t = np.tanh(x)
        return 1.0 - t * t
    if code == 1:
        return 1.0 if x > 0.0 else 0.0
    return -1.0 if x < 0.0 else 1.0


@njit
def _forward_nb(As, Bs, cs, kinds, h, code, Y0):
    S = As.shape[0]
    nb, n = Y0.shape
    Ys = np.empty((S + 1, nb, n))
    Zs = np.empty((S, nb, n))
    s_act = np.empty(n)
    for b in range(nb):
        for i in range(n):
            Ys[0, b, i] = Y0[b, i]
        for s in range(S):
            for r in range(n):
                acc = cs[s, r]
                for k in range(n):
                    acc += Bs[s, r, k] * Ys[s, b, k]
                Zs[s, b, r] = acc
                s_act[r] = _act(acc, code)
            if kinds[s] == 0:
                for i in range(n):
                    acc = 0.0
                    for r in range(n):
                        acc += As[s, i, r] * s_act[r]
                    Ys[s + 1, b, i] = Ys[s, b, i] + h * acc
            else:
                for i in range(n):
                    Ys[s + 1, b, i] = s_act[i]
    return Ys, Zs


@njit
def _backward_nb(As, Bs, kinds, h, code, Ys, Zs, dYS):
    S = As.shape[0]
    nb, n = dYS.shape
    dAs = np.zeros((S, n, n))
    dBs = np.zeros((S, n, n))
    dcs = np.zeros((S, n))
    dYs = np.empty((S + 1, nb, n))
    e = np.empty(n)
    for b in range(nb):
        for i in range(n):
            dYs[S, b, i] = dYS[b, i]
    for s in range(S - 1, -1, -1):
        for b in range(nb):
            if kinds[s] == 0:
                for r in range(n):
                    z = Zs[s, b, r]
                    sz = _act(z, code)
                    g = 0.0
                    for i in range(n):
                        d = dYs[s + 1, b, i]
                        dAs[s, i, r] += h * d * sz
                        g += As[s, i, r] * d
                    e[r] = _dact(z, code) * h * g
            else:
                for r in range(n):
                    e[r] = _dact(Zs[s, b, r], code) * dYs[s + 1, b, r]
            for r in range(n):
                er = e[r]
                dcs[s, r] += er
                for k in range(n):
                    dBs[s, r, k] += er * Ys[s, b, k]
            for k in range(n):
                acc = dYs[s + 1, b, k] if kinds[s] == 0 else 0.0
                for r in range(n):
                    acc += Bs[s, r, k] * e[r]
                dYs[s, b, k] = acc
    return dAs, dBs, dcs, dYs


@njit
def _bsm_nb(As, Bs, kinds, h, code, Zs, per_layer):
    S = As.shape[0]
    nb, n = Zs.shape[1], Zs.shape[2]
    N = S // per_layer
    M = np.empty((N, nb, n, n))
    L = np.empty((n, n))
    T = np.empty((n, n))
    D = np.empty((n, n))
    for b in range(nb):
        for i in range(n):
            for k in range(n):
                M[0, b, i, k] = 1.0 if i == k else 0.0
        for j in range(1, N):
            layer = N - j
            # denominator-layout Jacobian of the layer: product of substeps in order
            for i in range(n):
                for k in range(n):
                    L[i, k] = 1.0 if i == k else 0.0
            for t in range(per_layer):
                s = layer * per_layer + t
                # D = B^T diag(act'(z)) A^T  (+ I for residual, scaled by h)
                for i in range(n):
                    for k in range(n):
                        acc = 0.0
                        if kinds[s] == 0:
                            for r in range(n):
                                acc += Bs[s, r, i] * _dact(Zs[s, b, r], code) * As[s, k, r]
                            D[i, k] = h * acc + (1.0 if i == k else 0.0)
                        else:
                            D[i, k] = Bs[s, k, i] * _dact(Zs[s, b, k], code)
                for i in range(n):
                    for k in range(n):
                        acc = 0.0
                        for r in range(n):
                            acc += L[i, r] * D[r, k]
                        T[i, k] = acc
                for i in range(n):
                    for k in range(n):
                        L[i, k] = T[i, k]
            for i in range(n):
                for k in range(n):
                    acc = 0.0
                    for r in range(n):
                        acc += L[i, r] * M[j - 1, b, r, k]
                    M[j, b, i, k] = acc
    return M


# --- numpy twins ------------------------------------------------------------


def _act_np(x, code):
    if code == 0:
        return np.tanh(x)
    if code == 1:
        return np.maximum(x, 0.0)
    return np.abs(x)


def _dact_np(x, code):
    if code == 0:
        t = np.tanh(x)
        return 1.0 - t * t
    if code == 1:
        return (x > 0.0).astype(float)
    return np.where(x < 0.0, -1.0, 1.0)


def _forward_np(As, Bs, cs, kinds, h, code, Y0):
    S = As.shape[0]
    Ys = np.empty((S + 1,) + Y0.shape)
    Zs = np.empty((S,) + Y0.shape)
    Ys[0] = Y0
    for s in range(S):
        z = Ys[s] @ Bs[s].T + cs[s]
        Zs[s] = z
        a = _act_np(z, code)
        Ys[s + 1] = Ys[s] + h * (a @ As[s].T) if kinds[s] == RESIDUAL else a
    return Ys, Zs


def _backward_np(As, Bs, kinds, h, code, Ys, Zs, dYS):
    S = As.shape[0]
    n = dYS.shape[1]
    dAs = np.zeros((S, n, n))
    dBs = np.zeros((S, n, n))
    dcs = np.zeros((S, n))
    dYs = np.empty((S + 1,) + dYS.shape)
    dYs[S] = dYS
    for s in range(S - 1, -1, -1):
        d = dYs[s + 1]
        z = Zs[s]
        if kinds[s] == RESIDUAL:
            dAs[s] = h * d.T @ _act_np(z, code)
            e = _dact_np(z, code) * (h * d @ As[s])
            dYs[s] = d + e @ Bs[s]
        else:
            e = _dact_np(z, code) * d
            dYs[s] = e @ Bs[s]
        dBs[s] = e.T @ Ys[s]
        dcs[s] = e.sum(axis=0)
    return dAs, dBs, dcs, dYs


def _bsm_np(As, Bs, kinds, h, code, Zs, per_layer):
    S = As.shape[0]
    nb, n = Zs.shape[1], Zs.shape[2]
    N = S // per_layer
    eye = np.eye(n)
    M = np.empty((N, nb, n, n))
    M[0] = eye
    for j in range(1, N):
        layer = N - j
        L = np.broadcast_to(eye, (nb, n, n))
        for t in range(per_layer):
            s = layer * per_layer + t
            dz = _dact_np(Zs[s], code)
            if kinds[s] == RESIDUAL:
                D = eye + h * np.einsum("ri,br,kr->bik", Bs[s], dz, As[s])
            else:
                D = Bs[s].T[None] * dz[:, None, :]
            L = L @ D
        M[j] = L @ M[j - 1]
    return M


# --- dispatch ---------------------------------------------------------------


def _prep(As, Bs, cs, kinds):
    return (
        np.ascontiguousarray(As, dtype=np.float64),
        np.ascontiguousarray(Bs, dtype=np.float64),
        np.ascontiguousarray(cs, dtype=np.float64),
        np.ascontiguousarray(kinds, dtype=np.int64),
    )


def forward(As, Bs, cs, kinds, h, code, Y0, use_numba=None):
    """Run all substeps on a batch; returns states ``(S+1, B, n)`` and pre-activations."""
    As, Bs, cs, kinds = _prep(As, Bs, cs, kinds)
    Y0 = np.ascontiguousarray(np.atleast_2d(Y0), dtype=np.float64)
    if numba_enabled() if use_numba is None else use_numba:
        return _forward_nb(As, Bs, cs, kinds, float(h), int(code), Y0)
    return _forward_np(As, Bs, cs, kinds, float(h), int(code), Y0)


def backward(As, Bs, kinds, h, code, Ys, Zs, dYS, use_numba=None):
    """Reverse sweep; returns gradients w.r.t. ``A``, ``B``, ``c`` and every state."""
    As, Bs, _, kinds = _prep(As, Bs, np.zeros(1), kinds)
    Ys = np.ascontiguousarray(Ys, dtype=np.float64)
    Zs = np.ascontiguousarray(Zs, dtype=np.float64)
    dYS = np.ascontiguousarray(np.atleast_2d(dYS), dtype=np.float64)
    if numba_enabled() if use_numba is None else use_numba:
        return _backward_nb(As, Bs, kinds, float(h), int(code), Ys, Zs, dYS)
    return _backward_np(As, Bs, kinds, float(h), int(code), Ys, Zs, dYS)


def bsm(As, Bs, kinds, h, code, Zs, per_layer, use_numba=None):
    """Backward sensitivity matrices ``M[j] = dy_N/dy_{N-j}`` in denominator layout."""
    As, Bs, _, kinds = _prep(As, Bs, np.zeros(1), kinds)
    Zs = np.ascontiguousarray(Zs, dtype=np.float64)
    if numba_enabled() if use_numba is None else use_numba:
        return _bsm_nb(As, Bs, kinds, float(h), int(code), Zs, int(per_layer))
    return _bsm_np(As, Bs, kinds, float(h), int(code), Zs, int(per_layer))
