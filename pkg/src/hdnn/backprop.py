"""Backward recursions, backward sensitivity matrices (BSMs) and gradients.

Jacobians follow the denominator layout used for the backward recursions:
``layer_jacobian(net, j, ...)`` is ``d y_{j+1} / d y_j`` arranged so that
``delta_j = layer_jacobian(j) @ delta_{j+1}``, i.e. the transpose of the usual
Jacobian. In this layout a BSM ``M`` of an H2 network satisfies
``M^T J M = J``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core_math import frobenius_norm, spectral_norm
from .layers import Arch, Network, Trace, _h2_full_step, pullback, run_forward, substeps


@dataclass
class BSMTrace:
    """``matrices[j]`` is ``d y_N / d y_{N-j}`` for ``j = 0..N-1``.

    With a batch of inputs, ``matrices`` has shape ``(N, B, n, n)`` and the
    norms ``(N, B)``.
    """

    matrices: np.ndarray
    norm2: np.ndarray
    norm_fro: np.ndarray

    @property
    def N(self) -> int:
        return self.matrices.shape[0]


@dataclass
class GradientSet:
    params: dict
    W: np.ndarray
    c: np.ndarray

    def flat(self) -> np.ndarray:
        parts = [v.ravel() for _, v in sorted(self.params.items())]
        return np.concatenate(parts + [self.W.ravel(), self.c.ravel()])

    def scaled(self, a: float) -> "GradientSet":
        return GradientSet({k: a * v for k, v in self.params.items()}, a * self.W, a * self.c)

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(
            {k: v + other.params[k] for k, v in self.params.items()},
            self.W + other.W,
            self.c + other.c,
        )


def zero_grads(net: Network) -> GradientSet:
    return GradientSet(
        {k: np.zeros_like(v) for k, v in net.params.items()},
        np.zeros_like(net.head.W),
        np.zeros_like(net.head.c),
    )


# --- softmax cross-entropy --------------------------------------------------


def cross_entropy(logits, labels):
    """Mean cross-entropy over a batch and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.atleast_1d(np.asarray(labels))
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ValueError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logZ[:, None]
    rows = np.arange(len(labels))
    loss = -logp[rows, labels].mean()
    g = np.exp(logp)
    g[rows, labels] -= 1.0
    return loss, g / len(labels)


# --- literal recursions -----------------------------------------------------


def _states_array(states):
    S = np.asarray(states, dtype=float)
    return S


def backward_h1(net: Network, states, delta_N):
    """``delta_j = (I + h K^T diag(act'(K y_j + b)) K J^T) delta_{j+1}``.

    Returns ``[delta_0, ..., delta_N]``; works for one sample or a batch.
    """
    if net.arch is not Arch.H1:
        raise ValueError("backward_h1 needs an H1 network")
    S = _states_array(states)
    d = np.asarray(delta_N, dtype=float)
    if d.shape[-1] != net.n:
        raise ValueError(f"delta has dimension {d.shape[-1]}, expected {net.n}")
    Js = net.J_stack()
    out = [d]
    for j in range(net.N - 1, -1, -1):
        K, b, J = net.params["K"][j], net.params["b"][j], Js[j]
        D = net.activation.deriv(S[j] @ K.T + b)
        d = d + net.h * ((d @ J) @ K.T * D) @ K
        out.append(d)
    return out[::-1]


def backward_h2(net: Network, states, gamma_N, lambda_N):
    """Coupled recursions for ``gamma_j = dL/dp_j`` and ``lambda_j = dL/dq_j``.

    ``gamma_j`` is computed first and then used in ``lambda_j``. Returns
    ``[(gamma_0, lambda_0), ..., (gamma_N, lambda_N)]``.
    """
    if net.arch is not Arch.H2 or net.implicit:
        raise ValueError("backward_h2 needs a block-structured H2 network")
    m, h, act = net.m, net.h, net.activation
    S = _states_array(states)
    g = np.asarray(gamma_N, dtype=float)
    lam = np.asarray(lambda_N, dtype=float)
    if g.shape[-1] != m or lam.shape[-1] != m:
        raise ValueError(f"gamma/lambda must have dimension {m}")
    X = net.fixed["X"]
    out = [(g, lam)]
    for j in range(net.N - 1, -1, -1):
        Kp, Kq = net.params["Kp"][j], net.params["Kq"][j]
        bp, bq = net.params["bp"][j], net.params["bq"][j]
        p1 = S[j + 1][..., :m]
        q = S[j][..., m:]
        Dp = act.deriv(p1 @ Kp.T + bp)
        Dq = act.deriv(q @ Kq.T + bq)
        g = g + h * ((lam @ X) @ Kp.T * Dp) @ Kp
        lam = lam - h * ((g @ X.T) @ Kq.T * Dq) @ Kq
        out.append((g, lam))
    return out[::-1]


# --- Jacobians and BSMs -----------------------------------------------------


def _full_layer_jac_std(net: Network, j: int, Y):
    """Usual (numerator-layout) Jacobian of an implicit H2 layer, batched."""
    m, h = net.m, net.h
    X = net.fixed["X"]
    K, b = net.params["K"][j], net.params["b"][j]
    KP, KQ = K[:, :m], K[:, m:]
    P, Q = Y[:, :m], Y[:, m:]
    p1, _, z = _h2_full_step(X, K, b, h, net.activation, P, Q)
    D = net.activation.deriv(z)
    XtKQt = X.T @ KQ.T
    XKPt = X @ KP.T
    A = np.eye(m) + h * np.einsum("ir,br,rk->bik", XtKQt, D, KP)
    Cq = h * np.einsum("ir,br,rk->bik", XtKQt, D, KQ)
    G = h * np.einsum("ir,br,rk->bik", XKPt, D, KP)
    Aq = np.eye(m) + h * np.einsum("ir,br,rk->bik", XKPt, D, KQ)
    Ainv = np.linalg.inv(A)
    dp_dp = Ainv
    dp_dq = -Ainv @ Cq
    Phi = np.empty((Y.shape[0], 2 * m, 2 * m))
    Phi[:, :m, :m] = dp_dp
    Phi[:, :m, m:] = dp_dq
    Phi[:, m:, :m] = G @ dp_dp
    Phi[:, m:, m:] = Aq + G @ dp_dq
    return Phi


def layer_jacobian(net: Network, j: int, states) -> np.ndarray:
    """``d y_{j+1} / d y_j`` at the recorded state (denominator layout).

    ``states`` is the list returned by :func:`hdnn.layers.forward_net`, for a
    single sample or a batch.
    """
    if not 0 <= j < net.N:
        raise IndexError(f"layer index {j} out of range for N={net.N}")
    S = _states_array(states)
    y = S[j]
    single = y.ndim == 1
    Y = np.atleast_2d(y)
    if net.implicit:
        Phi = _full_layer_jac_std(net, j, Y)
    else:
        As, Bs, cs, kinds, per = substeps(net)
        n = net.n
        Phi = np.broadcast_to(np.eye(n), (Y.shape[0], n, n)).copy()
        cur = Y
        for t in range(per):
            s = j * per + t
            z = cur @ Bs[s].T + cs[s]
            D = net.activation.deriv(z)
            if kinds[s] == kernels.RESIDUAL:
                step = np.eye(n) + net.h * np.einsum("ir,br,rk->bik", As[s], D, Bs[s])
                cur = cur + net.h * net.activation(z) @ As[s].T
            else:
                step = D[:, :, None] * Bs[s][None]
                cur = net.activation(z)
            Phi = step @ Phi
    M = np.swapaxes(Phi, -1, -2)
    return M[0] if single else M


def bsm_trace(net: Network, states_or_trace, use_numba=None) -> BSMTrace:
    """BSMs ``M_j = d y_N / d y_{N-j}`` for ``j = 0..N-1``, with 2- and Frobenius norms.

    ``M_0`` is the identity and ``M_j = layer_jacobian(N-j) @ M_{j-1}``.
    """
    if isinstance(states_or_trace, Trace):
        tr = states_or_trace
        Y0 = tr.Ys[0]
    else:
        S = _states_array(states_or_trace)
        Y0 = S[0]
        tr = None
    single = np.asarray(Y0).ndim == 1
    Y0 = np.atleast_2d(Y0)
    N, n = net.N, net.n
    if net.implicit:
        states = run_forward(net, Y0).states if tr is None else tr.states
        M = np.empty((N, Y0.shape[0], n, n))
        M[0] = np.eye(n)
        for j in range(1, N):
            M[j] = layer_jacobian(net, N - j, states) @ M[j - 1]
    else:
        if tr is None or tr.packed is None:
            tr = run_forward(net, Y0, use_numba)
        As, Bs, _, kinds, per = tr.packed
        M = kernels.bsm(As, Bs, kinds, net.h, net.activation.code, tr.Zs, per, use_numba)
    if single:
        M = M[:, 0]
    return BSMTrace(M, spectral_norm(M), frobenius_norm(M))


def bsm_from_recursion(net: Network, states) -> np.ndarray:
    """BSMs of an H1/H2 network assembled column by column from the recursions.

    An independent route to :func:`bsm_trace` for a single sample.
    """
    S = _states_array(states)
    if S.ndim != 2:
        raise ValueError("bsm_from_recursion takes the states of one sample")
    N, n, m = net.N, net.n, net.m
    E = np.eye(n)
    if net.arch is Arch.H1:
        ds = backward_h1(net, S[:, None, :].repeat(n, axis=1), E)
        cols = [ds[N - j] for j in range(N)]
    elif net.arch is Arch.H2:
        Sb = S[:, None, :].repeat(n, axis=1)
        gl = backward_h2(net, Sb, E[:, :m], E[:, m:])
        cols = [np.concatenate(gl[N - j], axis=1) for j in range(N)]
    else:
        raise ValueError("recursions are defined for H1 and H2 networks")
    # row e_i of the batch holds delta for delta_N = e_i, i.e. column i of M
    return np.stack([np.swapaxes(c, 0, 1) for c in cols])


def symplectic_residual(M, J) -> np.ndarray:
    """``||M^T J M - J||_F`` for a matrix or a stack."""
    M = np.asarray(M)
    R = np.swapaxes(M, -1, -2) @ J @ M - J
    return frobenius_norm(R)


def hamiltonian_factors(net: Network):
    """Per-layer ``(K_j, J_j)`` of the Hamiltonian ODE an H1/H2 network discretizes."""
    N, n, m = net.N, net.n, net.m
    if net.arch is Arch.H1:
        return net.params["K"], net.J_stack()
    if net.arch is Arch.H2:
        J = np.broadcast_to(net.structure_matrix(), (N, n, n))
        if net.implicit:
            return net.params["K"], J
        K = np.zeros((N, n, n))
        K[:, :m, :m] = net.params["Kp"]
        K[:, m:, m:] = net.params["Kq"]
        return K, J
    raise ValueError("upper bound is defined for H1 and H2 networks")


def upper_bound(net: Network) -> tuple[float, float]:
    """``(Q, sqrt(n) exp(Q N h))`` with ``Q = S sqrt(n) max_j ||K_j||^2 ||J_j||``."""
    K, J = hamiltonian_factors(net)
    kn = spectral_norm(K)
    jn = spectral_norm(J)
    Q = net.activation.S_bound * np.sqrt(net.n) * float(np.max(kn**2 * jn))
    x = Q * net.N * net.h
    bound = math.inf if x > 700 else math.sqrt(net.n) * math.exp(x)
    return Q, bound


# --- gradients --------------------------------------------------------------


def _backward_full(net: Network, tr: Trace, dYN):
    """Reverse sweep through implicit H2 layers; returns ``(grads, dY0)``."""
    m, h, act, N = net.m, net.h, net.activation, net.N
    X = net.fixed["X"]
    dK = np.zeros_like(net.params["K"])
    db = np.zeros_like(net.params["b"])
    g, lam = dYN[:, :m], dYN[:, m:]
    for j in range(N - 1, -1, -1):
        K = net.params["K"][j]
        KP, KQ = K[:, :m], K[:, m:]
        Yin = tr.Ys[2 * j + 1]  # (p_{j+1}, q_j)
        z = tr.Zs[j]
        s, D = act(z), act.deriv(z)
        # explicit q-update
        u = h * lam @ X
        dK[j][:, :m] += s.T @ u
        e = D * (u @ KP.T)
        dK[j] += e.T @ Yin
        db[j] += e.sum(axis=0)
        gt = g + e @ KP
        lam_new = lam + e @ KQ
        # implicit p-update: solve A^T mu = gt
        A = np.eye(m) + h * np.einsum("ir,br,rk->bik", X.T @ KQ.T, D, KP)
        mu = np.linalg.solve(np.swapaxes(A, 1, 2), gt[..., None])[..., 0]
        v = h * mu @ X.T
        dK[j][:, m:] -= s.T @ v
        e2 = D * (v @ KQ.T)
        dK[j] -= e2.T @ Yin
        db[j] -= e2.sum(axis=0)
        g, lam = mu, lam_new - e2 @ KQ
    return {"K": dK, "b": db}, np.concatenate([g, lam], axis=1)


def param_grads(net: Network, trace: Trace, delta_N, use_numba=None):
    """Gradients of the hidden parameters given ``dL/dy_N``; returns ``(dict, dL/dy_0)``."""
    dYN = np.atleast_2d(np.asarray(delta_N, dtype=float))
    if net.N == 0:
        return {}, dYN
    if net.implicit:
        grads, dY0 = _backward_full(net, trace, dYN)
    else:
        As, Bs, _, kinds, _ = trace.packed
        dAs, dBs, dcs, dYs = kernels.backward(
            As, Bs, kinds, net.h, net.activation.code, trace.Ys, trace.Zs, dYN, use_numba
        )
        grads, dY0 = pullback(net, dAs, dBs, dcs), dYs[0]
    if net.masks:
        grads = {k: v * net.masks[k] if k in net.masks else v for k, v in grads.items()}
    return grads, dY0


def loss_and_grads(net: Network, Y0, labels, use_numba=None):
    """Mean cross-entropy of a batch and the full gradient set.

    Returns ``(loss, GradientSet, trace, logits)``.
    """
    Y0 = np.atleast_2d(np.asarray(Y0, dtype=float))
    if net.N:
        tr = run_forward(net, Y0, use_numba)
        YN = tr.Ys[-1]
    else:
        tr, YN = None, Y0
    logits = net.head(YN)
    loss, dlog = cross_entropy(logits, labels)
    dW = dlog.T @ YN
    dc = dlog.sum(axis=0)
    dYN = dlog @ net.head.W
    hidden, _ = param_grads(net, tr, dYN, use_numba) if net.N else ({}, dYN)
    return loss, GradientSet(hidden, dW, dc), tr, logits


# --- finite differences -----------------------------------------------------


def fd_oracle(loss_fn, x: np.ndarray, index, step: float = 1e-5) -> float:
    """Central difference of ``loss_fn()`` w.r.t. ``x[index]`` (``x`` perturbed in place)."""
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    old = x[index]
    try:
        x[index] = old + step
        fp = float(loss_fn())
        x[index] = old - step
        fm = float(loss_fn())
    finally:
        x[index] = old
    if not (np.isfinite(fp) and np.isfinite(fm)):
        raise FloatingPointError("non-finite loss in finite-difference probe")
    return (fp - fm) / (2.0 * step)
