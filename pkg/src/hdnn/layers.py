"""Hamiltonian (H1/H2), MS1-3 and MLP layers, networks and their JSON form.

Parameters of a network are kept stacked over depth: ``net.params["K"]`` has
shape ``(N, n, n)`` for an H1 network, and so on. The single-sample
``forward_*`` functions below follow the layer equations literally and are
used as references; batched evaluation goes through :mod:`hdnn.kernels`.

Parameter names per architecture (``m = n // 2``):

=======  ==============================================  ==================
arch     trainable (leading axis N)                      fixed
=======  ==============================================  ==================
H1       K (n,n), b (n), [Ju (n(n-1)/2) if trainable J]  J (n,n)
H2       Kp, Kq (m,m), bp, bq (m)                        X (m,m)
H2 full  K (n,n), b (n)                                  X (m,m)
MS1      K0 (m,m), b1, b2 (m)
MS2      Ku (n(n-1)/2), b (n)
MS3      K1, K2 (m,m), b1, b2 (m)
MLP      K (n,n), b (n)
=======  ==============================================  ==================
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import kernels
from .core_math import (
    TANH,
    Activation,
    canonical_J,
    h2_structure,
    skew_from_upper,
    upper_grad,
)

MODEL_FORMAT = "hdnn-model"
MODEL_VERSION = 1


class Arch(str, Enum):
    H1 = "H1"
    H2 = "H2"
    MS1 = "MS1"
    MS2 = "MS2"
    MS3 = "MS3"
    MLP = "MLP"


# --- layer records and literal layer equations ------------------------------


@dataclass
class H1Layer:
    J: np.ndarray
    K: np.ndarray
    b: np.ndarray
    h: float


@dataclass
class H2Layer:
    X: np.ndarray
    Kp: np.ndarray
    Kq: np.ndarray
    bp: np.ndarray
    bq: np.ndarray
    h: float


@dataclass
class H2FullLayer:
    """S-IE layer with an unstructured ``K``; the p-update is implicit."""

    X: np.ndarray
    K: np.ndarray
    b: np.ndarray
    h: float


@dataclass
class MS1Layer:
    K0: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    h: float


@dataclass
class MS2Layer:
    K: np.ndarray
    b: np.ndarray
    h: float


@dataclass
class MS3Layer:
    K1: np.ndarray
    K2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    h: float


@dataclass
class MLPLayer:
    K: np.ndarray
    b: np.ndarray


@dataclass
class OutputHead:
    W: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.W.ndim != 2 or self.W.shape[0] < 2 or self.c.shape != (self.W.shape[0],):
            raise ValueError("output head needs W of shape (n_c, n) with n_c >= 2 and c of shape (n_c,)")

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    def __call__(self, Y):
        return Y @ self.W.T + self.c


def _check_dim(v, n, what="input"):
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != n:
        raise ValueError(f"{what} has dimension {v.shape[-1]}, expected {n}")
    return v


def forward_h1(layer: H1Layer, y, act: Activation = TANH):
    y = _check_dim(y, layer.K.shape[1])
    z = layer.K @ y + layer.b
    return y + layer.h * layer.J @ layer.K.T @ act(z)


def forward_h2(layer: H2Layer, p, q, act: Activation = TANH):
    m = layer.X.shape[0]
    p, q = _check_dim(p, m, "p"), _check_dim(q, m, "q")
    p1 = p - layer.h * layer.X.T @ layer.Kq.T @ act(layer.Kq @ q + layer.bq)
    q1 = q + layer.h * layer.X @ layer.Kp.T @ act(layer.Kp @ p1 + layer.bp)
    return p1, q1


def forward_h2_full(layer: H2FullLayer, p, q, act: Activation = TANH, tol=1e-13, max_iter=50):
    m = layer.X.shape[0]
    P, Q = _check_dim(p, m, "p")[None], _check_dim(q, m, "q")[None]
    p1, q1, _ = _h2_full_step(layer.X, layer.K, layer.b, layer.h, act, P, Q, tol, max_iter)
    return p1[0], q1[0]


def forward_ms1(layer: MS1Layer, y, act: Activation = TANH):
    """State is ``(y, z)``: z is updated first, then y."""
    m = layer.K0.shape[0]
    y = _check_dim(y, 2 * m)
    a, z = y[:m], y[m:]
    z1 = z - layer.h * act(layer.K0.T @ a + layer.b1)
    a1 = a + layer.h * act(layer.K0 @ z1 + layer.b2)
    return np.concatenate([a1, z1])


def forward_ms2(layer: MS2Layer, y, act: Activation = TANH):
    y = _check_dim(y, layer.K.shape[1])
    return y + layer.h * act(layer.K @ y + layer.b)


def forward_ms3(layer: MS3Layer, y, act: Activation = TANH):
    """State is ``(y, z)``: y is updated first, then z."""
    m = layer.K1.shape[0]
    y = _check_dim(y, 2 * m)
    a, z = y[:m], y[m:]
    a1 = a + layer.h * layer.K1.T @ act(layer.K1 @ z + layer.b1)
    z1 = z - layer.h * layer.K2.T @ act(layer.K2 @ a1 + layer.b2)
    return np.concatenate([a1, z1])


def forward_mlp(layer: MLPLayer, y, act: Activation = TANH):
    y = _check_dim(y, layer.K.shape[1])
    return act(layer.K @ y + layer.b)


# --- implicit S-IE step for the unstructured-K H2 variant -------------------


class ImplicitSolveError(RuntimeError):
    pass


def _h2_full_step(X, K, b, h, act, P, Q, tol=1e-13, max_iter=50):
    """Solve ``p' = p - h X^T [K^T act(K (p', q) + b)]_q`` by Newton, then update q.

    Returns ``(p', q', z)`` with ``z`` the pre-activation at ``(p', q)``. When
    plain Newton stalls (large ``h ||K||^2``), the step size is ramped up from
    zero and each stage is warm-started from the previous one.
    """
    m = X.shape[0]
    KP, KQ = K[:, :m], K[:, m:]
    XtKQt = X.T @ KQ.T
    base = Q @ KQ.T + b
    p1 = P - h * act(P @ KP.T + base) @ XtKQt.T
    p1, z, ok = _newton_full(KP, XtKQt, base, h, act, P, p1, tol, max_iter)
    if not ok:
        p1 = p1.copy()
        for i in range(len(P)):
            row = slice(i, i + 1)
            pi, _, done = _newton_full(KP, XtKQt, base[row], h, act, P[row], p1[row], tol, max_iter)
            p1[i] = pi[0]
            if not done:
                p1[i] = _arclength_root(KP, XtKQt, base[i], h, act, P[i])
        p1, z, ok = _newton_full(KP, XtKQt, base, h, act, P, p1, tol, max_iter)
        if not ok:
            raise ImplicitSolveError("implicit H2 step did not converge")
    q1 = Q + h * act(z) @ (X @ KP.T).T
    return p1, q1, z


def _arclength_root(KP, A, c, h, act, P, max_steps=50000):
    """Follow ``p - P + s h A act(KP p + c) = 0`` from ``(P, 0)`` to ``s = 1`` by pseudo-arclength.

    The nonlinearity is bounded, so the solution set stays in a ball around
    ``P`` and the path from the trivial root reaches ``s = 1`` even through
    folds where Newton in ``p`` alone stalls. Steps are rejected when the
    corrector wanders or the tangent turns sharply, which keeps the tracker
    from jumping between branches.
    """
    m = len(P)

    def H(x):
        p, s = x[:m], x[m]
        return p - P + s * h * act(p @ KP.T + c) @ A.T

    def DH(x):
        p, s = x[:m], x[m]
        z = p @ KP.T + c
        return np.hstack([np.eye(m) + s * h * (A * act.deriv(z)) @ KP, (h * act(z) @ A.T)[:, None]])

    def tangent(x, prev):
        t = np.linalg.svd(DH(x))[2][-1]
        return t if t @ prev >= 0 else -t

    x = np.append(P, 0.0)
    t = tangent(x, np.append(np.zeros(m), 1.0))
    ds, ds_max = 0.02, 0.1
    for _ in range(max_steps):
        pred = x + ds * t
        y, ok = pred, False
        for _ in range(8):
            G = np.append(H(y), t @ (y - pred))
            if np.max(np.abs(G)) < 1e-12 * max(1.0, np.max(np.abs(y))):
                ok = True
                break
            y = y - np.linalg.solve(np.vstack([DH(y), t]), G)
        if ok:
            t_new = tangent(y, t)
            ok = np.linalg.norm(y - pred) <= 0.3 * ds + 1e-12 and t_new @ t >= 0.95
        if not ok:
            ds *= 0.5
            if ds < 1e-12:
                break
            continue
        if y[m] > 1.0 + 1e-13:
            # overshot: shorten the step so the corrected point lands on s = 1
            ds *= max(0.1, min(0.99, (1.0 - x[m]) / (y[m] - x[m])))
            continue
        if y[m] >= 1.0 - 1e-13:
            return y[:m]
        x, t, ds = y, t_new, min(1.5 * ds, ds_max)
    raise ImplicitSolveError("implicit H2 step: continuation path did not reach the full step")


def _newton_full(KP, XtKQt, base, h, act, P, p1, tol, max_iter):
    """Newton with a per-sample backtracking line search; returns ``(p, z, converged)``."""

    def residual(p):
        z = p @ KP.T + base
        return p - P + h * act(z) @ XtKQt.T, z

    F, z = residual(p1)
    eye = np.eye(p1.shape[-1])
    for _ in range(max_iter):
        err = np.max(np.abs(F), axis=-1)
        if np.all(err <= tol * np.maximum(1.0, np.max(np.abs(p1), axis=-1))):
            return p1, z, True
        Jf = eye + h * np.einsum("ir,br,rk->bik", XtKQt, act.deriv(z), KP)
        step = np.linalg.solve(Jf, F[..., None])[..., 0]
        t = np.ones(len(p1))
        while True:
            cand = p1 - t[:, None] * step
            Fc, zc = residual(cand)
            worse = (np.max(np.abs(Fc), axis=-1) >= err) & (err > 0)
            if not worse.any() or t.min() < 1e-6:
                break
            t = np.where(worse, 0.5 * t, t)
        # rows that found no decrease keep their current iterate
        keep = worse[:, None]
        p1, F, z = np.where(keep, p1, cand), np.where(keep, F, Fc), np.where(keep, z, zc)
    ok = np.max(np.abs(F)) <= 1e-8 * max(1.0, np.max(np.abs(p1)))
    return p1, z, bool(ok)


# --- networks ---------------------------------------------------------------


@dataclass
class Network:
    """A stack of ``N`` layers of one architecture plus an affine output head."""

    arch: Arch
    n: int
    h: float
    activation: Activation
    params: dict
    head: OutputHead
    fixed: dict = field(default_factory=dict)
    trainable_J: bool = False
    h2_variant: str = "block"
    masks: dict | None = None

    def __post_init__(self):
        self.arch = Arch(self.arch)
        if self.h2_variant not in ("block", "full"):
            raise ValueError(f"unknown H2 variant {self.h2_variant!r}")
        if self.arch in (Arch.H2, Arch.MS1, Arch.MS3) and self.n % 2:
            raise ValueError(f"{self.arch.value} needs an even feature dimension, got {self.n}")
        if self.h <= 0 and self.arch is not Arch.MLP:
            raise ValueError("step size h must be positive")
        Ns = {v.shape[0] for v in self.params.values()}
        if len(Ns) > 1:
            raise ValueError("all parameter stacks must share the depth axis")
        if self.head.W.shape[1] != self.n:
            raise ValueError("output head width does not match the feature dimension")

    @property
    def N(self) -> int:
        return next(iter(self.params.values())).shape[0] if self.params else 0

    @property
    def m(self) -> int:
        return self.n // 2

    @property
    def implicit(self) -> bool:
        return self.arch is Arch.H2 and self.h2_variant == "full"

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def J_stack(self) -> np.ndarray:
        """Per-layer interconnection matrices of an H1 network."""
        if self.trainable_J:
            return skew_from_upper(self.params["Ju"], self.n)
        return np.broadcast_to(self.fixed["J"], (self.N, self.n, self.n))

    def structure_matrix(self) -> np.ndarray:
        """``J`` w.r.t. which the layer maps of an H2 network are symplectic."""
        if self.arch is not Arch.H2:
            raise ValueError("structure matrix is defined for H2 networks")
        return h2_structure(self.fixed["X"])

    def layer(self, j: int):
        if not 0 <= j < self.N:
            raise IndexError(f"layer index {j} out of range for N={self.N}")
        P = {k: v[j] for k, v in self.params.items()}
        if self.arch is Arch.H1:
            return H1Layer(self.J_stack()[j].copy(), P["K"], P["b"], self.h)
        if self.arch is Arch.H2:
            if self.implicit:
                return H2FullLayer(self.fixed["X"], P["K"], P["b"], self.h)
            return H2Layer(self.fixed["X"], P["Kp"], P["Kq"], P["bp"], P["bq"], self.h)
        if self.arch is Arch.MS1:
            return MS1Layer(P["K0"], P["b1"], P["b2"], self.h)
        if self.arch is Arch.MS2:
            return MS2Layer(skew_from_upper(P["Ku"], self.n), P["b"], self.h)
        if self.arch is Arch.MS3:
            return MS3Layer(P["K1"], P["K2"], P["b1"], P["b2"], self.h)
        return MLPLayer(P["K"], P["b"])

    @property
    def layers(self) -> list:
        return [self.layer(j) for j in range(self.N)]


def param_shapes(arch, n: int, trainable_J=False, h2_variant="block") -> dict:
    """Per-layer shapes of the trainable parameters."""
    arch = Arch(arch)
    m = n // 2
    if arch is Arch.H1:
        shapes = {"K": (n, n), "b": (n,)}
        if trainable_J:
            shapes["Ju"] = (n * (n - 1) // 2,)
        return shapes
    if arch is Arch.H2:
        if h2_variant == "full":
            return {"K": (n, n), "b": (n,)}
        return {"Kp": (m, m), "Kq": (m, m), "bp": (m,), "bq": (m,)}
    if arch is Arch.MS1:
        return {"K0": (m, m), "b1": (m,), "b2": (m,)}
    if arch is Arch.MS2:
        return {"Ku": (n * (n - 1) // 2,), "b": (n,)}
    if arch is Arch.MS3:
        return {"K1": (m, m), "K2": (m, m), "b1": (m,), "b2": (m,)}
    return {"K": (n, n), "b": (n,)}


BIAS_NAMES = {"b", "bp", "bq", "b1", "b2"}


def init_network(
    arch,
    n: int,
    N: int,
    h: float = 0.5,
    activation: Activation | str = TANH,
    n_classes: int = 2,
    rng: np.random.Generator | int | None = 0,
    trainable_J: bool = False,
    h2_variant: str = "block",
    weight_std: float | None = None,
    X: np.ndarray | None = None,
) -> Network:
    """Random network: weights ~ N(0, weight_std^2) (default 1/sqrt(n)), biases zero."""
    arch = Arch(arch)
    rng = np.random.default_rng(rng)
    if not isinstance(activation, Activation):
        activation = Activation.from_name(activation)
    std = 1.0 / np.sqrt(n) if weight_std is None else weight_std
    params = {}
    for name, shape in param_shapes(arch, n, trainable_J, h2_variant).items():
        if name in BIAS_NAMES:
            params[name] = np.zeros((N,) + shape)
        elif name == "Ju":
            params[name] = np.tile(canonical_J(n)[np.triu_indices(n, 1)], (N, 1))
        else:
            params[name] = rng.normal(0.0, std, size=(N,) + shape)
    fixed = {}
    if arch is Arch.H1 and not trainable_J:
        fixed["J"] = canonical_J(n)
    if arch is Arch.H2:
        # X = I reproduces J = canonical_J(n)
        fixed["X"] = np.eye(n // 2) if X is None else np.asarray(X, dtype=float)
    head = OutputHead(rng.normal(0.0, 1.0 / np.sqrt(n), size=(n_classes, n)), np.zeros(n_classes))
    return Network(arch, n, float(h), activation, params, head, fixed, trainable_J, h2_variant)


def param_count(net: Network) -> int:
    """Trainable scalars per hidden layer (fixed J/X excluded)."""
    return int(sum(int(np.prod(v.shape[1:])) for v in net.params.values()))


# --- substep assembly -------------------------------------------------------


def substeps(net: Network):
    """Pack a network into kernel substeps: ``(As, Bs, cs, kinds, per_layer)``."""
    if net.implicit:
        raise ValueError("the unstructured-K H2 variant is implicit and has no substep form")
    n, m, N, P = net.n, net.m, net.N, net.params
    R, D = kernels.RESIDUAL, kernels.DENSE
    if net.arch in (Arch.H1, Arch.MS2, Arch.MLP):
        As = np.zeros((N, n, n))
        if net.arch is Arch.H1:
            As[:] = net.J_stack() @ np.swapaxes(P["K"], 1, 2)
            Bs = P["K"]
        elif net.arch is Arch.MS2:
            As[:] = np.eye(n)
            Bs = skew_from_upper(P["Ku"], n)
        else:
            Bs = P["K"]
        kind = D if net.arch is Arch.MLP else R
        return As, np.array(Bs, dtype=float), P["b"].copy(), np.full(N, kind), 1

    As = np.zeros((N, 2, n, n))
    Bs = np.zeros((N, 2, n, n))
    cs = np.zeros((N, 2, n))
    lo, hi = slice(0, m), slice(m, n)
    if net.arch is Arch.H2:
        X = net.fixed["X"]
        As[:, 0, lo, :m] = -X.T @ np.swapaxes(P["Kq"], 1, 2)
        Bs[:, 0, :m, hi] = P["Kq"]
        cs[:, 0, :m] = P["bq"]
        As[:, 1, hi, :m] = X @ np.swapaxes(P["Kp"], 1, 2)
        Bs[:, 1, :m, lo] = P["Kp"]
        cs[:, 1, :m] = P["bp"]
    elif net.arch is Arch.MS1:
        As[:, 0, hi, :m] = -np.eye(m)
        Bs[:, 0, :m, lo] = np.swapaxes(P["K0"], 1, 2)
        cs[:, 0, :m] = P["b1"]
        As[:, 1, lo, :m] = np.eye(m)
        Bs[:, 1, :m, hi] = P["K0"]
        cs[:, 1, :m] = P["b2"]
    else:  # MS3
        As[:, 0, lo, :m] = np.swapaxes(P["K1"], 1, 2)
        Bs[:, 0, :m, hi] = P["K1"]
        cs[:, 0, :m] = P["b1"]
        As[:, 1, hi, :m] = -np.swapaxes(P["K2"], 1, 2)
        Bs[:, 1, :m, lo] = P["K2"]
        cs[:, 1, :m] = P["b2"]
    kinds = np.full(2 * N, R)
    return As.reshape(2 * N, n, n), Bs.reshape(2 * N, n, n), cs.reshape(2 * N, n), kinds, 2


def pullback(net: Network, dAs, dBs, dcs) -> dict:
    """Map substep gradients back onto the named parameters."""
    n, m, N, P = net.n, net.m, net.N, net.params
    T = lambda M: np.swapaxes(M, -1, -2)  # noqa: E731
    if net.arch in (Arch.H1, Arch.MS2, Arch.MLP):
        if net.arch is Arch.H1:
            J = net.J_stack()
            g = {"K": T(dAs) @ J + dBs, "b": dcs}
            if net.trainable_J:
                g["Ju"] = upper_grad(dAs @ P["K"], n)
            return g
        if net.arch is Arch.MS2:
            return {"Ku": upper_grad(dBs, n), "b": dcs}
        return {"K": dBs, "b": dcs}

    dA = dAs.reshape(N, 2, n, n)
    dB = dBs.reshape(N, 2, n, n)
    dc = dcs.reshape(N, 2, n)
    lo, hi = slice(0, m), slice(m, n)
    if net.arch is Arch.H2:
        X = net.fixed["X"]
        return {
            "Kq": -T(dA[:, 0, lo, :m]) @ X.T + dB[:, 0, :m, hi],
            "bq": dc[:, 0, :m],
            "Kp": T(dA[:, 1, hi, :m]) @ X + dB[:, 1, :m, lo],
            "bp": dc[:, 1, :m],
        }
    if net.arch is Arch.MS1:
        return {"K0": T(dB[:, 0, :m, lo]) + dB[:, 1, :m, hi], "b1": dc[:, 0, :m], "b2": dc[:, 1, :m]}
    return {
        "K1": T(dA[:, 0, lo, :m]) + dB[:, 0, :m, hi],
        "K2": -T(dA[:, 1, hi, :m]) + dB[:, 1, :m, lo],
        "b1": dc[:, 0, :m],
        "b2": dc[:, 1, :m],
    }


# --- forward passes ---------------------------------------------------------


@dataclass
class Trace:
    """Everything the backward pass needs from one batched forward pass.

    ``Ys`` holds substep boundary states ``(S+1, B, n)``; for two-substep
    layers the odd entries are the intermediate states (H2: ``(p_{j+1}, q_j)``).
    """

    Ys: np.ndarray
    Zs: np.ndarray
    per_layer: int
    packed: tuple | None = None

    @property
    def states(self) -> np.ndarray:
        return self.Ys[:: self.per_layer]


def run_forward(net: Network, Y0, use_numba=None) -> Trace:
    Y0 = _check_dim(np.atleast_2d(Y0), net.n)
    if net.implicit:
        return _run_forward_full(net, Y0)
    packed = substeps(net)
    As, Bs, cs, kinds, per = packed
    Ys, Zs = kernels.forward(As, Bs, cs, kinds, net.h, net.activation.code, Y0, use_numba)
    return Trace(Ys, Zs, per, packed)


def _run_forward_full(net: Network, Y0) -> Trace:
    m, N = net.m, net.N
    Ys = np.empty((2 * N + 1,) + Y0.shape)
    Zs = np.empty((N,) + Y0.shape)
    Ys[0] = Y0
    X = net.fixed["X"]
    for j in range(N):
        P, Q = Ys[2 * j][:, :m], Ys[2 * j][:, m:]
        p1, q1, z = _h2_full_step(X, net.params["K"][j], net.params["b"][j], net.h, net.activation, P, Q)
        Ys[2 * j + 1] = np.concatenate([p1, Q], axis=1)
        Ys[2 * j + 2] = np.concatenate([p1, q1], axis=1)
        Zs[j] = z
    return Trace(Ys, Zs, 2, None)


def forward_net(net: Network, y0, use_numba=None):
    """Logits ``W y_N + c`` and the list of layer states ``[y_0, ..., y_N]``.

    Accepts a single sample ``(n,)`` or a batch ``(B, n)``.
    """
    y0 = np.asarray(y0, dtype=float)
    single = y0.ndim == 1
    if net.N == 0:
        states = np.atleast_2d(y0)[None]
    else:
        states = run_forward(net, y0, use_numba).states
    logits = net.head(states[-1])
    if single:
        return logits[0], [s[0] for s in states]
    return logits, list(states)


def predict(net: Network, Y) -> np.ndarray:
    logits, _ = forward_net(net, np.atleast_2d(Y))
    return np.argmax(logits, axis=1)


# --- serialization ----------------------------------------------------------


def _arr(a) -> dict:
    a = np.asarray(a)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unarr(d) -> np.ndarray:
    return np.asarray(d["data"], dtype=float).reshape(d["shape"])


def network_to_dict(net: Network) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "arch": net.arch.value,
        "n": net.n,
        "N": net.N,
        "h": net.h,
        "activation": net.activation.name,
        "n_classes": net.head.n_classes,
        "trainable_J": net.trainable_J,
        "h2_variant": net.h2_variant,
        "params": {k: _arr(v) for k, v in net.params.items()},
        "fixed": {k: _arr(v) for k, v in net.fixed.items()},
        "masks": None if net.masks is None else {k: _arr(v) for k, v in net.masks.items()},
        "head": {"W": _arr(net.head.W), "c": _arr(net.head.c)},
    }


def network_from_dict(d: dict) -> Network:
    if d.get("format") != MODEL_FORMAT:
        raise ValueError("not an hdnn model document")
    net = Network(
        arch=Arch(d["arch"]),
        n=int(d["n"]),
        h=float(d["h"]),
        activation=Activation.from_name(d["activation"]),
        params={k: _unarr(v) for k, v in d["params"].items()},
        head=OutputHead(_unarr(d["head"]["W"]), _unarr(d["head"]["c"])),
        fixed={k: _unarr(v) for k, v in d.get("fixed", {}).items()},
        trainable_J=bool(d.get("trainable_J", False)),
        h2_variant=d.get("h2_variant", "block"),
        masks=None if not d.get("masks") else {k: _unarr(v) for k, v in d["masks"].items()},
    )
    if net.N != int(d["N"]):
        raise ValueError(f"model declares N={d['N']} but parameters have depth {net.N}")
    return net


def save_network(net: Network, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net)) + "\n")


def load_network(path) -> Network:
    return network_from_dict(json.loads(Path(path).read_text()))
