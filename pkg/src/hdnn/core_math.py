"""Activations, Boolean matrix algebra and small dense helpers."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class ActKind(str, Enum):
    TANH = "tanh"
    RELU = "relu"
    ABS = "abs"


# integer codes understood by the compiled kernels
ACT_CODES = {ActKind.TANH: 0, ActKind.RELU: 1, ActKind.ABS: 2}


@dataclass(frozen=True)
class Activation:
    """Element-wise activation together with a bound on its derivative.

    The activation is the derivative of the scalar potential used in the
    Hamiltonian, so ``potential`` is provided as well (log cosh for tanh).
    Sub-derivatives at the kink are 0 for ReLU and +1 for abs.
    """

    kind: ActKind = ActKind.TANH
    S_bound: float = 1.0

    @classmethod
    def from_name(cls, name: str | ActKind) -> "Activation":
        return cls(ActKind(str(getattr(name, "value", name)).lower()))

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def code(self) -> int:
        return ACT_CODES[self.kind]

    def __call__(self, x):
        return activation_apply(self, x)

    def deriv(self, x):
        return activation_deriv(self, x)

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is ActKind.TANH:
            # log cosh without overflow
            ax = np.abs(x)
            return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)
        if self.kind is ActKind.RELU:
            return 0.5 * np.maximum(x, 0.0) ** 2
        return 0.5 * x * np.abs(x)


TANH = Activation(ActKind.TANH)
RELU = Activation(ActKind.RELU)
ABS = Activation(ActKind.ABS)


def activation_apply(a: Activation, x):
    x = np.asarray(x, dtype=float)
    if a.kind is ActKind.TANH:
        return np.tanh(x)
    if a.kind is ActKind.RELU:
        return np.maximum(x, 0.0)
    return np.abs(x)


def activation_deriv(a: Activation, x):
    x = np.asarray(x, dtype=float)
    if a.kind is ActKind.TANH:
        t = np.tanh(x)
        return 1.0 - t * t
    if a.kind is ActKind.RELU:
        return (x > 0.0).astype(float)
    return np.where(x < 0.0, -1.0, 1.0)


# --- Boolean matrices -------------------------------------------------------


def as_binmat(A) -> np.ndarray:
    B = np.asarray(A)
    if B.ndim != 2:
        raise ValueError(f"binary matrix must be 2-D, got shape {B.shape}")
    if not np.all((B == 0) | (B == 1)):
        raise ValueError("binary matrix entries must be 0 or 1")
    return B.astype(np.uint8)


def bin_add(A, B) -> np.ndarray:
    A, B = as_binmat(A), as_binmat(B)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return (A | B).astype(np.uint8)


def bin_mul(A, B) -> np.ndarray:
    A, B = as_binmat(A), as_binmat(B)
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"shape mismatch: {A.shape} @ {B.shape}")
    return (A.astype(np.int64) @ B.astype(np.int64) > 0).astype(np.uint8)


def bin_leq(A, B) -> bool:
    A, B = as_binmat(A), as_binmat(B)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return bool(np.all(A <= B))


# --- dense helpers ----------------------------------------------------------


def canonical_J(n: int) -> np.ndarray:
    """Return ``[[0, -I], [I, 0]]`` of size ``n``."""
    if n <= 0 or n % 2:
        raise ValueError(f"canonical_J needs a positive even size, got {n}")
    m = n // 2
    J = np.zeros((n, n))
    J[:m, m:] = -np.eye(m)
    J[m:, :m] = np.eye(m)
    return J


def h2_structure(X) -> np.ndarray:
    """Interconnection matrix ``[[0, -X^T], [X, 0]]`` of an H2 layer."""
    X = np.asarray(X, dtype=float)
    m = X.shape[0]
    J = np.zeros((2 * m, 2 * m))
    J[:m, m:] = -X.T
    J[m:, :m] = X
    return J


def skew_from_upper(u, n: int) -> np.ndarray:
    """Skew-symmetric matrix (or stack of them) from strict-upper entries."""
    u = np.asarray(u, dtype=float)
    iu = np.triu_indices(n, 1)
    S = np.zeros(u.shape[:-1] + (n, n))
    S[..., iu[0], iu[1]] = u
    return S - np.swapaxes(S, -1, -2)


def upper_grad(G, n: int) -> np.ndarray:
    """Pull a gradient w.r.t. a skew matrix back to its strict-upper entries."""
    iu = np.triu_indices(n, 1)
    G = np.asarray(G)
    return G[..., iu[0], iu[1]] - G[..., iu[1], iu[0]]


def spectral_norm(M) -> np.ndarray:
    """2-norm (largest singular value) of a matrix or a stack of matrices."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros(M.shape[:-2])
    return np.linalg.norm(M, ord=2, axis=(-2, -1))


def frobenius_norm(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    # scale by the largest entry so tiny or huge matrices neither underflow nor overflow
    s = np.max(np.abs(M), axis=(-2, -1), keepdims=True)
    safe = np.where(s > 0, s, 1.0)
    return np.sqrt(np.sum(np.square(M / safe), axis=(-2, -1))) * safe[..., 0, 0]
