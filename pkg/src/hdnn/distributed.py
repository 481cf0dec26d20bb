"""Block-sparsity patterns for distributed H2 networks.

Features are split over ``M`` nodes. With ``R`` the block pattern of the
weight matrices, ``T`` that of ``X`` (or ``J``) and ``S`` the communication
graph, forward and backward updates only need neighbour information when

    T R^T R + R^T R T <= S        (Boolean algebra)

holds for every layer. Masks are enforced by projection: masked weights are
zeroed once and their gradients are zeroed at every step.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_math import as_binmat, bin_add, bin_leq, bin_mul
from .layers import Arch, Network, run_forward


@dataclass
class SparsityPattern:
    """``S`` is the graph; ``T`` and ``R`` hold one matrix per layer (or one shared)."""

    S: np.ndarray
    T: list
    R: list
    block_sizes: list | None = None

    def __post_init__(self):
        self.S = as_binmat(self.S)
        M = self.S.shape[0]
        self.T = [as_binmat(t) for t in _as_list(self.T)]
        self.R = [as_binmat(r) for r in _as_list(self.R)]
        if not self.T or not self.R:
            raise ValueError("pattern needs at least one T and one R matrix")
        if len(self.T) not in (1, len(self.R)) and len(self.R) != 1:
            raise ValueError("T and R must have one entry per layer or a single shared entry")
        for name, B in [("S", self.S)] + [("T", t) for t in self.T] + [("R", r) for r in self.R]:
            if B.shape != (M, M):
                raise ValueError(f"{name} must be {M}x{M}, got {B.shape}")
            if not np.all(np.diag(B) == 1):
                raise ValueError(f"{name} must have a unit diagonal")
        if not np.array_equal(self.S, self.S.T):
            raise ValueError("S must be symmetric")
        for t in self.T:
            if not np.array_equal(t, t.T):
                raise ValueError("T must be symmetric")
        if self.block_sizes is not None:
            self.block_sizes = [int(b) for b in self.block_sizes]
            if len(self.block_sizes) != M or min(self.block_sizes) < 1:
                raise ValueError("block_sizes must list one positive size per node")

    @property
    def M(self) -> int:
        return self.S.shape[0]

    @property
    def n_layers(self) -> int:
        return max(len(self.T), len(self.R))

    def layer(self, j: int):
        T = self.T[j] if len(self.T) > 1 else self.T[0]
        R = self.R[j] if len(self.R) > 1 else self.R[0]
        return T, R


def _as_list(x):
    if isinstance(x, np.ndarray) and x.ndim == 2:
        return [x]
    x = list(x)
    if x and np.ndim(x[0]) == 1:
        return [np.asarray(x)]
    return x


def condition_holds(T, R, S) -> bool:
    RtR = bin_mul(np.asarray(R).T, R)
    return bin_leq(bin_add(bin_mul(T, RtR), bin_mul(RtR, T)), S)


def check_condition(p: SparsityPattern) -> list:
    """Per-layer verdict of ``T R^T R + R^T R T <= S``."""
    return [condition_holds(*p.layer(j), p.S) for j in range(p.n_layers)]


def dependency_bound(T, R) -> np.ndarray:
    RtR = bin_mul(np.asarray(R).T, R)
    return bin_add(bin_mul(T, RtR), bin_mul(RtR, T))


# --- named patterns ---------------------------------------------------------


def example1():
    """Four nodes, one graph and three admissible ``(T, R)`` pairs over time."""
    S = np.array([[1, 1, 1, 1], [1, 1, 1, 0], [1, 1, 1, 1], [1, 0, 1, 1]])
    I = np.eye(4, dtype=int)
    pairs = [
        (S.copy(), I),
        (I, np.array([[1, 1, 1, 0], [1, 1, 0, 0], [1, 0, 1, 1], [0, 0, 1, 1]])),
        (
            np.array([[1, 0, 1, 0], [0, 1, 1, 0], [1, 1, 1, 1], [0, 0, 1, 1]]),
            np.array([[1, 0, 0, 1], [1, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]),
        ),
    ]
    return S, pairs


def ring(M: int, hops: int = 1) -> np.ndarray:
    """Adjacency (with self loops) of a cycle where each node sees ``hops`` neighbours per side."""
    A = np.zeros((M, M), dtype=np.uint8)
    for i in range(M):
        for d in range(-hops, hops + 1):
            A[i, (i + d) % M] = 1
    return A


def ring_pattern(M: int = 8, n_layers: int = 1) -> SparsityPattern:
    """``R`` = ring with first neighbours, ``T = I`` and ``S = R^2`` (neighbours up to two hops)."""
    R = ring(M, 1)
    return SparsityPattern(bin_mul(R, R), [np.eye(M, dtype=int)], [R] * n_layers)


# --- masks ------------------------------------------------------------------


@dataclass
class DistributedH2Config:
    """Sparsity pattern plus the number of p and q features held by each node."""

    pattern: SparsityPattern
    p_sizes: list
    q_sizes: list

    def __post_init__(self):
        M = self.pattern.M
        if len(self.p_sizes) != M or len(self.q_sizes) != M:
            raise ValueError("need one p and one q size per node")
        if sum(self.p_sizes) != sum(self.q_sizes):
            raise ValueError("p and q blocks must have equal total size")

    @property
    def m(self) -> int:
        return int(sum(self.p_sizes))

    @classmethod
    def uniform(cls, pattern: SparsityPattern, per_node: int = 1) -> "DistributedH2Config":
        return cls(pattern, [per_node] * pattern.M, [per_node] * pattern.M)


def expand_blocks(B, row_sizes, col_sizes) -> np.ndarray:
    """Dense 0/1 mask whose block ``(i, k)`` equals ``B[i, k]``."""
    B = np.asarray(B, dtype=float)
    return np.repeat(np.repeat(B, row_sizes, axis=0), col_sizes, axis=1)


def build_masks(net: Network, cfg: DistributedH2Config) -> tuple:
    """Masks for the trainable stacks and for the fixed ``X``."""
    if net.arch is not Arch.H2:
        raise ValueError("distributed masks apply to H2 networks")
    if cfg.m != net.m:
        raise ValueError(f"node sizes cover {cfg.m} features per block, network has {net.m}")
    pat = cfg.pattern
    if pat.n_layers not in (1, net.N):
        raise ValueError("pattern must have one R per layer or a single shared R")
    Ts = {pat.layer(j)[0].tobytes() for j in range(net.N)}
    if len(Ts) > 1:
        raise ValueError("X is shared by all layers, so T must be constant")
    ps, qs = cfg.p_sizes, cfg.q_sizes
    T0 = pat.layer(0)[0]
    Xmask = expand_blocks(T0, qs, ps)
    masks = {}
    Rs = [pat.layer(j)[1] for j in range(net.N)]
    if net.implicit:
        sizes = list(ps) + list(qs)
        masks["K"] = np.stack([expand_blocks(np.block([[R, R], [R, R]]), sizes, sizes) for R in Rs])
    else:
        masks["Kp"] = np.stack([expand_blocks(R, ps, ps) for R in Rs])
        masks["Kq"] = np.stack([expand_blocks(R, qs, qs) for R in Rs])
    return masks, Xmask


def apply_masks(net: Network, cfg: DistributedH2Config) -> Network:
    """Copy of ``net`` with masked blocks zeroed and the masks attached for training."""
    bad = [j for j, ok in enumerate(check_condition(cfg.pattern)) if not ok]
    if bad:
        raise ValueError(f"sparsity condition violated at pattern layer(s) {bad}")
    masks, Xmask = build_masks(net, cfg)
    out = net.copy()
    for k, mk in masks.items():
        out.params[k] = out.params[k] * mk
    out.fixed["X"] = out.fixed["X"] * Xmask
    out.masks = masks
    return out


def masked_grads(grads: dict, masks: dict) -> dict:
    return {k: g * masks[k] if k in masks else g for k, g in grads.items()}


# --- locality probe ---------------------------------------------------------


def locality_oracle(net: Network, cfg: DistributedH2Config, sample, rng=0, eps=1e-3, tol=1e-9) -> np.ndarray:
    """Empirical node dependency matrix of one sample's forward and backward sweep.

    Every elementary update (the p-update, the q-update and the two backward
    recursions) is probed separately: node ``k``'s input block is perturbed
    by ``eps`` and entry ``(i, k)`` is set when node ``i``'s output moves by
    more than ``tol``.
    """
    if net.arch is not Arch.H2 or net.implicit:
        raise ValueError("locality probe needs a block-structured H2 network")
    rng = np.random.default_rng(rng)
    m, h, act = net.m, net.h, net.activation
    X = net.fixed["X"]
    M = cfg.pattern.M
    p_of = np.repeat(np.arange(M), cfg.p_sizes)
    q_of = np.repeat(np.arange(M), cfg.q_sizes)
    dep = np.eye(M, dtype=np.uint8)
    states = run_forward(net, np.asarray(sample, dtype=float)[None]).states[:, 0]

    def probe(fn, x, in_nodes, out_nodes):
        base = fn(x)
        for k in range(M):
            xp = x.copy()
            xp[in_nodes == k] += eps
            moved = np.abs(fn(xp) - base) > tol
            for i in np.unique(out_nodes[moved]):
                dep[i, k] = 1

    for j in range(net.N):
        Kp, Kq = net.params["Kp"][j], net.params["Kq"][j]
        bp, bq = net.params["bp"][j], net.params["bq"][j]
        q, p1 = states[j, m:], states[j + 1, :m]
        lam1 = rng.standard_normal(m)
        gam = rng.standard_normal(m)
        # forward p-update as a function of q, q-update as a function of p_{j+1}
        probe(lambda v: -h * X.T @ Kq.T @ act(Kq @ v + bq), q, q_of, p_of)
        probe(lambda v: h * X @ Kp.T @ act(Kp @ v + bp), p1, p_of, q_of)
        # backward gamma-update: through lambda_{j+1} and through p_{j+1}
        probe(lambda v: h * Kp.T @ (act.deriv(Kp @ p1 + bp) * (Kp @ X.T @ v)), lam1, q_of, p_of)
        probe(lambda v: h * Kp.T @ (act.deriv(Kp @ v + bp) * (Kp @ X.T @ lam1)), p1, p_of, p_of)
        # backward lambda-update: through gamma_j and through q_j
        probe(lambda v: -h * Kq.T @ (act.deriv(Kq @ q + bq) * (Kq @ X @ v)), gam, p_of, q_of)
        probe(lambda v: -h * Kq.T @ (act.deriv(Kq @ v + bq) * (Kq @ X @ gam)), q, q_of, q_of)
    return dep


def enumerate_patterns(M: int):
    """All ``(T, R)`` with unit diagonals, ``T`` symmetric."""
    off = [(i, k) for i in range(M) for k in range(M) if i != k]
    sym = [(i, k) for i in range(M) for k in range(i + 1, M)]
    Ts = []
    for bits in itertools.product([0, 1], repeat=len(sym)):
        T = np.eye(M, dtype=np.uint8)
        for (i, k), b in zip(sym, bits):
            T[i, k] = T[k, i] = b
        Ts.append(T)
    Rs = []
    for bits in itertools.product([0, 1], repeat=len(off)):
        R = np.eye(M, dtype=np.uint8)
        for (i, k), b in zip(off, bits):
            R[i, k] = b
        Rs.append(R)
    return Ts, Rs


# --- pattern files ----------------------------------------------------------


def pattern_from_dict(d: dict) -> SparsityPattern:
    try:
        M = int(d["M"])
        S = np.asarray(d["S"])
        T = d["T"]
        R = d["R"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed pattern document: {exc}") from None
    p = SparsityPattern(S, T, R, d.get("block_sizes"))
    if p.M != M:
        raise ValueError(f"pattern declares M={M} but S is {p.S.shape}")
    return p


def pattern_to_dict(p: SparsityPattern) -> dict:
    return {
        "M": p.M,
        "block_sizes": p.block_sizes,
        "S": p.S.tolist(),
        "T": [t.tolist() for t in p.T],
        "R": [r.tolist() for r in p.R],
    }


def load_pattern(path) -> SparsityPattern:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    return pattern_from_dict(d)


def save_pattern(p: SparsityPattern, path) -> None:
    Path(path).write_text(json.dumps(pattern_to_dict(p), indent=1) + "\n")
