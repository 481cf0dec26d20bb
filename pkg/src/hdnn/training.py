"""Loss, regularizers, Adam and the coordinate-descent training loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .backprop import (
    GradientSet,
    bsm_trace,
    cross_entropy,
    hamiltonian_factors,
    loss_and_grads,
)
from .core_math import upper_grad
from .datasets import Dataset, split_and_batch
from .layers import Arch, Network, forward_net, predict

HISTORY_COLUMNS = ("epoch", "iteration", "train_loss", "train_acc", "test_acc", "min_bsm_norm", "max_bsm_norm")
GRAD_REPORT_COLUMNS = ("iteration", "layer_index", "bsm_norm_2", "bsm_norm_fro")


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite or exceeds the divergence limit."""

    def __init__(self, msg, last_good: Network, history: "History"):
        super().__init__(msg)
        self.last_good = last_good
        self.history = history


@dataclass
class RegConfig:
    alpha: float = 5e-4
    alpha_ell: float = 0.0
    alpha_N: float = 1e-4
    norm_reg: float = 0.0

    def __post_init__(self):
        for k in ("alpha", "alpha_ell", "alpha_N", "norm_reg"):
            if not getattr(self, k) >= 0:
                raise ValueError(f"{k} must be non-negative")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 125
    lr: float = 2.5e-2
    head_iters: int = 10
    seed: int = 0
    reg: RegConfig = field(default_factory=RegConfig)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    head_tol: float = 1e-6
    monitor_size: int = 16
    monitor_every: int = 1
    divergence_limit: float = 1e6

    def __post_init__(self):
        if isinstance(self.reg, dict):
            self.reg = RegConfig(**self.reg)
        if self.epochs < 0 or self.batch_size < 1 or self.head_iters < 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and head_iters >= 0 required")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


# --- loss and regularizers --------------------------------------------------


def loss_and_grad(logits, label: int):
    """Cross-entropy of one sample: ``(-log softmax(logits)[label], softmax - onehot)``."""
    loss, g = cross_entropy(np.asarray(logits, dtype=float)[None], [label])
    return float(loss), g[0]


def _top_singular_grad(K):
    """Value and subgradient of the 2-norm of each matrix in a stack."""
    U, s, Vt = np.linalg.svd(K)
    return s[..., 0], U[..., :, :1] @ Vt[..., :1, :]


def reg_value_and_grads(net: Network, cfg: RegConfig):
    """``alpha R_K + alpha_ell R_ell + alpha_N R_N (+ norm_reg sum_j ||K_j|| + ||J_j||)``.

    ``R_K`` penalises differences between consecutive layers for every
    per-layer weight and bias (not ``J``), ``R_ell`` is half the squared norm
    of the hidden parameters and ``R_N`` half the squared norm of the head
    weight matrix.
    """
    g = {k: np.zeros_like(v) for k, v in net.params.items()}
    gW = np.zeros_like(net.head.W)
    value = 0.0
    if cfg.alpha and net.N > 1:
        for k, v in net.params.items():
            if k == "Ju":
                continue
            d = np.diff(v, axis=0)
            value += cfg.alpha * 0.5 * net.h * float(np.sum(d * d))
            gd = cfg.alpha * net.h * d
            g[k][1:] += gd
            g[k][:-1] -= gd
    if cfg.alpha_ell:
        for k, v in net.params.items():
            value += cfg.alpha_ell * 0.5 * float(np.sum(v * v))
            g[k] += cfg.alpha_ell * v
    if cfg.alpha_N:
        value += cfg.alpha_N * 0.5 * float(np.sum(net.head.W**2))
        gW += cfg.alpha_N * net.head.W
    if cfg.norm_reg and net.N:
        value += cfg.norm_reg * _norm_reg(net, g, cfg.norm_reg)
    if net.masks:
        g = {k: v * net.masks[k] if k in net.masks else v for k, v in g.items()}
    return value, GradientSet(g, gW, np.zeros_like(net.head.c))


def _norm_reg(net: Network, g: dict, weight: float) -> float:
    """Add ``weight`` times the gradient of ``sum_j ||K_j|| + ||J_j||`` into ``g``; return the sum."""
    if net.arch not in (Arch.H1, Arch.H2):
        raise ValueError("the norm regularizer is defined for H1 and H2 networks")
    K, J = hamiltonian_factors(net)
    sK, dK = _top_singular_grad(K)
    sJ, dJ = _top_singular_grad(np.asarray(J))
    m = net.m
    if net.arch is Arch.H1 or net.implicit:
        g["K"] += weight * dK
    else:
        g["Kp"] += weight * dK[:, :m, :m]
        g["Kq"] += weight * dK[:, m:, m:]
    if net.arch is Arch.H1 and net.trainable_J:
        g["Ju"] += weight * upper_grad(dJ, net.n)
    return float(np.sum(sK) + np.sum(sJ))


def regularized_loss(net: Network, X, y, reg: RegConfig) -> float:
    logits, _ = forward_net(net, np.atleast_2d(X))
    loss, _ = cross_entropy(logits, y)
    return float(loss) + reg_value_and_grads(net, reg)[0]


# --- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 2.5e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


def adam_step(state: AdamState, grads: dict, params: dict) -> dict:
    """One bias-corrected Adam update; returns new parameter arrays."""
    for k, g in grads.items():
        if k not in params or params[k].shape != g.shape:
            raise ValueError(f"gradient {k!r} does not match the parameters")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    out = dict(params)
    for k, g in grads.items():
        m = state.m.get(k, np.zeros_like(g))
        v = state.v.get(k, np.zeros_like(g))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[k], state.v[k] = m, v
        out[k] = params[k] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


# --- training loop ----------------------------------------------------------


@dataclass
class History:
    rows: list = field(default_factory=list)
    # (iteration, per-layer mean 2-norm, per-layer mean Frobenius norm)
    bsm: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in HISTORY_COLUMNS])

    def write_grad_report(self, path) -> None:
        write_grad_report(self.bsm, path)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_grad_report(entries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRAD_REPORT_COLUMNS)
        for it, n2, nf in entries:
            for j, (a, b) in enumerate(zip(n2, nf)):
                w.writerow([it, j, repr(float(a)), repr(float(b))])


def bsm_norm_summary(net: Network, X):
    """Per-layer BSM 2- and Frobenius norms averaged over the samples in ``X``."""
    tr = bsm_trace(net, forward_net(net, np.atleast_2d(X))[1])
    return tr.norm2.mean(axis=1), tr.norm_fro.mean(axis=1)


def evaluate(net: Network, data: Dataset) -> float:
    """Fraction of samples whose arg-max logit (lowest index on ties) equals the label."""
    if len(data) == 0:
        return float("nan")
    return float(np.mean(predict(net, data.features) == data.labels))


def _head_loss_grads(net, YN, y, alpha_N):
    logits = net.head(YN)
    loss, dlog = cross_entropy(logits, y)
    dW = dlog.T @ YN + alpha_N * net.head.W
    dc = dlog.sum(axis=0)
    return loss, dW, dc


def train(net: Network, data: Dataset, cfg: TrainConfig, test: Dataset | None = None, log=None):
    """Coordinate descent: up to ``head_iters`` Adam steps on the output head, then one on the hidden layers.

    Returns ``(trained copy of net, History)``. Raises :class:`TrainingDiverged`
    carrying the last finite parameters when the loss blows up.
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    if data.dim != net.n:
        raise ValueError(f"data dimension {data.dim} does not match network width {net.n}")
    net = net.copy()
    if net.masks:
        for k, mk in net.masks.items():
            net.params[k] = net.params[k] * mk
    rng = np.random.default_rng(cfg.seed)
    head_opt = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    hid_opt = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    hist = History()
    monitor = data.features[: cfg.monitor_size]
    it = 0
    if net.N and cfg.monitor_size:
        hist.bsm.append((0, *bsm_norm_summary(net, monitor)))
    for epoch in range(1, cfg.epochs + 1):
        for Xb, yb in split_and_batch(data, cfg.batch_size, rng):
            it += 1
            good = net.copy()
            # head sub-problem with hidden layers frozen
            YN = forward_net(net, Xb)[1][-1]
            for _ in range(cfg.head_iters):
                _, dW, dc = _head_loss_grads(net, YN, yb, cfg.reg.alpha_N)
                if math.sqrt(float(np.sum(dW**2) + np.sum(dc**2))) < cfg.head_tol:
                    break
                new = adam_step(head_opt, {"W": dW, "c": dc}, {"W": net.head.W, "c": net.head.c})
                net.head.W, net.head.c = new["W"], new["c"]
            # one step on the hidden layers
            loss, G, _, logits = loss_and_grads(net, Xb, yb)
            rv, RG = reg_value_and_grads(net, cfg.reg)
            total = float(loss) + rv
            if not math.isfinite(total) or total > cfg.divergence_limit:
                raise TrainingDiverged(f"loss {total!r} at iteration {it}", good, hist)
            if net.N:
                grads = {k: G.params[k] + RG.params[k] for k in net.params}
                net.params = adam_step(hid_opt, grads, net.params)
            row = {
                "epoch": epoch,
                "iteration": it,
                "train_loss": total,
                "train_acc": float(np.mean(np.argmax(logits, axis=1) == yb)),
                "test_acc": None,
                "min_bsm_norm": None,
                "max_bsm_norm": None,
            }
            if net.N and cfg.monitor_size and it % cfg.monitor_every == 0:
                n2, nf = bsm_norm_summary(net, monitor)
                hist.bsm.append((it, n2, nf))
                row["min_bsm_norm"] = float(n2.min())
                row["max_bsm_norm"] = float(n2.max())
            hist.rows.append(row)
        if test is not None and hist.rows:
            hist.rows[-1]["test_acc"] = evaluate(net, test)
            if log:
                log(f"epoch {epoch}: loss {hist.rows[-1]['train_loss']:.4f} test acc {hist.rows[-1]['test_acc']:.4f}")
    return net, hist
