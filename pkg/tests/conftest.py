from __future__ import annotations

import numpy as np
import pytest

from hdnn.backprop import cross_entropy
from hdnn.layers import BIAS_NAMES, forward_net, init_network

ARCHS = ["H1", "H2", "MS1", "MS2", "MS3", "MLP"]


def random_net(arch, n=4, N=4, seed=0, weight_std=None, bias_std=0.5, **kw):
    """``init_network`` with random (non-zero) biases, so no layer sits at a symmetric point."""
    net = init_network(arch, n, N, rng=seed, weight_std=weight_std, **kw)
    rng = np.random.default_rng(seed + 1000)
    for k in net.params:
        if k in BIAS_NAMES:
            net.params[k] = bias_std * rng.standard_normal(net.params[k].shape)
    net.head.c = 0.1 * rng.standard_normal(net.head.c.shape)
    return net


def batch_loss(net, Y0, labels):
    logits, _ = forward_net(net, Y0)
    return cross_entropy(logits, labels)[0]


def rel_err(a, b, floor=1e-6):
    """``|a - b| / max(|a|, |b|, floor)`` element-wise; the floor keeps near-zero entries from dominating."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, echoed in the terminal summary as one line each
VERDICTS: dict = {}


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str) -> bool:
        VERDICTS[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for k in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[k])
