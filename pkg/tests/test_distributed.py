from __future__ import annotations

import itertools

import numpy as np
import pytest

from hdnn.backprop import loss_and_grads
from hdnn.core_math import bin_leq
from hdnn.distributed import (
    DistributedH2Config,
    SparsityPattern,
    apply_masks,
    build_masks,
    check_condition,
    condition_holds,
    dependency_bound,
    enumerate_patterns,
    example1,
    load_pattern,
    locality_oracle,
    masked_grads,
    pattern_from_dict,
    ring,
    ring_pattern,
    save_pattern,
)
from hdnn.layers import init_network
from hdnn.training import RegConfig, reg_value_and_grads

from conftest import random_net


def masked_net(T, R, per_node=1, N=1, seed=0):
    """H2 net whose X and weights are dense random inside the allowed blocks."""
    M = len(T)
    rng = np.random.default_rng(seed)
    net = random_net("H2", n=2 * M * per_node, N=N, seed=seed, weight_std=1.0)
    net.fixed["X"] = rng.standard_normal((M * per_node,) * 2) + 2 * np.eye(M * per_node)
    S = np.ones((M, M), dtype=int)
    cfg = DistributedH2Config.uniform(SparsityPattern(S, [T], [R]), per_node)
    return apply_masks(net, cfg), cfg


def all_graphs(M):
    Ts, _ = enumerate_patterns(M)
    return Ts  # symmetric with unit diagonal: exactly the admissible graphs


# --- the condition ----------------------------------------------------------


def test_example1_accepted():
    S, pairs = example1()
    for T, R in pairs:
        assert condition_holds(T, R, S)
    p = SparsityPattern(S, [t for t, _ in pairs], [r for _, r in pairs])
    assert check_condition(p) == [True, True, True]


def test_isolated_nodes_only_admit_identity():
    for M in (2, 3, 4):
        I = np.eye(M, dtype=int)
        Ts, Rs = enumerate_patterns(M)
        # every T contains I and Boolean products are monotone, so an R that
        # fails with T = I fails for every T
        Rs = [R for R in Rs if condition_holds(I, R, I)]
        ok = [(T, R) for T in Ts for R in Rs if condition_holds(T, R, I)]
        assert len(ok) == 1
        assert np.array_equal(ok[0][0], I) and np.array_equal(ok[0][1], I)


def test_forced_rejection():
    assert not condition_holds(np.ones((2, 2)), np.eye(2), np.eye(2))


def test_pattern_validation():
    with pytest.raises(ValueError):
        SparsityPattern(np.eye(2), [np.array([[1, 1], [0, 1]])], [np.eye(2)])
    with pytest.raises(ValueError):
        SparsityPattern(np.array([[1, 1], [0, 1]]), [np.eye(2)], [np.eye(2)])
    with pytest.raises(ValueError):
        SparsityPattern(np.zeros((2, 2)), [np.eye(2)], [np.eye(2)])
    with pytest.raises(ValueError):
        SparsityPattern(np.eye(2), [np.eye(3)], [np.eye(2)])


def test_ring_pattern_accepted():
    p = ring_pattern(8)
    assert check_condition(p) == [True]
    assert ring(8)[0].tolist() == [1, 1, 0, 0, 0, 0, 0, 1]
    assert p.S.sum(axis=1).tolist() == [5] * 8


# --- masks ------------------------------------------------------------------


def test_full_mask_leaves_net_unchanged():
    net = random_net("H2", n=8, N=2)
    ones = np.ones((4, 4), dtype=int)
    out = apply_masks(net, DistributedH2Config.uniform(SparsityPattern(ones, [ones], [ones]), 1))
    for k in net.params:
        assert np.array_equal(out.params[k], net.params[k])
    g = {k: np.ones_like(v) for k, v in net.params.items()}
    assert all(np.array_equal(a, g[k]) for k, a in masked_grads(g, out.masks).items())


def test_identity_mask_gives_block_diagonal_weights():
    net = random_net("H2", n=8, N=2)
    I = np.eye(2, dtype=int)
    out = apply_masks(net, DistributedH2Config.uniform(SparsityPattern(I, [I], [I]), 2))
    for k in ("Kp", "Kq"):
        assert not np.any(out.params[k][:, :2, 2:]) and not np.any(out.params[k][:, 2:, :2])
        assert np.array_equal(out.params[k][:, :2, :2], net.params[k][:, :2, :2])
    g = masked_grads({"Kp": np.ones((2, 4, 4))}, out.masks)["Kp"]
    assert g[:, :2, 2:].sum() == 0 and g[:, :2, :2].sum() == 8


def test_full_variant_masks_cover_all_quadrants():
    net = init_network("H2", 8, 2, h2_variant="full")
    I = np.eye(2, dtype=int)
    masks, Xmask = build_masks(net, DistributedH2Config.uniform(SparsityPattern(I, [I], [I]), 2))
    mk = masks["K"][0]
    assert mk.shape == (8, 8) and mk.sum() == 4 * 8
    assert Xmask.sum() == 8


def test_apply_masks_rejects_violating_pattern():
    net = random_net("H2", n=4, N=1)
    bad = SparsityPattern(np.eye(2), [np.ones((2, 2))], [np.eye(2)])
    with pytest.raises(ValueError):
        apply_masks(net, DistributedH2Config.uniform(bad, 1))


def test_masked_entries_stay_zero_under_projected_steps(rng):
    net, cfg = masked_net(np.eye(3, dtype=int), ring(3) * np.tri(3, dtype=int), per_node=1, N=3)
    zero = {k: net.masks[k] == 0 for k in net.masks}
    X = rng.standard_normal((32, 6))
    y = rng.integers(0, 2, 32)
    for _ in range(20):
        _, G, _, _ = loss_and_grads(net, X, y)
        net.params = {k: v - 0.1 * G.params[k] for k, v in net.params.items()}
    for k, z in zero.items():
        assert np.all(net.params[k][z] == 0.0)


def test_projected_stationarity_on_toy_problem(rng):
    # gradient descent on the masked problem drives the projected gradient to
    # zero, while the unprojected gradient on masked entries need not vanish
    I = np.eye(2, dtype=int)
    net, _ = masked_net(I, I, per_node=1, N=2, seed=4)
    X = rng.standard_normal((16, 4))
    y = (X[:, 0] * X[:, 3] > 0).astype(int)
    reg = RegConfig(alpha=0.0, alpha_ell=5e-2, alpha_N=5e-2)

    def grads(n):
        _, G, _, _ = loss_and_grads(n, X, y)
        _, R = reg_value_and_grads(n, reg)
        return G + R

    for _ in range(4000):
        G = grads(net)
        net.params = {k: v - 0.5 * G.params[k] for k, v in net.params.items()}
        net.head.W = net.head.W - 0.5 * G.W
        net.head.c = net.head.c - 0.5 * G.c
    G = grads(net)
    assert np.linalg.norm(G.flat()) < 1e-4
    free = net.copy()
    free.masks = None
    full = grads(free)
    off = np.concatenate([full.params[k][net.masks[k] == 0] for k in ("Kp", "Kq")])
    assert np.linalg.norm(off) > 1e-4


# --- locality ---------------------------------------------------------------


def test_identity_patterns_have_identity_dependency(rng):
    I = np.eye(3, dtype=int)
    net, cfg = masked_net(I, I, N=2)
    assert np.array_equal(locality_oracle(net, cfg, rng.standard_normal(6)), I)


def test_example1_nodes_2_and_4_never_interact(rng):
    S, pairs = example1()
    for T, R in pairs:
        net, cfg = masked_net(T, R, per_node=2, seed=3)
        dep = locality_oracle(net, cfg, rng.standard_normal(16))
        assert bin_leq(dep, S)
        assert dep[1, 3] == 0 and dep[3, 1] == 0


def test_exhaustive_three_node_locality():
    M = 3
    Ts, Rs = enumerate_patterns(M)
    graphs = all_graphs(M)
    rng = np.random.default_rng(0)
    accepted = 0
    for T, R in itertools.product(Ts, Rs):
        ok = [S for S in graphs if condition_holds(T, R, S)]
        if not ok:
            continue
        net, cfg = masked_net(T, R, seed=int(rng.integers(1 << 30)))
        dep = locality_oracle(net, cfg, rng.standard_normal(2 * M))
        assert bin_leq(dep, dependency_bound(T, R))
        for S in ok:
            accepted += 1
            assert bin_leq(dep, S)
    assert accepted == 600


def test_random_admissible_patterns_respect_graph():
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 100:
        M = int(rng.integers(2, 6))
        T = np.triu(rng.random((M, M)) < 0.3, 1).astype(int)
        T = T + T.T + np.eye(M, dtype=int)
        R = ((rng.random((M, M)) < 0.3) | np.eye(M, dtype=bool)).astype(int)
        S = dependency_bound(T, R)
        S = ((S + S.T) > 0).astype(int)
        assert condition_holds(T, R, S)
        net, cfg = masked_net(T, R, seed=checked)
        assert bin_leq(locality_oracle(net, cfg, rng.standard_normal(2 * M)), S)
        checked += 1


# --- files ------------------------------------------------------------------


def test_pattern_json_roundtrip(tmp_path):
    S, pairs = example1()
    p = SparsityPattern(S, [t for t, _ in pairs], [r for _, r in pairs])
    save_pattern(p, tmp_path / "p.json")
    q = load_pattern(tmp_path / "p.json")
    assert np.array_equal(q.S, p.S) and all(np.array_equal(a, b) for a, b in zip(q.R, p.R))


def test_malformed_pattern_documents(tmp_path):
    with pytest.raises(ValueError):
        pattern_from_dict({"S": [[1]]})
    with pytest.raises(ValueError):
        pattern_from_dict({"M": 3, "S": [[1, 0], [0, 1]], "T": [[[1, 0], [0, 1]]], "R": [[[1, 0], [0, 1]]]})
    (tmp_path / "x.json").write_text("{not json")
    with pytest.raises(ValueError):
        load_pattern(tmp_path / "x.json")
    assert pattern_from_dict({"M": 1, "S": [[1]], "T": [[1]], "R": [[1]]}).M == 1
