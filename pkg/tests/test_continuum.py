from __future__ import annotations

import numpy as np
import pytest

from hdnn.continuum import (
    G2,
    constant_config,
    eq25_config,
    exploding_probe,
    identity_path,
    integrate_forward,
    integrate_sensitivity,
    kron_G,
    network_config,
    ode2ode_check,
    ode2ode_config,
    period_estimate,
    planar_energy,
    planar_path,
    random_config,
    rotation_path,
    sensitivity_report,
    upper_bound_Q,
)
from hdnn.core_math import canonical_J
from hdnn.layers import BIAS_NAMES, forward_net, init_network


def test_zero_field_keeps_state(rng):
    cfg = constant_config(np.zeros((4, 4)), canonical_J(4), rng.standard_normal(4), T=2.0, step=0.1)
    y0 = rng.standard_normal(4)
    traj = integrate_forward(cfg, y0)
    assert np.all(traj.y == y0)


def test_energy_conserved_for_time_invariant_weights():
    traj = integrate_forward(eq25_config(T=20.0, step=1e-3), [1.2, -0.4])
    assert np.max(np.abs(traj.H - traj.H[0])) <= 1e-8


def test_rk4_is_fourth_order(rng):
    cfg = random_config(4, rng, T=2.0, step=0.1)
    y0 = rng.standard_normal(4)

    def end(step):
        c = random_config(4, np.random.default_rng(7), T=2.0, step=step)
        return integrate_forward(c, y0).y[-1]

    ref = end(0.025)
    ratio = np.linalg.norm(end(0.1) - ref) / np.linalg.norm(end(0.05) - ref)
    # (1 - 1/256) / (1/16 - 1/256) = 17 for an exact fourth-order error
    assert 13 < ratio < 21


def test_invalid_configs():
    with pytest.raises(ValueError):
        constant_config(np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        constant_config(np.eye(2), G2, T=-1.0)


# --- sensitivity ------------------------------------------------------------


def test_sensitivity_starts_at_identity(rng):
    cfg = random_config(4, rng, T=1.0, step=1e-2)
    traj = integrate_sensitivity(cfg, integrate_forward(cfg, rng.standard_normal(4)))
    assert np.array_equal(traj.sens[0], np.eye(4))


def test_zero_weights_sensitivity_is_identity(rng):
    cfg = constant_config(np.zeros((4, 4)), kron_G(4), T=1.0, step=1e-2)
    t, norm, res = sensitivity_report(cfg, integrate_forward(cfg, rng.standard_normal(4)))
    assert np.all(res <= 1e-12) and np.allclose(norm, 1.0, atol=0)


@pytest.mark.parametrize("seed", range(5))
def test_sensitivity_is_symplectic_and_never_shrinks(seed):
    rng = np.random.default_rng(seed)
    cfg = random_config(4, rng, T=5.0, step=1e-2, scale=1.5)
    _, norm, res = sensitivity_report(cfg, integrate_forward(cfg, rng.standard_normal(4)))
    assert res.max() <= 1e-6
    assert norm.min() >= 1 - 1e-6


def test_sensitivity_matches_fd_of_flow(rng):
    cfg = random_config(4, np.random.default_rng(3), T=1.0, step=1e-3)
    y0 = rng.standard_normal(4)
    traj = integrate_sensitivity(cfg, integrate_forward(cfg, y0))
    Phi = traj.sens[-1]  # d y(T) / d y(0), denominator layout
    e = 1e-6
    for i in range(4):
        d = np.zeros(4)
        d[i] = e
        col = (integrate_forward(cfg, y0 + d).y[-1] - integrate_forward(cfg, y0 - d).y[-1]) / (2 * e)
        assert np.allclose(Phi[i], col, atol=1e-7)


def test_upper_bound_examples():
    cfg = constant_config(np.eye(2), G2, T=1.0)
    Q, bound = upper_bound_Q(cfg)
    assert Q == pytest.approx(np.sqrt(2), rel=1e-12)
    assert bound == pytest.approx(np.sqrt(2) * np.exp(np.sqrt(2)), rel=1e-12)
    assert bound == pytest.approx(5.80, abs=2e-2)
    assert upper_bound_Q(constant_config(np.zeros((4, 4)), kron_G(4), T=3.0)) == (0.0, 2.0)


def test_upper_bound_holds_on_random_configs():
    rng = np.random.default_rng(11)
    for _ in range(50):
        cfg = random_config(4, rng, T=1.0, step=2e-2)
        _, norm, _ = sensitivity_report(cfg, integrate_forward(cfg, rng.standard_normal(4)))
        assert norm.max() <= upper_bound_Q(cfg)[1]


# --- discrete networks as ODE discretizations ---------------------------------


def constant_weight_net(arch, N, T, seed=0):
    """Every layer shares one random weight set, drawn independently of ``N``."""
    net = init_network(arch, 4, N, h=T / N)
    rng = np.random.default_rng(seed)
    for k in sorted(net.params):
        scale = 0.3 if k in BIAS_NAMES else 1.0
        net.params[k][:] = scale * rng.standard_normal(net.params[k].shape[1:])
    return net


@pytest.mark.parametrize("arch,order", [("H1", 1), ("H2", 1)])
def test_network_converges_to_ode(arch, order, rng):
    T = 2.0
    y0 = rng.standard_normal(4)
    errs = []
    for N in (40, 80, 160):
        net = constant_weight_net(arch, N, T)
        cfg = network_config(net, step=1e-3)
        ref = integrate_forward(cfg, y0).y[-1]
        errs.append(np.linalg.norm(forward_net(net, y0)[1][-1] - ref))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - order) < 0.25), rates


def test_semi_implicit_keeps_energy_bounded_while_forward_euler_drifts(rng):
    T, N = 200.0, 2000
    y0 = rng.standard_normal(4)
    drift = {}
    for arch in ("H1", "H2"):
        net = constant_weight_net(arch, N, T, seed=2)
        if arch == "H1":
            # same Hamiltonian as the H2 net: block-diagonal K, canonical J
            h2 = constant_weight_net("H2", N, T, seed=2)
            K = np.zeros((N, 4, 4))
            K[:, :2, :2], K[:, 2:, 2:] = h2.params["Kp"], h2.params["Kq"]
            net.params["K"] = K
            net.params["b"] = np.concatenate([h2.params["bp"], h2.params["bq"]], axis=1)
        cfg = network_config(net)
        _, states = forward_net(net, y0)
        H = np.array([cfg.hamiltonian(0.0, s) for s in states])
        drift[arch] = np.max(np.abs(H - H[0]))
    assert drift["H2"] < 0.1 * drift["H1"]


# --- exploding sensitivities on the planar example ----------------------------


def test_probe_at_time_zero_is_beta_norm():
    beta = np.array([0.6, 0.8])
    r = exploding_probe(5e-3, beta, 10.0, [0.0, 5.0, 10.0], step=0.05)
    assert r[0] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        exploding_probe(0.0, beta, 10.0, [0.0])


def test_probe_grows_over_time():
    t = np.linspace(0.0, 600.0, 13)
    r = exploding_probe(5e-3, [1.0, 0.0], 600.0, t, step=0.05)
    assert r[-1] > 10 * r[0]


def test_period_is_an_orbit_property():
    y0 = np.array([1.0, 0.0])
    P = period_estimate(y0)
    half = planar_path(y0, P / 2 / 2000, 2000)[-1]
    assert period_estimate(half) == pytest.approx(P, rel=1e-4)


def test_orbit_closes_after_one_period():
    y0 = np.array([1.5, 0.0])
    P = period_estimate(y0)
    k = int(np.ceil(P / 1e-3))
    assert np.max(np.abs(planar_path(y0, P / k, k)[-1] - y0)) <= 1e-5


@pytest.mark.parametrize("gamma", [0.01, 0.1])
def test_period_grows_with_energy(gamma):
    y0 = np.array([0.8, 0.6])
    beta = y0 / np.linalg.norm(y0)
    y1 = y0 + gamma * beta
    assert planar_energy(y1) > planar_energy(y0)
    assert period_estimate(y1) > period_estimate(y0)


def test_period_validation():
    with pytest.raises(ValueError):
        period_estimate([0.0, 0.0])


# --- orthogonal weights --------------------------------------------------------


@pytest.mark.parametrize("path", ["identity", "rotation"])
def test_ode2ode_weights_are_orthogonal(path):
    M = identity_path(4) if path == "identity" else rotation_path(4, 1.3)
    cfg = ode2ode_config(M, 4, T=5.0)
    for t in np.linspace(0.0, 5.0, 11):
        K = cfg.K(t)
        assert np.allclose(K.T @ K, np.eye(4), atol=1e-12)
    with pytest.raises(ValueError):
        ode2ode_config(lambda t: 2 * np.eye(4), 4)


def test_rotation_path_really_varies():
    cfg = ode2ode_config(rotation_path(4, 1.0), 4, T=1.0)
    assert not np.allclose(cfg.K(0.0), cfg.K(1.0))


@pytest.mark.parametrize("path", ["identity", "rotation"])
def test_ode2ode_ratio_within_bound_for_unit_horizon(path, rng):
    M = identity_path(4) if path == "identity" else rotation_path(4, 1.0)
    rep = ode2ode_check(M, 4, rng.standard_normal(4), rng.standard_normal(4), T=1.0, step=1e-3)
    assert rep.within and rep.within_all_directions


@pytest.mark.parametrize("path", ["identity", "rotation"])
def test_ode2ode_growth_at_most_exponential(path, rng):
    # ||K^T D K J^T|| <= 1 for orthogonal K and |act'| = 1
    M = identity_path(4) if path == "identity" else rotation_path(4, 1.0)
    rep = ode2ode_check(M, 4, rng.standard_normal(4), rng.standard_normal(4), T=5.0, step=1e-3)
    assert np.all(rep.sv_max <= np.exp(rep.t) * (1 + 1e-9))
    assert np.all(rep.sv_min >= np.exp(-rep.t) * (1 - 1e-9))
