"""Continuous-time Hamiltonian ODEs ``y' = J(t) K(t)^T act(K(t) y + b(t))``.

Reference solutions use the classical fourth-order Runge-Kutta method with a
fixed step. The backward sensitivity ``Phi(t) = dy(T)/dy(T-t)`` (denominator
layout, so ``delta(T-t) = Phi(t) delta(T)``) solves

    Phi' = K^T D K J^T |_(T-t) Phi,   Phi(0) = I,   D = diag(act'(K y + b))

and is integrated with twice the forward step so every Runge-Kutta stage
lands on a stored forward state.

The planar system ``y' = eps G tanh(y)`` with ``G = [[0, -1], [1, 0]]`` has
closed orbits whose period grows with the energy ``sum log cosh(y)``; it
is the running example for exploding sensitivities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._accel import njit, numba_enabled
from .backprop import hamiltonian_factors
from .core_math import ABS, TANH, Activation, frobenius_norm, spectral_norm
from .layers import Arch, Network

G2 = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass
class OdeConfig:
    K: Callable
    J: Callable
    b: Callable
    activation: Activation = TANH
    T: float = 1.0
    step: float = 1e-3

    def __post_init__(self):
        if not self.step > 0 or not self.T > 0:
            raise ValueError("horizon and step must be positive")
        J0 = np.asarray(self.J(0.0))
        if not np.allclose(J0, -J0.T, atol=1e-12):
            raise ValueError("J(t) must be skew-symmetric")

    @property
    def n(self) -> int:
        return np.asarray(self.K(0.0)).shape[1]

    @property
    def n_steps(self) -> int:
        # even, so the sensitivity solve can take double steps
        k = int(np.ceil(self.T / self.step - 1e-9))
        return k + (k % 2)

    def field(self, t, y):
        K = self.K(t)
        return self.J(t) @ (K.T @ self.activation(K @ y + self.b(t)))

    def hamiltonian(self, t, y):
        return float(np.sum(self.activation.potential(self.K(t) @ y + self.b(t))))


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    H: np.ndarray | None = None
    sens: np.ndarray | None = None


def constant_config(K, J, b=None, activation=TANH, T=1.0, step=1e-3) -> OdeConfig:
    K = np.asarray(K, dtype=float)
    J = np.asarray(J, dtype=float)
    b = np.zeros(K.shape[0]) if b is None else np.asarray(b, dtype=float)
    return OdeConfig(lambda t: K, lambda t: J, lambda t: b, activation, T, step)


def eq25_config(eps: float = 1.0, T: float = 20.0, step: float = 1e-3) -> OdeConfig:
    """``y' = eps G tanh(y)``: ``K = I``, ``b = 0``, ``J = eps G``."""
    return constant_config(np.eye(2), eps * G2, None, TANH, T, step)


def network_config(net: Network, step: float | None = None) -> OdeConfig:
    """Piecewise-constant weights of an H1/H2 network held over intervals of length ``h``."""
    if net.arch not in (Arch.H1, Arch.H2):
        raise ValueError("only H1 and H2 networks discretize the Hamiltonian ODE")
    K, J = hamiltonian_factors(net)
    if net.arch is Arch.H1 or net.implicit:
        b = net.params["b"]
    else:
        b = np.concatenate([net.params["bp"], net.params["bq"]], axis=1)
    N, h = net.N, net.h

    def idx(t):
        return min(max(int(np.floor(t / h + 1e-12)), 0), N - 1)

    return OdeConfig(
        lambda t: K[idx(t)],
        lambda t: J[idx(t)],
        lambda t: b[idx(t)],
        net.activation,
        N * h,
        step if step is not None else min(1e-3, h / 10),
    )


def random_config(n: int, rng=None, T: float = 5.0, step: float = 1e-3, scale: float = 1.0, J=None) -> OdeConfig:
    """Smooth time-varying ``K(t), b(t)`` and a constant random skew ``J``."""
    rng = np.random.default_rng(rng)
    K0, K1 = scale * rng.standard_normal((2, n, n)) / np.sqrt(n)
    b0, b1 = 0.5 * rng.standard_normal((2, n))
    w = rng.uniform(0.5, 2.0, size=2)
    if J is None:
        A = rng.standard_normal((n, n))
        J = (A - A.T) / np.sqrt(2 * n)
    J = np.asarray(J, dtype=float)
    return OdeConfig(
        lambda t: K0 + K1 * np.sin(w[0] * t),
        lambda t: J,
        lambda t: b0 + b1 * np.cos(w[1] * t),
        TANH,
        T,
        step,
    )


# --- integrators ------------------------------------------------------------


def integrate_forward(cfg: OdeConfig, y0) -> Trajectory:
    """Fixed-step RK4 from ``t = 0`` to ``T``; records every state and ``H(y(t))``."""
    y = np.asarray(y0, dtype=float).copy()
    if y.shape != (cfg.n,):
        raise ValueError(f"initial state must have dimension {cfg.n}")
    k = cfg.n_steps
    dt = cfg.T / k
    t = np.linspace(0.0, cfg.T, k + 1)
    Y = np.empty((k + 1, cfg.n))
    Y[0] = y
    f = cfg.field
    for i in range(k):
        ti = t[i]
        k1 = f(ti, y)
        k2 = f(ti + dt / 2, y + dt / 2 * k1)
        k3 = f(ti + dt / 2, y + dt / 2 * k2)
        k4 = f(ti + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"state became non-finite at t={t[i + 1]:g}")
        Y[i + 1] = y
    H = np.array([cfg.hamiltonian(ti, yi) for ti, yi in zip(t, Y)])
    return Trajectory(t, Y, H)


def _sens_matrix(cfg: OdeConfig, s, y):
    K = cfg.K(s)
    D = cfg.activation.deriv(K @ y + cfg.b(s))
    return K.T @ (D[:, None] * K) @ cfg.J(s).T


def integrate_sensitivity(cfg: OdeConfig, traj: Trajectory) -> Trajectory:
    """``Phi(t) = dy(T)/dy(T-t)`` on ``t = 0, 2dt, ..., T`` along a stored trajectory.

    Solving the matrix ODE is the same as solving it for each column with a
    unit-vector initial condition.
    """
    k = len(traj.t) - 1
    if k % 2:
        raise ValueError("trajectory needs an even number of steps")
    n = cfg.n
    T = traj.t[-1]
    dt2 = 2 * T / k
    ts = np.linspace(0.0, T, k // 2 + 1)
    Phi = np.eye(n)
    out = np.empty((len(ts), n, n))
    out[0] = Phi
    for i in range(k // 2):
        # stages at T - t, T - t - dt, T - t - 2 dt  ->  trajectory indices
        a = k - 2 * i
        A0 = _sens_matrix(cfg, traj.t[a], traj.y[a])
        A1 = _sens_matrix(cfg, traj.t[a - 1], traj.y[a - 1])
        A2 = _sens_matrix(cfg, traj.t[a - 2], traj.y[a - 2])
        k1 = A0 @ Phi
        k2 = A1 @ (Phi + dt2 / 2 * k1)
        k3 = A1 @ (Phi + dt2 / 2 * k2)
        k4 = A2 @ (Phi + dt2 * k3)
        Phi = Phi + dt2 / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(Phi)):
            raise FloatingPointError("sensitivity became non-finite")
        out[i + 1] = Phi
    return Trajectory(traj.t, traj.y, traj.H, out)


def sensitivity_report(cfg: OdeConfig, traj: Trajectory):
    """``(t, ||Phi(t)||_2, ||Phi^T J Phi - J||_F)`` with ``J = J(0)``."""
    if traj.sens is None:
        traj = integrate_sensitivity(cfg, traj)
    ts = np.linspace(0.0, traj.t[-1], len(traj.sens))
    J = np.asarray(cfg.J(0.0))
    P = traj.sens
    res = frobenius_norm(np.swapaxes(P, 1, 2) @ J @ P - J)
    return ts, spectral_norm(P), res


def upper_bound_Q(cfg: OdeConfig, n_samples: int | None = None):
    """``(Q, sqrt(n) exp(Q T))`` with the max of ``||K||^2 ||J||`` over a time grid."""
    k = n_samples or cfg.n_steps
    ts = np.linspace(0.0, cfg.T, k + 1)
    Ks = np.stack([cfg.K(t) for t in ts])
    Js = np.stack([cfg.J(t) for t in ts])
    Q = cfg.activation.S_bound * np.sqrt(cfg.n) * float(np.max(spectral_norm(Ks) ** 2 * spectral_norm(Js)))
    x = Q * cfg.T
    return Q, math.inf if x > 700 else math.sqrt(cfg.n) * math.exp(x)


# --- the planar example -----------------------------------------------------


@njit
def _planar_flow_nb(Y, durations, step, eps):
    out = Y.copy()
    for i in range(Y.shape[0]):
        d = durations[i]
        k = int(np.ceil(d / step - 1e-9))
        if k == 0:
            continue
        dt = d / k
        a, b = out[i, 0], out[i, 1]
        for _ in range(k):
            k1a, k1b = -eps * np.tanh(b), eps * np.tanh(a)
            a2, b2 = a + 0.5 * dt * k1a, b + 0.5 * dt * k1b
            k2a, k2b = -eps * np.tanh(b2), eps * np.tanh(a2)
            a3, b3 = a + 0.5 * dt * k2a, b + 0.5 * dt * k2b
            k3a, k3b = -eps * np.tanh(b3), eps * np.tanh(a3)
            a4, b4 = a + dt * k3a, b + dt * k3b
            k4a, k4b = -eps * np.tanh(b4), eps * np.tanh(a4)
            a = a + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
            b = b + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        out[i, 0], out[i, 1] = a, b
    return out


def _planar_flow_np(Y, durations, step, eps):
    out = Y.copy()
    ks = np.ceil(durations / step - 1e-9).astype(np.int64)
    dts = np.where(ks > 0, durations / np.maximum(ks, 1), 0.0)[:, None]

    def f(Z):
        return eps * np.stack([-np.tanh(Z[:, 1]), np.tanh(Z[:, 0])], axis=1)

    for s in range(int(ks.max(initial=0))):
        act = ks > s
        Z, dt = out[act], dts[act]
        k1 = f(Z)
        k2 = f(Z + 0.5 * dt * k1)
        k3 = f(Z + 0.5 * dt * k2)
        k4 = f(Z + dt * k3)
        out[act] = Z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return out


def planar_flow(Y, durations, step: float = 1e-2, eps: float = 1.0, use_numba=None):
    """Advance each row of ``Y`` by its own duration under ``y' = eps G tanh(y)``.

    A row with duration ``d`` takes ``ceil(d / step)`` equal RK4 steps.
    """
    Y = np.ascontiguousarray(np.atleast_2d(Y), dtype=np.float64)
    d = np.broadcast_to(np.asarray(durations, dtype=np.float64), (Y.shape[0],)).copy()
    if np.any(d < 0):
        raise ValueError("durations must be non-negative")
    if numba_enabled() if use_numba is None else use_numba:
        return _planar_flow_nb(Y, d, float(step), float(eps))
    return _planar_flow_np(Y, d, float(step), float(eps))


@njit
def _planar_path_nb(y0, step, k, eps):
    out = np.empty((k + 1, 2))
    out[0, 0], out[0, 1] = y0[0], y0[1]
    dur = np.full(1, step)
    cur = out[:1].copy()
    for i in range(k):
        cur = _planar_flow_nb(cur, dur, step, eps)
        out[i + 1, 0], out[i + 1, 1] = cur[0, 0], cur[0, 1]
    return out


def planar_path(y0, step: float, k: int, eps: float = 1.0, use_numba=None) -> np.ndarray:
    """States at ``0, step, ..., k step`` of the planar flow started at ``y0``."""
    y0 = np.asarray(y0, dtype=np.float64)
    if numba_enabled() if use_numba is None else use_numba:
        return _planar_path_nb(y0, float(step), int(k), float(eps))
    out = np.empty((k + 1, 2))
    out[0] = y0
    for i in range(k):
        out[i + 1] = _rk4_planar(out[i], step, eps)
    return out


def planar_energy(y) -> np.ndarray:
    return np.sum(TANH.potential(np.asarray(y, dtype=float)), axis=-1)


def exploding_probe(gamma: float, beta, T: float, t_grid, y_init=(1.5, 0.0), step: float = 2e-2, eps: float = 1.0):
    """``||s(T, T-t, y0 + gamma beta) - s(T, T-t, y0)|| / gamma`` with ``y0 = s(T-t, 0, y_init)``.

    ``s(t1, t0, x)`` is the state at ``t1`` when starting from ``x`` at
    ``t0``. The system is autonomous, so one RK4 path from ``y_init`` gives
    every base point ``y0`` and the unperturbed end state; only the perturbed
    solves are integrated separately, with the same step. Probe times are
    rounded to multiples of ``step``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(t_grid > T + 1e-9):
        raise ValueError("probe times must lie in [0, T]")
    k_total = int(round(T / step))
    k_t = np.rint(t_grid / step).astype(np.int64)
    path = planar_path(np.asarray(y_init, dtype=float), step, k_total, eps)
    starts = path[k_total - k_t]
    pert = planar_flow(starts + gamma * np.asarray(beta, dtype=float), k_t * step, step, eps)
    return np.linalg.norm(pert - path[-1], axis=1) / gamma


def saturation_value(curve) -> float:
    """Plateau height of a probe curve: the maximum over its second half."""
    curve = np.asarray(curve)
    return float(np.max(curve[len(curve) // 2 :]))


def period_estimate(y0, eps: float = 1.0, step: float = 1e-3, t_max: float = 1e4) -> float:
    """First time the unwrapped polar angle has advanced by ``2 pi``.

    The crossing is located by linear interpolation between RK4 grid points
    and then polished with a few secant-style corrections to 1e-6 in angle.
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (2,) or not np.any(y0):
        raise ValueError("period needs a non-zero planar state")
    sgn = np.sign(eps)
    theta0 = np.arctan2(y0[1], y0[0])
    target = theta0 + sgn * 2 * np.pi
    chunk = 4096
    y, t, prev_ang = y0.copy(), 0.0, theta0
    while t < t_max:
        ys = planar_path(y, step, chunk, eps)
        ang = prev_ang + np.concatenate([[0.0], np.cumsum(_wrap(np.diff(np.arctan2(ys[:, 1], ys[:, 0]))))])
        hit = np.nonzero(sgn * (ang - target) >= 0)[0]
        if hit.size:
            i = hit[0]
            frac = (target - ang[i - 1]) / (ang[i] - ang[i - 1])
            tau = frac * step
            base_t, base_y = t + (i - 1) * step, ys[i - 1]
            for _ in range(20):
                z = _rk4_planar(base_y, tau, eps)
                miss = _wrap(np.arctan2(z[1], z[0]) - target)
                if abs(miss) < 1e-12:
                    break
                r2 = z @ z
                omega = eps * (z[0] * np.tanh(z[0]) + z[1] * np.tanh(z[1])) / r2
                tau -= miss / omega
            return base_t + tau
        y, t, prev_ang = ys[-1], t + chunk * step, ang[-1]
    raise RuntimeError(f"no full revolution within t_max={t_max:g}")


def _wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def _rk4_planar(y, dt, eps):
    def f(z):
        return eps * np.array([-np.tanh(z[1]), np.tanh(z[0])])

    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


# --- orthogonal-weight special case -----------------------------------------


def kron_G(n: int) -> np.ndarray:
    """``I_{n/2} (x) [[0, 1], [-1, 0]]``."""
    if n % 2:
        raise ValueError("n must be even")
    return np.kron(np.eye(n // 2), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def identity_path(n: int) -> Callable:
    return lambda t: np.eye(n)


def rotation_path(n: int, omega: float = 1.0) -> Callable:
    """Rotation by ``omega t`` in the planes ``(4k, 4k + 2)``.

    Each plane couples the first coordinates of two neighbouring 2x2 blocks,
    so ``M(t)`` does not commute with ``I (x) G`` and ``K(t)`` really varies.
    """
    if n < 4 or n % 2:
        raise ValueError("a block-mixing rotation needs an even n >= 4")
    planes = [(i, i + 2) for i in range(0, n - 2, 4)]

    def M(t):
        c, s = np.cos(omega * t), np.sin(omega * t)
        R = np.eye(n)
        for i, k in planes:
            R[i, i] = R[k, k] = c
            R[i, k] = -s
            R[k, i] = s
        return R

    return M


@dataclass
class Ode2OdeReport:
    t: np.ndarray
    ratio: np.ndarray  # ||delta(T-t)|| / ||delta(T)|| for the given delta(T)
    sv_min: np.ndarray  # smallest singular value of Phi(t)
    sv_max: np.ndarray  # largest singular value of Phi(t)
    lower: float
    upper: float

    @property
    def within(self) -> bool:
        return bool(np.all(self.ratio >= self.lower) and np.all(self.ratio <= self.upper))

    @property
    def within_all_directions(self) -> bool:
        return bool(np.all(self.sv_min >= self.lower) and np.all(self.sv_max <= self.upper))


def ode2ode_config(M_fn: Callable, n: int, T: float = 5.0, step: float = 1e-3, b_fn=None, n_check: int = 101) -> OdeConfig:
    """``J(t) = K(t) = M(t)^T (I (x) G) M(t)`` with ``act = |x|``; requires orthogonal ``M(t)``."""
    for t in np.linspace(0.0, T, n_check):
        Mt = np.asarray(M_fn(t), dtype=float)
        if Mt.shape != (n, n) or np.max(np.abs(Mt.T @ Mt - np.eye(n))) > 1e-12:
            raise ValueError(f"M(t) is not orthogonal at t={t:g}")
    KG = kron_G(n)

    def K(t):
        Mt = M_fn(t)
        return Mt.T @ KG @ Mt

    b = b_fn if b_fn is not None else (lambda t: np.zeros(n))
    return OdeConfig(K, K, b, ABS, T, step)


def ode2ode_check(M_fn: Callable, n: int, y0, delta_T, T: float = 5.0, step: float = 1e-3, tol: float = 1e-3, b_fn=None):
    """Track ``||delta(T-t)|| / ||delta(T)||`` against ``[1/e - tol, e + tol]``."""
    cfg = ode2ode_config(M_fn, n, T, step, b_fn)
    traj = integrate_sensitivity(cfg, integrate_forward(cfg, y0))
    P = traj.sens
    d = np.asarray(delta_T, dtype=float)
    ratio = np.linalg.norm(P @ d, axis=1) / np.linalg.norm(d)
    sv = np.linalg.svd(P, compute_uv=False)
    t = np.linspace(0.0, T, len(P))
    return Ode2OdeReport(t, ratio, sv[:, -1], sv[:, 0], 1 / np.e - tol, np.e + tol)
