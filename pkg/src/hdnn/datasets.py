"""Synthetic 2-D benchmarks, feature augmentation and minibatching.

Generators are balanced (``s/2`` points per class) and deterministic under
their seed. Noise-free samples lie in these boxes:

* swiss roll: radius at most 1, so ``[-1, 1]^2``
* double moons: ``[-1.5, 1.5] x [-0.75, 0.75]``
* double circles: radius at most 2, so ``[-2, 2]^2``
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# swiss roll: arm radius r(t) = ROLL_A + ROLL_B * t, t in [0, ROLL_TURNS * pi]
ROLL_A = 0.25
ROLL_TURNS = 3.0
ROLL_B = (1.0 - ROLL_A) / (ROLL_TURNS * np.pi)

CIRCLE_RADII = (1.0, 2.0)

DEFAULT_NOISE = {"swiss_roll": 0.02, "double_moons": 0.1, "double_circles": 0.15}


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int = 2

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be (s, d) with one label per row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels must lie in [0, n_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


def _check_size(s: int) -> None:
    if s < 2 or s % 2:
        raise ValueError(f"sample count must be even and >= 2, got {s}")


def _labels(s):
    return np.repeat([0, 1], s // 2)


def roll_arm(t, arm: int):
    """Point of swiss-roll arm ``arm`` (0 or 1) at parameter ``t``."""
    t = np.asarray(t, dtype=float)
    r = ROLL_A + ROLL_B * t
    ang = t + np.pi * arm
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)


def gen_swiss_roll(s: int, noise: float = DEFAULT_NOISE["swiss_roll"], seed=0) -> Dataset:
    """Two interleaved Archimedean spiral arms, the second rotated by pi."""
    _check_size(s)
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, ROLL_TURNS * np.pi, size=s)
    y = _labels(s)
    X = roll_arm(t, y) + noise * rng.standard_normal((s, 2))
    return Dataset(X, y)


def gen_double_moons(s: int, noise: float = DEFAULT_NOISE["double_moons"], seed=0) -> Dataset:
    """Two interleaving half circles, centred at the origin."""
    _check_size(s)
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, np.pi, size=s)
    y = _labels(s)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    X = np.where(y[:, None] == 0, upper, lower) - np.array([0.5, 0.25])
    X = X + noise * rng.standard_normal((s, 2))
    return Dataset(X, y)


def gen_double_circles(s: int, noise: float = DEFAULT_NOISE["double_circles"], seed=0) -> Dataset:
    """Two concentric annuli; class 0 is the inner one."""
    _check_size(s)
    rng = np.random.default_rng(seed)
    ang = rng.uniform(0.0, 2 * np.pi, size=s)
    y = _labels(s)
    r = np.asarray(CIRCLE_RADII)[y] + noise * rng.standard_normal(s)
    X = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    return Dataset(X, y)


GENERATORS = {
    "swiss_roll": gen_swiss_roll,
    "double_moons": gen_double_moons,
    "double_circles": gen_double_circles,
}


def generate(name: str, s: int, noise: float | None = None, seed=0) -> Dataset:
    if name not in GENERATORS:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(GENERATORS)}")
    noise = DEFAULT_NOISE[name] if noise is None else noise
    return GENERATORS[name](s, noise, seed)


def make_split(name: str, s_train: int, s_test: int, noise=None, seed=0):
    """Train and test sets drawn from independent child streams of ``seed``."""
    train_ss, test_ss = np.random.SeedSequence(seed).spawn(2)
    return generate(name, s_train, noise, train_ss), generate(name, s_test, noise, test_ss)


# --- augmentation -----------------------------------------------------------


def _placement(d: int, n: int, placement) -> dict:
    placement = dict(enumerate(range(d))) if placement is None else dict(placement)
    if sorted(placement) != list(range(d)):
        raise ValueError(f"placement must map every raw index 0..{d - 1}")
    targets = list(placement.values())
    if len(set(targets)) != len(targets):
        raise ValueError("placement must be injective")
    if any(t < 0 or t >= n for t in targets):
        raise ValueError(f"placement index out of range for n={n}")
    return placement


def augment(d: Dataset, n: int, placement=None) -> Dataset:
    """Zero-pad features to dimension ``n``, scattering raw index ``i`` to ``placement[i]``."""
    if n < d.dim:
        raise ValueError(f"cannot augment {d.dim} features into n={n}")
    pl = _placement(d.dim, n, placement)
    X = np.zeros((len(d), n))
    for src, dst in pl.items():
        X[:, dst] = d.features[:, src]
    return Dataset(X, d.labels.copy(), d.n_classes)


def project(d: Dataset, raw_dim: int = 2, placement=None) -> Dataset:
    """Inverse of :func:`augment`."""
    pl = _placement(raw_dim, d.dim, placement)
    X = np.stack([d.features[:, pl[i]] for i in range(raw_dim)], axis=1)
    return Dataset(X, d.labels.copy(), d.n_classes)


# --- batching ---------------------------------------------------------------


def split_and_batch(d: Dataset, batch: int, seed=0):
    """Shuffle once with ``seed`` and yield ``(features, labels)`` batches.

    The last batch may be smaller; every sample appears exactly once.
    """
    if batch < 1:
        raise ValueError("batch size must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(len(d))
    for start in range(0, len(d), batch):
        idx = order[start : start + batch]
        yield d.features[idx], d.labels[idx]


def n_batches(s: int, batch: int) -> int:
    return -(-s // batch)


# --- CSV --------------------------------------------------------------------


def write_csv(d: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(d.dim)] + ["label"])
        for x, y in zip(d.features, d.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def read_csv(path, n_classes: int | None = None) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "label" or any(not c.startswith("x") for c in rows[0][:-1]):
        raise ValueError(f"{path}: expected header x0..x(n-1),label")
    body = rows[1:]
    X = np.array([[float(v) for v in r[:-1]] for r in body], dtype=float).reshape(len(body), -1)
    y = np.array([int(r[-1]) for r in body], dtype=np.int64)
    k = n_classes if n_classes is not None else (int(y.max()) + 1 if len(y) else 2)
    return Dataset(X, y, max(k, 2))
