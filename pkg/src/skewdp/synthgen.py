"""Synthetic multi-task linear regression with power-law task sizes.

Task ``i`` is joined by each user independently with probability ``q_i``,
where the ``q_i`` are drawn from the density ``a x^{a-1}`` on [0, 1] and
rescaled to sum to the target number of tasks per user. User ``j`` has a
feature vector ``u_j`` shared across tasks and ``y_ij = <u_j, theta_i> + noise``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .graph import MultiTaskDataset, make_dataset, write_ratings, RatingData


@dataclass(frozen=True)
class SynthConfig:
    m: int = 100
    n: int = 10_000
    d: int = 5
    a: float = 2.0
    mean_tasks_per_user: float = 20.0
    noise_std: float = 1e-3
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError(f"power-law exponent must be positive, got {self.a}")
        if not 0 < self.mean_tasks_per_user <= self.m:
            raise ValueError("mean tasks per user must lie in (0, m]")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train fraction must lie in (0, 1)")
        if self.m > self.n:
            raise ValueError("need m <= n")


@dataclass(frozen=True)
class SynthData:
    train: MultiTaskDataset
    test: MultiTaskDataset
    theta: np.ndarray
    user_features: np.ndarray
    rates: np.ndarray


def project_to_ball(v: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection of each row onto the ball; rows inside are unchanged."""
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(norms > radius, v * (radius / np.maximum(norms, 1e-300)), v)


def normalize_rates(q, total: float) -> np.ndarray:
    """Rescale ``q`` to sum to ``total`` while keeping every entry <= 1.

    Entries that would exceed 1 are capped and the remaining mass is spread
    over the others proportionally.
    """
    q = np.asarray(q, dtype=np.float64)
    if total > q.size:
        raise ValueError("cannot reach the target sum with rates capped at 1")
    out = q * (total / q.sum())
    if np.any(out > 1):
        warnings.warn("normalized rates exceed 1; capping and renormalizing")
        capped = np.zeros(q.size, dtype=bool)
        while np.any(out > 1 + 1e-12):
            capped |= out >= 1
            out[capped] = 1.0
            free = ~capped
            out[free] = q[free] * ((total - capped.sum()) / q[free].sum())
        out = np.minimum(out, 1.0)
    return out


def split(dataset: MultiTaskDataset, fraction: float, rng):
    """Random edge-level split with ``round(fraction * |edges|)`` training edges."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    e = dataset.graph.num_edges
    n_train = int(round(fraction * e))
    mask = np.zeros(e, dtype=bool)
    mask[rng.permutation(e)[:n_train]] = True
    return dataset.subset(mask), dataset.subset(~mask)


def generate(cfg: SynthConfig, rng=None) -> SynthData:
    """Draw one synthetic benchmark instance; ``rng`` defaults to ``cfg.seed``."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    theta = project_to_ball(rng.standard_normal((cfg.m, cfg.d)))
    users = project_to_ball(rng.standard_normal((cfg.n, cfg.d)))
    rates = normalize_rates(rng.random(cfg.m) ** (1.0 / cfg.a), cfg.mean_tasks_per_user)

    member = rng.random((cfg.m, cfg.n)) < rates[:, None]
    tasks, user_idx = np.nonzero(member)
    x = users[user_idx]
    y = np.einsum("ed,ed->e", x, theta[tasks]) + cfg.noise_std * rng.standard_normal(tasks.size)
    full = make_dataset(np.stack([tasks, user_idx], axis=1), x, y, cfg.m, cfg.n)
    train, test = split(full, cfg.train_fraction, rng)
    return SynthData(train, test, theta, users, rates)


def write_synth(data: SynthData, cfg: SynthConfig, ratings_path, sidecar_path) -> None:
    """Write the training edges as ratings plus a JSON sidecar with planted parameters."""
    g = data.train.graph
    write_ratings(RatingData(g, data.train.y, list(range(g.m)), list(range(g.n))), ratings_path)
    with open(sidecar_path, "w") as fh:
        json.dump({"config": asdict(cfg), "theta": data.theta.tolist(),
                   "user_features": data.user_features.tolist(),
                   "rates": data.rates.tolist()}, fh)


def read_sidecar(path) -> dict:
    with open(path) as fh:
        side = json.load(fh)
    side["theta"] = np.asarray(side["theta"])
    side["user_features"] = np.asarray(side["user_features"])
    side["rates"] = np.asarray(side["rates"])
    return side
