"""Allocation of each user's privacy budget among tasks.

Task weights follow ``omega_i ∝ n_i^{-mu}``, normalized so the *average* user
spends ``B = beta / c_n`` (``sum_i (n_i / n) omega_i^2 = B``). Per-user
clipping then enforces the exact budget ``beta`` for every user.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .graph import TaskUserGraph
from .privacy import PrivateCounts, user_budgets


class AllocationError(ValueError):
    """Raised when allocation inputs violate the model assumptions."""


@dataclass(frozen=True)
class WeightPlan:
    """Task weights and the clipped per-edge weights derived from them.

    Attributes:
        task_weights: ``omega_i`` per task.
        edge_weights: ``w_ij`` per edge, aligned with the graph's edge order.
        budget: per-user RDP budget ``beta`` the edge weights satisfy.
        mu: exponent used for the task weights (``nan`` for sampling plans).
        gamma: curvature regime (0 or 1) when the plan came from it.
        c_n: concentration factor, ``B = beta / c_n``.
        strategy: short name of the allocation method.
        counts: task sizes the weights were computed from (public or
            privately estimated); ``None`` means the graph's own counts.
    """

    task_weights: np.ndarray
    edge_weights: np.ndarray
    budget: float
    mu: float = float("nan")
    gamma: int | None = None
    c_n: float = 1.0
    strategy: str = "adaptive"
    counts: np.ndarray | None = None

    def ridge_mass(self, graph: TaskUserGraph) -> np.ndarray:
        """``omega_i * n_i`` per task, from data-independent inputs only.

        Used as the weight of the ridge term so that it needs no noise.
        """
        counts = graph.task_counts if self.counts is None else self.counts
        return self.task_weights * np.asarray(counts, dtype=np.float64)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"beta={self.budget!r}\nmu={self.mu!r}\n"
                     f"gamma={'' if self.gamma is None else self.gamma}\nc_n={self.c_n!r}\n")
            w = csv.writer(fh)
            w.writerow(["task", "omega"])
            for i, om in enumerate(self.task_weights):
                w.writerow([i, repr(float(om))])


def read_task_weights(path) -> tuple[dict, np.ndarray]:
    """Read a plan CSV back as ``(metadata, task_weights)``."""
    meta = {}
    with open(path, newline="") as fh:
        for _ in range(4):
            key, _, value = fh.readline().strip().partition("=")
            meta[key] = value
        rows = list(csv.reader(fh))[1:]
    return meta, np.array([float(om) for _, om in rows])


def concentration_factor(n: int, c: float = 1.0) -> float:
    """``c(n) = c log n``, floored at 1 so it never inflates the budget."""
    return max(1.0, c * math.log(n))


def _check_counts(counts):
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise AllocationError("counts must be a non-empty 1-d array")
    if np.any(counts < 1) or not np.all(np.isfinite(counts)):
        raise AllocationError(
            "every task needs n_i >= 1 (Assumption: all tasks are non-empty); "
            f"smallest count is {counts.min()}")
    return counts


def generalized_weights(counts, budget: float, mu: float, n: int, c_n: float = 1.0) -> np.ndarray:
    """``omega_i = n_i^{-mu} / sqrt(sum_k n_k^{1 - 2 mu} / (n B))`` with ``B = budget / c_n``."""
    counts = _check_counts(counts)
    if not 0.0 <= mu <= 1.0:
        raise AllocationError(f"mu must lie in [0, 1], got {mu}")
    if not budget > 0:
        raise AllocationError(f"budget must be positive, got {budget}")
    if c_n < 1:
        raise AllocationError(f"c_n must be >= 1, got {c_n}")
    mean_budget = budget / c_n
    # work in logs so mu = 1 with large counts cannot underflow
    log_n = np.log(counts)
    log_norm = np.logaddexp.reduce((1.0 - 2.0 * mu) * log_n)
    return np.exp(-mu * log_n + 0.5 * (math.log(n * mean_budget) - log_norm))


def optimal_weights(counts, budget: float, gamma: int, n: int, c_n: float = 1.0) -> np.ndarray:
    """KKT solution of the averaged allocation problem; equals ``mu = (gamma + 1) / 4``."""
    if gamma not in (0, 1):
        raise AllocationError(f"gamma must be 0 or 1, got {gamma}")
    return generalized_weights(counts, budget, (gamma + 1) / 4.0, n, c_n)


def uniform_weights(counts, budget: float, n: int, c_n: float = 1.0) -> np.ndarray:
    return generalized_weights(counts, budget, 0.0, n, c_n)


def mean_user_budget(task_weights, counts, n: int) -> float:
    """``sum_i (n_i / n) omega_i^2``."""
    return float(np.sum(np.asarray(counts) / n * np.asarray(task_weights) ** 2))


def clip_user_budgets(task_weights, graph: TaskUserGraph, budget: float) -> np.ndarray:
    """Scale down each over-budget user's weights so ``sum_i w_ij^2 <= budget`` exactly.

    Users already within budget keep ``w_ij = omega_i``. The scale factors are
    nudged down by an ulp at a time until the floating-point sums (computed
    the same way :func:`~skewdp.privacy.per_user_budget` does) comply.
    """
    omega = np.asarray(task_weights, dtype=np.float64)
    if omega.shape != (graph.m,):
        raise AllocationError(f"expected {graph.m} task weights, got shape {omega.shape}")
    if not budget > 0:
        raise AllocationError(f"budget must be positive, got {budget}")
    return clip_user_budgets_edges(omega[graph.tasks], graph, budget)


def adjusted_counts(priv: PrivateCounts) -> np.ndarray:
    """Over-estimated counts ``max(n_hat, 1 - s) + s`` (always >= 1)."""
    est = np.asarray(priv.estimates, dtype=np.float64)
    s = float(priv.accuracy)
    if s < 0:
        raise AllocationError(f"count accuracy must be >= 0, got {s}")
    return np.maximum(est, 1.0 - s) + s


def weights_from_private_counts(priv: PrivateCounts, budget: float, n: int, *,
                                mu: float | None = None, gamma: int | None = None,
                                c_n: float = 1.0) -> np.ndarray:
    """Task weights computed on ``n_hat_i + s`` instead of the true counts.

    With s-accurate counts and ``mu <= 1/2`` the result never exceeds the
    weights computed from the true counts.
    """
    if (mu is None) == (gamma is None):
        raise AllocationError("pass exactly one of mu or gamma")
    if gamma is not None:
        if gamma not in (0, 1):
            raise AllocationError(f"gamma must be 0 or 1, got {gamma}")
        mu = (gamma + 1) / 4.0
    return generalized_weights(adjusted_counts(priv), budget, mu, n, c_n)


def make_plan(task_weights, graph: TaskUserGraph, budget: float, *, mu=float("nan"),
              gamma=None, c_n=1.0, strategy="adaptive", counts=None) -> WeightPlan:
    """Clip task weights per user and bundle them as a :class:`WeightPlan`."""
    omega = np.asarray(task_weights, dtype=np.float64)
    return WeightPlan(omega, clip_user_budgets(omega, graph, budget), float(budget),
                      mu=mu, gamma=gamma, c_n=c_n, strategy=strategy,
                      counts=None if counts is None else np.asarray(counts, dtype=np.float64))


def adaptive_plan(counts, graph: TaskUserGraph, budget: float, mu: float,
                  c_n: float = 1.0) -> WeightPlan:
    """Power-law task weights from ``counts`` (true or adjusted), clipped per user."""
    omega = generalized_weights(counts, budget, mu, graph.n, c_n)
    strategy = "uniform-weights" if mu == 0 else "adaptive"
    return make_plan(omega, graph, budget, mu=mu, c_n=c_n, strategy=strategy, counts=counts)


# --- sampling baselines -------------------------------------------------------

def tail_biased_sampling(graph: TaskUserGraph, counts, k: int) -> np.ndarray:
    """0/1 edge weights keeping each user's ``k`` lowest-count tasks.

    Ties are broken by task index.
    """
    if k < 1:
        raise AllocationError(f"per-user cap must be >= 1, got {k}")
    counts = np.asarray(counts, dtype=np.float64)
    # rank every edge within its user by (count, task)
    order = np.lexsort((graph.tasks, counts[graph.tasks], graph.users))
    users_sorted = graph.users[order]
    start = np.searchsorted(users_sorted, users_sorted, side="left")
    rank = np.arange(len(order)) - start
    w = np.zeros(graph.num_edges)
    w[order[rank < k]] = 1.0
    return w


def uniform_sampling(graph: TaskUserGraph, k: int, rng) -> np.ndarray:
    """0/1 edge weights keeping ``k`` uniformly random tasks per user."""
    if k < 1:
        raise AllocationError(f"per-user cap must be >= 1, got {k}")
    keys = rng.random(graph.num_edges)
    order = np.lexsort((keys, graph.users))
    users_sorted = graph.users[order]
    start = np.searchsorted(users_sorted, users_sorted, side="left")
    rank = np.arange(len(order)) - start
    w = np.zeros(graph.num_edges)
    w[order[rank < k]] = 1.0
    return w


def sampling_plan(indicator, graph: TaskUserGraph, budget: float, k: int,
                  strategy: str, counts=None) -> WeightPlan:
    """Scale a 0/1 sampling plan so each kept edge gets weight ``sqrt(budget / k)``.

    ``counts`` (task sizes before sampling) only feeds the plan's ridge mass.
    """
    scale = math.sqrt(budget / k)
    w = np.asarray(indicator, dtype=np.float64) * scale
    # guard against rounding pushing k * scale^2 above budget
    w = clip_user_budgets_edges(w, graph, budget)
    return WeightPlan(np.full(graph.m, scale), w, float(budget), c_n=1.0, strategy=strategy,
                      counts=None if counts is None else np.asarray(counts, dtype=np.float64))


def clip_user_budgets_edges(edge_weights, graph: TaskUserGraph, budget: float) -> np.ndarray:
    """Per-user clipping applied to arbitrary edge weights."""
    if not budget > 0:
        raise AllocationError(f"budget must be positive, got {budget}")
    w = np.asarray(edge_weights, dtype=np.float64)
    totals = user_budgets(w, graph)
    scale = np.ones(graph.n)
    over = totals > budget
    scale[over] = np.sqrt(budget / totals[over])
    out = w * scale[graph.users]
    for _ in range(64):
        bad = user_budgets(out, graph) > budget
        if not bad.any():
            return out
        scale[bad] = np.nextafter(scale[bad], 0.0) * (1.0 - 4 * np.finfo(float).eps)
        out = w * scale[graph.users]
    raise AllocationError("could not enforce the user budget")  # pragma: no cover


# --- analysis helpers -----------------------------------------------------------

def improvement_ratio(counts, gamma: int) -> float:
    """Ratio of the uniform-weight utility bound to the optimal-weight bound.

    ``gamma = 0``: ``sqrt(m sum n_i) / sum sqrt(n_i)``;
    ``gamma = 1``: ``sum(1/n_i) sum(n_i) / m^2``.
    """
    counts = _check_counts(counts)
    m = counts.size
    if gamma == 0:
        return math.sqrt(m * math.fsum(counts)) / math.fsum(np.sqrt(counts))
    if gamma == 1:
        return math.fsum(1.0 / counts) * math.fsum(counts) / m ** 2
    raise AllocationError(f"gamma must be 0 or 1, got {gamma}")


def allocation_objective(task_weights, counts, gamma: int) -> float:
    """``sum_i 1 / (omega_i^2 n_i^gamma)``."""
    om2 = np.asarray(task_weights, dtype=np.float64) ** 2
    return math.fsum(1.0 / (om2 * np.asarray(counts, dtype=np.float64) ** gamma))


class ConvergenceError(RuntimeError):
    pass


def solve_allocation_numeric(counts, budget: float, gamma: int, graph: TaskUserGraph | None = None,
                             c_n: float = 1.0, n: int | None = None, tol: float = 1e-10,
                             max_newton: int = 200) -> np.ndarray:
    """Numerically minimize ``sum_i 1/(omega_i^2 n_i^gamma)`` under budget constraints.

    With a ``graph`` the constraints are one per user,
    ``sum_{i in Omega^j} omega_i^2 <= budget``. Without one, the single
    averaged constraint ``c_n sum_i (n_i / n) omega_i^2 <= budget`` is used.

    Solved in ``z = omega^2`` (where the problem is convex) by a log-barrier
    Newton method; stops once the duality-gap bound is below
    ``tol`` times the objective. Intended for small instances.
    """
    counts = _check_counts(counts)
    m = counts.size
    coef = counts ** (-float(gamma))
    if graph is not None:
        if graph.m != m:
            raise AllocationError("counts and graph disagree on the number of tasks")
        G = np.zeros((graph.n, m))
        G[graph.users, graph.tasks] = 1.0
        G = G[G.sum(axis=1) > 0]
        G = np.unique(G, axis=0)
        rhs = np.full(G.shape[0], float(budget))
    else:
        if n is None:
            raise AllocationError("n is required for the averaged constraint")
        G = (c_n * counts / n)[None, :]
        rhs = np.array([float(budget)])

    # tasks touched by no constraint have unbounded optimum; refuse
    if np.any(G.sum(axis=0) == 0):
        raise AllocationError("a task appears in no constraint; the problem is unbounded")

    z = np.full(m, 0.5 * float(budget) / G.sum(axis=1).max())
    n_barrier = G.shape[0] + m
    t = 1.0
    for _ in range(100):
        for _ in range(max_newton):
            slack = rhs - G @ z
            grad = t * (-coef / z ** 2) + G.T @ (1.0 / slack) - 1.0 / z
            hess = (np.diag(t * 2.0 * coef / z ** 3 + 1.0 / z ** 2)
                    + (G.T * (1.0 / slack ** 2)) @ G)
            step = -np.linalg.solve(hess, grad)
            decrement = float(-grad @ step)
            if decrement / 2.0 <= 1e-14:
                break
            # backtracking that stays strictly feasible
            s = 1.0
            while np.any(z + s * step <= 0) or np.any(rhs - G @ (z + s * step) <= 0):
                s *= 0.5

            def phi(zz):
                return (t * np.sum(coef / zz) - np.sum(np.log(rhs - G @ zz))
                        - np.sum(np.log(zz)))

            f0 = phi(z)
            while phi(z + s * step) > f0 - 0.25 * s * decrement:
                s *= 0.5
                if s < 1e-20:
                    break
            z = z + s * step
        obj = float(np.sum(coef / z))
        if n_barrier / t <= tol * obj:
            return np.sqrt(z)
        t *= 10.0
    raise ConvergenceError(
        f"barrier method did not converge: gap bound {n_barrier / t:.3e}, objective {obj:.6e}")


# --- concentration ------------------------------------------------------------

def assumption_graph(counts, n: int, rng) -> TaskUserGraph:
    """Random graph where task ``i`` draws ``n_i`` distinct users uniformly."""
    from .graph import build_graph

    counts = np.asarray(counts, dtype=np.int64)
    if np.any(counts > n):
        raise AllocationError("a task cannot have more than n users")
    tasks = np.repeat(np.arange(counts.size), counts)
    users = np.concatenate([rng.choice(n, size=c, replace=False) for c in counts])
    return build_graph(np.stack([tasks, users], axis=1), counts.size, n)


def power_law_counts(m: int, n: int, a: float, mean_tasks_per_user: float, rng) -> np.ndarray:
    """Integer task sizes ``round(q_i n)`` with ``q_i`` from ``x^{a-1}`` on [0, 1]."""
    from .synthgen import normalize_rates

    q = normalize_rates(rng.random(m) ** (1.0 / a), mean_tasks_per_user)
    return np.clip(np.rint(q * n), 1, n).astype(np.int64)


def clipped_user_fraction(task_weights, graph: TaskUserGraph, budget: float) -> float:
    """Fraction of users whose unclipped budget exceeds ``budget``."""
    totals = kernels.segment_sum(graph.users, np.asarray(task_weights)[graph.tasks] ** 2, graph.n)
    return float(np.mean(totals > budget))


def concentration_success_rate(counts, n: int, c: float, gamma: int, budget: float,
                               draws: int, rng) -> float:
    """Share of random graphs in which at most a ``1/n`` fraction of users needs clipping."""
    omega = optimal_weights(counts, budget, gamma, n, concentration_factor(n, c))
    ok = 0
    for _ in range(draws):
        graph = assumption_graph(counts, n, rng)
        ok += clipped_user_fraction(omega, graph, budget) <= 1.0 / n
    return ok / draws


def calibrate_concentration(counts, n: int, gamma: int, rng, draws: int = 50,
                            target: float = 0.99, budget: float = 1.0,
                            c_max: float = 64.0, iters: int = 12) -> float:
    """Smallest ``c`` (by bisection) for which ``c(n) = c log n`` meets ``target``.

    The ratio ``omega^2 / budget`` does not depend on ``budget``, so any
    positive value gives the same answer.
    """
    lo, hi = 0.0, c_max
    seeds = rng.integers(2 ** 63, size=iters + 1)
    if concentration_success_rate(counts, n, hi, gamma, budget, draws,
                                  np.random.default_rng(seeds[-1])) < target:
        warnings.warn(f"c_max={c_max} does not reach the concentration target")
        return hi
    for k in range(iters):
        mid = 0.5 * (lo + hi)
        rate = concentration_success_rate(counts, n, mid, gamma, budget, draws,
                                          np.random.default_rng(seeds[k]))
        if rate >= target:
            hi = mid
        else:
            lo = mid
    return hi
