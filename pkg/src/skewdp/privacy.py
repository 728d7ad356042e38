"""Renyi-DP accounting for Gaussian mechanisms with linear RDP curves.

Every mechanism here is ``(alpha, c * alpha)``-RDP for all ``alpha > 1``, so an
account only needs to track the coefficient ``c``. Composition adds
coefficients, and conversion to ``(epsilon, delta)``-DP has a closed form.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .graph import TaskUserGraph

DEFAULT_CONTRIBUTION_CAP = 100


class PrivacyError(ValueError):
    """Raised for invalid privacy parameters or misuse of an account."""


def gaussian_rdp_coefficient(l2_sensitivity_sq: float, noise_variance: float) -> float:
    """RDP coefficient ``Delta^2 / (2 sigma^2)`` of the Gaussian mechanism."""
    if not noise_variance > 0:
        raise PrivacyError(f"noise variance must be positive, got {noise_variance}")
    if l2_sensitivity_sq < 0:
        raise PrivacyError(f"squared sensitivity must be >= 0, got {l2_sensitivity_sq}")
    return l2_sensitivity_sq / (2.0 * noise_variance)


@dataclass(frozen=True)
class DpStatement:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise PrivacyError(f"invalid epsilon {self.epsilon}")
        if not 0 < self.delta < 1:
            raise PrivacyError(f"invalid delta {self.delta}")

    def __str__(self):
        return f"epsilon={self.epsilon!r} delta={self.delta!r}"


def _check_delta(delta):
    if not 0 < delta < 1:
        raise PrivacyError(f"delta must lie in (0, 1), got {delta}")


def rdp_to_dp(total_coefficient: float, delta: float) -> DpStatement:
    """Tightest ``epsilon`` for a ``(alpha, beta * alpha)``-RDP mechanism.

    Minimizes ``alpha * beta + log(1/delta) / (alpha - 1)`` over ``alpha > 1``;
    the optimum is ``beta + 2 sqrt(beta log(1/delta))``.
    """
    _check_delta(delta)
    beta = float(total_coefficient)
    if beta < 0 or not math.isfinite(beta):
        raise PrivacyError(f"RDP coefficient must be finite and >= 0, got {beta}")
    log_inv = math.log(1.0 / delta)
    return DpStatement(beta + 2.0 * math.sqrt(beta * log_inv), delta)


def optimal_rdp_order(total_coefficient: float, delta: float) -> float:
    """The order ``alpha*`` achieving :func:`rdp_to_dp`."""
    _check_delta(delta)
    if total_coefficient <= 0:
        return math.inf
    return 1.0 + math.sqrt(math.log(1.0 / delta) / total_coefficient)


def dp_to_rdp(epsilon: float, delta: float) -> float:
    """Largest coefficient ``beta`` whose conversion gives at most ``epsilon``.

    Solves ``epsilon = beta + 2 sqrt(beta L)`` (``L = log(1/delta)``) as a
    quadratic in ``sqrt(beta)``.
    """
    _check_delta(delta)
    if not epsilon > 0:
        raise PrivacyError(f"epsilon must be positive, got {epsilon}")
    log_inv = math.log(1.0 / delta)
    # sqrt(L + eps) - sqrt(L), written to avoid cancellation
    root = epsilon / (math.sqrt(log_inv + epsilon) + math.sqrt(log_inv))
    beta = root * root
    # never certify more than requested
    while rdp_to_dp(beta, delta).epsilon > epsilon:
        beta = math.nextafter(beta, 0.0)
    return beta


def sufficient_condition(beta: float, epsilon: float, delta: float) -> bool:
    """The simple certificate ``beta <= eps^2 / (8 log(1/delta))`` with ``eps <= log(1/delta)``."""
    log_inv = math.log(1.0 / delta)
    return epsilon <= log_inv and beta <= epsilon ** 2 / (8.0 * log_inv)


def split_budget(total: float, preprocess: float, rounds: int) -> float:
    """Per-round coefficient ``beta`` with ``preprocess + rounds * beta <= total``.

    The inequality holds for the correctly rounded sum that
    :class:`RdpAccount` reports, so a ledger filled this way never certifies
    more than ``total``.
    """
    if rounds < 1:
        raise PrivacyError(f"need at least one round, got {rounds}")
    if not 0 <= preprocess < total:
        raise PrivacyError("preprocessing budget must lie in [0, total)")
    beta = (total - preprocess) / rounds
    while math.fsum([preprocess] + [beta] * rounds) > total:
        beta = math.nextafter(beta, 0.0)
    return beta


@dataclass
class RdpAccount:
    """Running ledger of RDP coefficients.

    Attributes:
        entries: ``(label, coefficient)`` pairs in the order they were composed.
        private: False for accounts created by :meth:`non_private`, whose
            mechanisms ran without noise.
    """

    entries: list = field(default_factory=list)
    private: bool = True

    @classmethod
    def non_private(cls) -> RdpAccount:
        """An account for noiseless test runs; it refuses to certify anything."""
        return cls(private=False)

    @property
    def total_coefficient(self) -> float:
        return math.fsum(c for _, c in self.entries)

    def compose(self, coefficient: float, label: str = "") -> RdpAccount:
        coefficient = float(coefficient)
        if not (math.isfinite(coefficient) and coefficient >= 0):
            raise PrivacyError(f"cannot compose coefficient {coefficient}")
        self.entries.append((label, coefficient))
        return self

    def merge(self, other: RdpAccount) -> RdpAccount:
        for label, c in other.entries:
            self.compose(c, label)
        self.private = self.private and other.private
        return self

    def to_dp(self, delta: float) -> DpStatement:
        if not self.private:
            raise PrivacyError("account comes from a noiseless run and certifies nothing")
        return rdp_to_dp(self.total_coefficient, delta)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "coefficient"])
            for label, c in self.entries:
                w.writerow([label, repr(c)])

    @classmethod
    def read_csv(cls, path) -> RdpAccount:
        acct = cls()
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        for label, c in rows:
            acct.compose(float(c), label)
        return acct


def compose(account: RdpAccount, coefficient: float, label: str = "") -> RdpAccount:
    return account.compose(coefficient, label)


def user_budgets(edge_weights, graph: TaskUserGraph) -> np.ndarray:
    """Per-user ``sum_{i in Omega^j} w_ij^2``."""
    w = np.asarray(edge_weights, dtype=np.float64)
    if w.shape != (graph.num_edges,):
        raise PrivacyError(
            f"expected one weight per edge ({graph.num_edges}), got shape {w.shape}")
    return kernels.segment_sum(graph.users, w * w, graph.n)


def per_user_budget(edge_weights, graph: TaskUserGraph) -> float:
    """The RDP coefficient ``max_j sum_{i in Omega^j} w_ij^2`` certified by weights."""
    budgets = user_budgets(edge_weights, graph)
    return float(budgets.max()) if budgets.size else 0.0


@dataclass(frozen=True)
class PrivateCounts:
    """Noisy task sizes with a high-probability additive accuracy ``s``.

    Attributes:
        estimates: ``n_hat_i`` per task.
        accuracy: ``s`` such that ``|n_hat_i - n_i| <= s`` for all tasks with
            probability at least ``confidence``.
        coefficient: RDP coefficient spent on the release.
        private: False for exact counts from :func:`exact_counts`.
    """

    estimates: np.ndarray
    accuracy: float
    coefficient: float
    confidence: float = 1.0
    noise_std: float = 0.0
    private: bool = True


def count_accuracy(noise_std: float, m: int, confidence: float) -> float:
    """Union-bound radius ``sigma sqrt(2 log(2m / (1 - confidence)))``."""
    if not 0 < confidence < 1:
        raise PrivacyError(f"confidence must lie in (0, 1), got {confidence}")
    return noise_std * math.sqrt(2.0 * math.log(2.0 * m / (1.0 - confidence)))


def cap_contributions(graph: TaskUserGraph, cap: int, rng) -> np.ndarray:
    """Boolean edge mask keeping at most ``cap`` random edges per user."""
    if cap < 1:
        raise PrivacyError(f"contribution cap must be >= 1, got {cap}")
    counts = graph.user_counts
    keep = np.ones(graph.num_edges, dtype=bool)
    for j in np.flatnonzero(counts > cap):
        edges = graph.user_edges(j)
        drop = rng.choice(edges, size=len(edges) - cap, replace=False)
        keep[drop] = False
    return keep


def private_counts(graph: TaskUserGraph, noise_std: float, confidence: float, rng,
                   cap: int = DEFAULT_CONTRIBUTION_CAP) -> PrivateCounts:
    """Gaussian histogram of task sizes after capping each user at ``cap`` edges.

    Removing a user changes at most ``cap`` counts by one, so the squared L2
    sensitivity is ``cap``. The estimates target the capped histogram, which
    equals the true one whenever no user exceeds the cap.
    """
    if not noise_std > 0:
        raise PrivacyError(f"noise_std must be positive, got {noise_std}; "
                           "use exact_counts() for noiseless runs")
    keep = cap_contributions(graph, cap, rng)
    counts = np.bincount(graph.tasks[keep], minlength=graph.m).astype(np.float64)
    estimates = counts + noise_std * rng.standard_normal(graph.m)
    return PrivateCounts(
        estimates=estimates,
        accuracy=count_accuracy(noise_std, graph.m, confidence),
        coefficient=gaussian_rdp_coefficient(float(cap), noise_std ** 2),
        confidence=confidence,
        noise_std=noise_std,
    )


def private_counts_for_budget(graph: TaskUserGraph, coefficient: float, confidence: float,
                              rng, cap: int = DEFAULT_CONTRIBUTION_CAP) -> PrivateCounts:
    """Like :func:`private_counts` with the noise calibrated to an RDP coefficient."""
    if not coefficient > 0:
        raise PrivacyError(f"count budget must be positive, got {coefficient}")
    return private_counts(graph, math.sqrt(cap / (2.0 * coefficient)), confidence, rng, cap)


def exact_counts(graph: TaskUserGraph) -> PrivateCounts:
    """Noiseless counts (``s = 0``) for public-count settings and tests."""
    return PrivateCounts(graph.task_counts.astype(np.float64), 0.0, 0.0, private=False)
