"""Task-weighted private solvers for multi-task ridge regression and convex ERM.

Two mechanisms are provided:

* :func:`weighted_ssp` perturbs the weighted sufficient statistics
  ``A_i = sum_j w_ij (x x^T + lam I)`` and ``b_i = sum_j w_ij y x`` with
  Gaussian noise and solves ``A_i^+ b_i`` after projecting onto the PSD cone.
* :func:`weighted_noisy_gd` runs full-batch projected gradient descent on the
  weighted objective, adding Gaussian noise to each clipped task gradient.

Both are ``(alpha, beta * alpha)``-RDP where ``beta`` is the plan's per-user
budget. Utility is always measured on the unweighted objective.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .allocation import WeightPlan
from .graph import MultiTaskDataset, clip_rows
from .privacy import RdpAccount, gaussian_rdp_coefficient, per_user_budget


class SolverError(ValueError):
    pass


@dataclass
class ModelParams:
    """Per-task parameter vectors, one row per task."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 2:
            raise SolverError("theta must be an (m, d) array")
        if not np.all(np.isfinite(self.theta)):
            raise SolverError("theta has non-finite entries")

    @property
    def m(self):
        return self.theta.shape[0]

    @property
    def d(self):
        return self.theta.shape[1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            _write_rows(fh, self.theta, "task")

    @classmethod
    def read_csv(cls, path) -> ModelParams:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return cls(np.array([[float(v) for v in r[1:]] for r in rows]))


def _write_rows(fh, mat, index_name):
    w = csv.writer(fh)
    w.writerow([index_name] + [f"coord_{k}" for k in range(mat.shape[1])])
    for i, row in enumerate(mat):
        w.writerow([i] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class SspStatistics:
    A: np.ndarray
    b: np.ndarray


# --- losses ---------------------------------------------------------------------

@dataclass(frozen=True)
class RidgeLoss:
    """``(theta . x - y)^2 + lam ||theta||^2`` per example."""

    lam: float

    def value(self, theta_rows, x, y):
        r = np.einsum("ed,ed->e", theta_rows, x) - y
        return r * r + self.lam * np.einsum("ed,ed->e", theta_rows, theta_rows)

    def gradient(self, theta_rows, x, y):
        r = np.einsum("ed,ed->e", theta_rows, x) - y
        return 2.0 * r[:, None] * x + 2.0 * self.lam * theta_rows

    @property
    def strong_convexity(self) -> float:
        return 2.0 * self.lam

    def lipschitz(self, radius: float, clip_x: float, clip_star: float) -> float:
        """Gradient-norm bound on the ball of ``radius`` for clipped data."""
        return 2.0 * clip_x * (clip_x * radius + clip_x * clip_star) + 2.0 * self.lam * radius


@dataclass(frozen=True)
class AbsoluteLoss:
    """``|theta . x - y|`` per example (convex, Lipschitz, not strongly convex)."""

    def value(self, theta_rows, x, y):
        return np.abs(np.einsum("ed,ed->e", theta_rows, x) - y)

    def gradient(self, theta_rows, x, y):
        r = np.einsum("ed,ed->e", theta_rows, x) - y
        return np.sign(r)[:, None] * x

    strong_convexity = 0.0

    def lipschitz(self, radius: float, clip_x: float, clip_star: float) -> float:
        return clip_x


def objective(theta, dataset: MultiTaskDataset, loss, weights=None) -> float:
    """``sum_e w_e loss(theta_task(e); x_e, y_e)``; unweighted when ``weights`` is None."""
    theta = np.asarray(theta.theta if isinstance(theta, ModelParams) else theta)
    vals = loss.value(theta[dataset.graph.tasks], dataset.x, dataset.y)
    if weights is not None:
        vals = vals * weights
    return math.fsum(vals)


# --- exact oracle -------------------------------------------------------------

def ssp_statistics(dataset: MultiTaskDataset, edge_weights, lam: float,
                   ridge_mass=None) -> SspStatistics:
    """Noise-free weighted statistics ``A_i`` and ``b_i``.

    The ridge term is ``lam * ridge_mass_i * I``; ``ridge_mass`` defaults to
    the summed edge weights of each task.
    """
    g = dataset.graph
    w = np.asarray(edge_weights, dtype=np.float64)
    if w.shape != (g.num_edges,):
        raise SolverError(f"expected {g.num_edges} edge weights, got shape {w.shape}")
    A, b = kernels.segment_gram(g.tasks, dataset.x, w, dataset.y, g.m)
    if lam:
        if ridge_mass is None:
            ridge_mass = kernels.segment_sum(g.tasks, w, g.m)
        A = add_ridge(A, lam * np.asarray(ridge_mass, dtype=np.float64))
    return SspStatistics(A, b)


def add_ridge(A: np.ndarray, diag) -> np.ndarray:
    """``A_i + diag_i * I`` for a stack of square matrices."""
    return A + np.asarray(diag)[:, None, None] * np.eye(A.shape[-1])


def ridge_exact(dataset: MultiTaskDataset, lam: float) -> ModelParams:
    """Per-task ridge solution ``A_i^{-1} b_i``; tasks without data get zeros."""
    g = dataset.graph
    stats = ssp_statistics(dataset, np.ones(g.num_edges), lam)
    theta = np.zeros((g.m, dataset.d))
    nonempty = g.task_counts > 0
    if nonempty.any():
        A = stats.A[nonempty]
        if lam <= 0 and np.any(np.linalg.matrix_rank(A) < dataset.d):
            raise SolverError("lam <= 0 and some task has a rank-deficient Gram matrix")
        theta[nonempty] = np.linalg.solve(A, stats.b[nonempty][..., None])[..., 0]
    return ModelParams(theta)


def psd_pinv_solve(A: np.ndarray, b: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
    """``A^+ b`` for the PSD projection of each symmetric ``A``.

    Negative eigenvalues are zeroed; eigenvalues at or below ``rcond`` times
    the largest are treated as zero.
    """
    evals, evecs = np.linalg.eigh(A)
    top = evals.max(axis=-1, keepdims=True)
    keep = (evals > 0) & (evals > rcond * np.maximum(top, 0))
    inv = np.where(keep, 1.0 / np.where(keep, evals, 1.0), 0.0)
    proj = np.einsum("...dk,...k->...d", evecs, np.einsum("...dk,...d->...k", evecs, b) * inv)
    return proj


def symmetric_noise(rng, m: int, d: int) -> np.ndarray:
    """``m`` symmetric matrices with i.i.d. standard normal upper triangles."""
    z = rng.standard_normal((m, d, d))
    upper = np.triu(z)
    return upper + np.swapaxes(np.triu(z, 1), 1, 2)


# --- SSP ---------------------------------------------------------------------------

def _check_plan(plan: WeightPlan, dataset: MultiTaskDataset):
    if plan.edge_weights.shape != (dataset.graph.num_edges,):
        raise SolverError(
            f"plan has {plan.edge_weights.shape[0]} edge weights but the dataset has "
            f"{dataset.graph.num_edges} edges")
    realized = per_user_budget(plan.edge_weights, dataset.graph)
    if realized > plan.budget:
        raise SolverError(f"plan exceeds its budget: {realized} > {plan.budget}")


def weighted_ssp(dataset: MultiTaskDataset, plan: WeightPlan, clip_x: float, clip_star: float,
                 lam: float, rng, noise_on: bool = True, account: RdpAccount | None = None,
                 return_stats: bool = False):
    """Task-weighted sufficient statistics perturbation.

    Args:
        dataset: training data; clipped to ``clip_x`` / ``clip_x * clip_star``
            here if it was not already.
        plan: per-edge weights with ``max_j sum_i w_ij^2 <= plan.budget``.
        clip_x: feature norm bound.
        clip_star: solution norm bound; labels are bounded by ``clip_x * clip_star``.
        lam: ridge regularization per example.
        rng: numpy Generator for the noise.
        noise_on: False gives the noiseless weighted solution (tests only).
        account: if given, the two releases are composed into it.
        return_stats: also return the noisy statistics.

    Returns:
        :class:`ModelParams`, or ``(ModelParams, SspStatistics)``.
    """
    _check_plan(plan, dataset)
    g = dataset.graph
    x = clip_rows(dataset.x, clip_x)
    y = np.clip(dataset.y, -clip_x * clip_star, clip_x * clip_star)
    clipped = MultiTaskDataset(g, x, y, clip_x, clip_star)
    stats = ssp_statistics(clipped, plan.edge_weights, 0.0)
    A, b = stats.A, stats.b
    if noise_on:
        A = A + clip_x ** 2 * symmetric_noise(rng, g.m, dataset.d)
        b = b + clip_x ** 2 * clip_star * rng.standard_normal((g.m, dataset.d))
    # the ridge term depends on the plan only, so it is added after the noise
    A = add_ridge(A, lam * plan.ridge_mass(g))
    if account is not None:
        if not noise_on:
            account.private = False
        half = gaussian_rdp_coefficient(plan.budget * clip_x ** 4, clip_x ** 4)
        account.compose(half, "ssp: A statistics")
        account.compose(half, "ssp: b statistics")
    params = ModelParams(psd_pinv_solve(A, b))
    if return_stats:
        return params, SspStatistics(A, b)
    return params


# --- noisy gradient descent ----------------------------------------------------------

@dataclass
class GdConfig:
    """Hyperparameters for :func:`weighted_noisy_gd`.

    ``rates(t)`` returns the per-task learning rates at step ``t`` (1-based).
    """

    radius: float
    lipschitz: float
    steps: int
    rates: Callable[[int], np.ndarray]
    strong_convexity: float = 0.0
    theta0: np.ndarray | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise SolverError(f"need at least one step, got {self.steps}")
        if not self.radius > 0 or not self.lipschitz > 0:
            raise SolverError("radius and Lipschitz constant must be positive")


@dataclass
class Schedule:
    """Per-task learning rates ``scale_i / t**power``."""

    scale: np.ndarray
    power: float

    def __call__(self, t: int) -> np.ndarray:
        if t < 1:
            raise SolverError("steps are numbered from 1")
        return self.scale / float(t) ** self.power


def _ceil_steps(x: float) -> int:
    """``ceil(x)`` floored at 1, ignoring rounding noise just above an integer."""
    return max(1, math.ceil(x * (1.0 - 1e-12)))


def _schedule_inputs(counts, omega):
    counts = np.maximum(np.asarray(counts, dtype=np.float64), 1.0)
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(omega <= 0):
        raise SolverError("task weights must be positive")
    return counts, omega


def schedule_lipschitz(counts, omega, d: int, lipschitz: float, diameter: float):
    """Step count and rates for convex Lipschitz losses on a bounded domain.

    ``T = (2/d) sum n_i^2 / sum omega_i^{-2}`` (rounded up) and
    ``eta_i(t) = diameter / (G sqrt(omega_i^2 n_i^2 + T d / 2) sqrt(t))``.
    """
    counts, omega = _schedule_inputs(counts, omega)
    T = _ceil_steps(2.0 / d * np.sum(counts ** 2) / np.sum(omega ** -2.0))
    scale = diameter / (lipschitz * np.sqrt(omega ** 2 * counts ** 2 + T * d / 2.0))
    return T, Schedule(scale, 0.5)


def schedule_strongly_convex(counts, omega, d: int, strong_convexity: float,
                             variant: str = "proof"):
    """Step count and ``1/t`` rates for strongly convex losses.

    ``T = (2/d) sum n_i / sum 1/(omega_i^2 n_i)`` (rounded up). The rate is
    ``1/(omega_i n_i lam t)`` for ``variant="proof"`` and
    ``1/(omega_i^2 n_i lam t)`` for ``variant="statement"``.
    """
    if not strong_convexity > 0:
        raise SolverError("strong convexity must be positive")
    counts, omega = _schedule_inputs(counts, omega)
    T = _ceil_steps(2.0 / d * np.sum(counts) / np.sum(1.0 / (omega ** 2 * counts)))
    if variant == "proof":
        scale = 1.0 / (omega * counts * strong_convexity)
    elif variant == "statement":
        scale = 1.0 / (omega ** 2 * counts * strong_convexity)
    else:
        raise SolverError(f"unknown rate variant {variant!r}")
    return T, Schedule(scale, 1.0)


class NoiseStreams:
    """Standard normal noise keyed by (task, step).

    Each task owns an independent generator derived from ``entropy`` and its
    index and draws steps in fixed-size chunks, so the noise for a given task
    and step does not depend on how many tasks exist or in which order they run.
    """

    def __init__(self, entropy: int, m: int, d: int, chunk: int = 256):
        self.gens = [np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(i,)))
                     for i in range(m)]
        self.d = d
        self.chunk = chunk
        self._buf = None
        self._start = 0

    def step(self, t: int) -> np.ndarray:
        """Noise for 1-based step ``t``; steps must be requested in order."""
        k = t - 1
        if self._buf is None or k >= self._start + self.chunk:
            self._start = (k // self.chunk) * self.chunk
            self._buf = np.stack([gen.standard_normal((self.chunk, self.d)) for gen in self.gens])
        return self._buf[:, k - self._start, :]


@dataclass
class GdInfo:
    clip_activations: int = 0
    max_example_grad_norm: float = 0.0
    max_task_grad_norm: float = 0.0
    history: list = field(default_factory=list)


def _project_ball(theta, radius):
    return clip_rows(theta, radius)


def _task_gradients(theta, dataset: MultiTaskDataset, edge_weights, loss):
    g = dataset.graph
    grads = loss.gradient(theta[g.tasks], dataset.x, dataset.y)
    return kernels.segment_sum(g.tasks, edge_weights[:, None] * grads, g.m), grads


def task_gradients(theta, dataset: MultiTaskDataset, edge_weights, loss,
                   clip: float | None = None) -> np.ndarray:
    """Weighted per-task gradient sums ``sum_j w_ij grad l(theta_i; x_ij, y_ij)``.

    With ``clip`` each task's sum is clipped to that norm, as in one step of
    :func:`weighted_noisy_gd` before noise.
    """
    w = np.asarray(edge_weights, dtype=np.float64)
    out, _ = _task_gradients(np.asarray(theta, dtype=np.float64), dataset, w, loss)
    return out if clip is None else clip_rows(out, clip)


def weighted_noisy_gd(dataset: MultiTaskDataset, plan: WeightPlan, cfg: GdConfig, loss, rng,
                      noise_on: bool = True, account: RdpAccount | None = None,
                      return_info: bool = False):
    """Task-weighted noisy projected gradient descent.

    For each task and step: sum the weighted per-example gradients, clip the
    sum to norm ``cfg.lipschitz``, add ``N(0, lipschitz^2 T / 2)`` noise and
    take a projected step onto the ball of ``cfg.radius``.
    """
    _check_plan(plan, dataset)
    g = dataset.graph
    m, d, T = g.m, dataset.d, cfg.steps
    theta = np.zeros((m, d)) if cfg.theta0 is None else np.array(cfg.theta0, dtype=np.float64)
    theta = _project_ball(theta, cfg.radius)
    w = plan.edge_weights
    sigma = cfg.lipschitz * math.sqrt(T / 2.0)
    streams = NoiseStreams(int(rng.integers(2 ** 63)), m, d) if noise_on else None
    info = GdInfo()
    for t in range(1, T + 1):
        task_grad, grads = _task_gradients(theta, dataset, w, loss)
        if return_info and grads.size:
            info.max_example_grad_norm = max(info.max_example_grad_norm,
                                             float(np.linalg.norm(grads, axis=1).max()))
        norms = np.linalg.norm(task_grad, axis=1)
        info.clip_activations += int(np.sum(norms > cfg.lipschitz))
        info.max_task_grad_norm = max(info.max_task_grad_norm, float(norms.max(initial=0.0)))
        task_grad = clip_rows(task_grad, cfg.lipschitz)
        if noise_on:
            task_grad = task_grad + sigma * streams.step(t)
        eta = np.asarray(cfg.rates(t), dtype=np.float64)
        if np.any(eta <= 0):
            raise SolverError("learning rates must be positive")
        theta = _project_ball(theta - eta[:, None] * task_grad, cfg.radius)
    if account is not None:
        if not noise_on:
            account.private = False
        per_step = gaussian_rdp_coefficient(plan.budget * cfg.lipschitz ** 2, sigma ** 2)
        for t in range(T):
            account.compose(per_step, f"gd: step {t + 1}")
    params = ModelParams(theta)
    if return_info:
        return params, info
    return params


def excess_risk(theta_hat, dataset: MultiTaskDataset, lam: float, loss=None,
                theta_star=None) -> float:
    """``L(theta_hat) - L(theta*)`` on the unweighted objective.

    ``theta*`` defaults to :func:`ridge_exact`, the minimizer for the ridge loss.
    """
    loss = RidgeLoss(lam) if loss is None else loss
    if theta_star is None:
        if not isinstance(loss, RidgeLoss):
            raise SolverError("theta_star is required for non-ridge losses")
        theta_star = ridge_exact(dataset, lam)
    return objective(theta_hat, dataset, loss) - objective(theta_star, dataset, loss)


def predict(theta, dataset: MultiTaskDataset) -> np.ndarray:
    theta = np.asarray(theta.theta if isinstance(theta, ModelParams) else theta)
    return np.einsum("ed,ed->e", theta[dataset.graph.tasks], dataset.x)


def test_rmse(theta, dataset: MultiTaskDataset) -> float:
    """Root mean squared prediction error on the edges of ``dataset``."""
    if dataset.graph.num_edges == 0:
        raise SolverError("empty evaluation set")
    err = predict(theta, dataset) - dataset.y
    return float(np.sqrt(np.mean(err * err)))


test_rmse.__test__ = False


def write_manifest(path, params: dict, account: RdpAccount | None = None) -> None:
    """Plain-text record of a solver run: ``key=value`` lines and the RDP ledger."""
    with open(path, "w") as fh:
        for key in sorted(params):
            fh.write(f"{key}={params[key]}\n")
        if account is not None:
            fh.write(f"private={account.private}\n")
            fh.write(f"total_coefficient={account.total_coefficient!r}\n")
            fh.write("[ledger]\nlabel,coefficient\n")
            for label, c in account.entries:
                fh.write(f"{label},{c!r}\n")
