"""Private matrix completion by alternating minimization.

Items are tasks and users are users. Each round solves every user's
embedding exactly against the current item matrix (a local computation that
releases nothing) and then privately refits the item matrix with a weighted
solver from :mod:`skewdp.solvers`. Only the item matrix ``U`` is released, so
the ledger holds the preprocessing cost plus one solver release per round.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .allocation import (
    WeightPlan,
    adjusted_counts,
    generalized_weights,
    make_plan,
    sampling_plan,
    tail_biased_sampling,
    uniform_sampling,
)
from .graph import MultiTaskDataset, RatingData, clip_rows
from .privacy import (
    DEFAULT_CONTRIBUTION_CAP,
    PrivateCounts,
    RdpAccount,
    exact_counts,
    private_counts_for_budget,
)
from .solvers import (
    GdConfig,
    RidgeLoss,
    schedule_strongly_convex,
    weighted_noisy_gd,
    weighted_ssp,
)

STRATEGIES = ("uniform-sampling", "tail-sampling", "adaptive-weights", "uniform-weights")
SOLVERS = ("ssp", "gd")


class MatcompError(ValueError):
    pass


@dataclass
class FactorizationModel:
    """Item matrix ``U`` (m x d), user matrix ``V`` (n x d) and a rating offset."""

    U: np.ndarray
    V: np.ndarray
    lam: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=np.float64)
        self.V = np.asarray(self.V, dtype=np.float64)
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != self.V.shape[1]:
            raise MatcompError(f"incompatible factor shapes {self.U.shape} and {self.V.shape}")
        if not (np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.V))):
            raise MatcompError("factors have non-finite entries")

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def predict(self, items, users) -> np.ndarray:
        return np.einsum("ed,ed->e", self.U[items], self.V[users]) + self.offset

    def scores(self, users=None) -> np.ndarray:
        """Predicted ratings for every (user, item) pair, shape (users, m)."""
        V = self.V if users is None else self.V[users]
        return V @ self.U.T + self.offset

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"lam={self.lam!r}\noffset={self.offset!r}\n")
            for name, mat, index in (("U", self.U, "task"), ("V", self.V, "user")):
                fh.write(f"matrix={name}\n")
                w = csv.writer(fh)
                w.writerow([index] + [f"coord_{k}" for k in range(mat.shape[1])])
                for i, row in enumerate(mat):
                    w.writerow([i] + [repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, path) -> FactorizationModel:
        blocks: dict[str, list] = {}
        meta = {}
        current = None
        with open(path, newline="") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("matrix="):
                    current = line.split("=", 1)[1]
                    blocks[current] = []
                elif current is None:
                    key, _, value = line.partition("=")
                    meta[key] = float(value)
                elif not line.startswith(("task,", "user,")):
                    blocks[current].append([float(v) for v in line.split(",")[1:]])
        d = None
        mats = {}
        for name in ("U", "V"):
            rows = blocks.get(name, [])
            if rows:
                d = len(rows[0])
            mats[name] = rows
        mats = {k: np.array(v).reshape(len(v), d or 0) for k, v in mats.items()}
        return cls(mats["U"], mats["V"], meta.get("lam", 0.0), meta.get("offset", 0.0))


@dataclass
class AlsRun:
    """Outcome of :func:`alternating_minimization`.

    Attributes:
        model: final factors; only ``model.U`` is a privacy-relevant release.
        account: RDP ledger of the run.
        counts: the (private or exact) item counts used to build the plan.
        plan: the weight plan used for every item update.
    """

    model: FactorizationModel
    account: RdpAccount
    counts: PrivateCounts
    plan: WeightPlan
    history: list = field(default_factory=list)


def user_solve(U, ratings: RatingData, lam: float, offset: float = 0.0) -> np.ndarray:
    """Every user's ridge solution ``argmin_v sum (<u_i, v> - y_ij)^2 + lam |v|^2``.

    Users without ratings get the zero vector.
    """
    if not lam > 0:
        raise MatcompError(f"user regularization must be positive, got {lam}")
    U = np.asarray(U, dtype=np.float64)
    g = ratings.graph
    d = U.shape[1]
    A, b = kernels.segment_gram(g.users, U[g.tasks], np.ones(g.num_edges),
                                ratings.values - offset, g.n)
    A = A + lam * np.eye(d)
    return np.linalg.solve(A, b[..., None])[..., 0]


def private_mean(ratings: RatingData, bound: float, coefficient: float, rng) -> float:
    """Global mean rating from each user's clipped average plus Gaussian noise.

    Every user contributes one value in ``[-bound, bound]``, so removing a user
    moves the sum by at most ``bound``. The user count is treated as public.
    """
    g = ratings.graph
    sums = kernels.segment_sum(g.users, ratings.values, g.n)
    counts = g.user_counts
    active = counts > 0
    if not active.any():
        raise MatcompError("no ratings")
    means = np.clip(sums[active] / counts[active], -bound, bound)
    sigma = bound / math.sqrt(2.0 * coefficient)
    return float((means.sum() + sigma * rng.standard_normal()) / active.sum())


def build_plan(strategy: str, graph, counts, budget: float, rng, mu: float = 0.5,
               c_n: float = 1.0, per_user_cap: int = 20) -> WeightPlan:
    """Weight plan for one of :data:`STRATEGIES` from (adjusted) item counts."""
    counts = np.maximum(np.asarray(counts, dtype=np.float64), 1.0)
    if strategy == "adaptive-weights":
        omega = generalized_weights(counts, budget, mu, graph.n, c_n)
        return make_plan(omega, graph, budget, mu=mu, c_n=c_n, strategy=strategy, counts=counts)
    if strategy == "uniform-weights":
        omega = generalized_weights(counts, budget, 0.0, graph.n, c_n)
        return make_plan(omega, graph, budget, mu=0.0, c_n=c_n, strategy=strategy,
                         counts=counts)
    if strategy == "tail-sampling":
        ind = tail_biased_sampling(graph, counts, per_user_cap)
        return sampling_plan(ind, graph, budget, per_user_cap, strategy, counts)
    if strategy == "uniform-sampling":
        ind = uniform_sampling(graph, per_user_cap, rng)
        return sampling_plan(ind, graph, budget, per_user_cap, strategy, counts)
    raise MatcompError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def alternating_minimization(ratings: RatingData, steps: int, rank: int, lam: float,
                             beta: float, beta0: float, strategy: str, rng, *,
                             solver: str = "ssp", mu: float = 0.5, c_n: float = 1.0,
                             per_user_cap: int = 20, clip_x: float = 1.0,
                             clip_star: float = 1.0, center: bool = False,
                             rating_bound: float = 5.0, count_confidence: float = 0.9,
                             contribution_cap: int = DEFAULT_CONTRIBUTION_CAP,
                             noise_on: bool = True, U0=None) -> AlsRun:
    """Private alternating minimization with task-weighted item updates.

    Args:
        ratings: training ratings (items are tasks).
        steps: number of rounds ``T``.
        rank: factor dimension.
        lam: ridge regularization for both user and item solves.
        beta: RDP coefficient spent by each item update.
        beta0: RDP coefficient for preprocessing (counts and, if ``center``,
            the global mean, half each).
        strategy: one of :data:`STRATEGIES`.
        rng: numpy Generator.
        solver: ``"ssp"`` or ``"gd"``.
        mu: weight exponent for ``adaptive-weights``.
        c_n: concentration factor for weight normalization.
        per_user_cap: tasks kept per user by the sampling strategies.
        clip_x: bound on user embeddings used as item-update features.
        clip_star: item norm bound; labels are clipped to ``clip_x * clip_star``.
        center: subtract a privately estimated global mean.
        rating_bound: public bound on absolute ratings used for centering.
        noise_on: False runs every step without noise and uses exact counts;
            the resulting account is marked non-private.
        U0: initial item matrix; defaults to i.i.d. ``N(0, 1/rank)`` entries.

    Returns:
        An :class:`AlsRun` whose ledger totals ``beta0 + steps * beta``.
    """
    if steps < 1 or rank < 1:
        raise MatcompError("steps and rank must be >= 1")
    if not (beta > 0 and beta0 > 0):
        raise MatcompError("budgets must be positive")
    if strategy not in STRATEGIES:
        raise MatcompError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if solver not in SOLVERS:
        raise MatcompError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
    g = ratings.graph
    account = RdpAccount() if noise_on else RdpAccount.non_private()

    count_budget = beta0 / 2.0 if center else beta0
    if noise_on:
        counts = private_counts_for_budget(g, count_budget, count_confidence, rng,
                                           contribution_cap)
        planning_counts = adjusted_counts(counts)
    else:
        counts = exact_counts(g)
        planning_counts = counts.estimates
    account.compose(count_budget, "preprocess: item counts")
    offset = 0.0
    if center:
        mean_budget = beta0 - count_budget
        if noise_on:
            offset = private_mean(ratings, rating_bound, mean_budget, rng)
        else:
            offset = float(np.mean(ratings.values))
        account.compose(mean_budget, "preprocess: global mean")

    plan = build_plan(strategy, g, planning_counts, beta, rng, mu=mu, c_n=c_n,
                      per_user_cap=per_user_cap)
    U = (rng.standard_normal((g.m, rank)) / math.sqrt(rank) if U0 is None
         else np.array(U0, dtype=np.float64))
    y = ratings.values - offset
    history = []
    for t in range(steps):
        V = user_solve(U, ratings, lam, offset)
        account.compose(0.0, f"round {t + 1}: user solves (billboard)")
        data = MultiTaskDataset(g, clip_rows(V[g.users], clip_x), y)
        round_account = RdpAccount() if noise_on else RdpAccount.non_private()
        if solver == "ssp":
            params = weighted_ssp(data, plan, clip_x, clip_star, lam, rng,
                                  noise_on=noise_on, account=round_account)
        else:
            params = _gd_item_update(data, plan, planning_counts, lam, clip_x, clip_star,
                                     rng, noise_on, round_account, U)
        # one release per round: record it as a single entry
        account.compose(round_account.total_coefficient,
                        f"round {t + 1}: item update")
        U = params.theta
        history.append(U.copy())
    V = user_solve(U, ratings, lam, offset)
    model = FactorizationModel(U, V, lam, offset)
    return AlsRun(model, account, counts, plan, history)


def _gd_item_update(data, plan, counts, lam, clip_x, clip_star, rng, noise_on, account, U):
    loss = RidgeLoss(lam)
    d = data.d
    T, rates = schedule_strongly_convex(counts, plan.task_weights, d, loss.strong_convexity)
    cfg = GdConfig(radius=clip_star, lipschitz=loss.lipschitz(clip_star, clip_x, clip_star),
                   steps=T, rates=rates, strong_convexity=loss.strong_convexity, theta0=U)
    y = np.clip(data.y, -clip_x * clip_star, clip_x * clip_star)
    clipped = MultiTaskDataset(data.graph, data.x, y)
    return weighted_noisy_gd(clipped, plan, cfg, loss, rng, noise_on=noise_on, account=account)


# --- metrics ------------------------------------------------------------------------

def rmse(model_or_predictions, test: RatingData) -> float:
    """Root mean squared error over the test ratings."""
    if test.graph.num_edges == 0:
        raise MatcompError("empty test set")
    if isinstance(model_or_predictions, FactorizationModel):
        pred = model_or_predictions.predict(test.graph.tasks, test.graph.users)
    else:
        pred = np.asarray(model_or_predictions, dtype=np.float64)
    err = pred - test.values
    return float(np.sqrt(np.mean(err * err)))


def training_loss(model: FactorizationModel, ratings: RatingData, lam: float | None = None) -> float:
    lam = model.lam if lam is None else lam
    err = model.predict(ratings.graph.tasks, ratings.graph.users) - ratings.values
    return float(np.sum(err * err) + lam * (np.sum(model.U ** 2) + np.sum(model.V ** 2)))


def top_k(scores: np.ndarray, k: int, exclude=None) -> np.ndarray:
    """Indices of the ``k`` largest scores per row; ties go to the lower index."""
    scores = np.array(scores, dtype=np.float64)
    if exclude is not None:
        scores[exclude] = -np.inf
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k]


def _user_item_mask(ratings: RatingData, n: int, m: int) -> np.ndarray:
    mask = np.zeros((n, m), dtype=bool)
    mask[ratings.graph.users, ratings.graph.tasks] = True
    return mask


def recall_at_k(model: FactorizationModel, test: RatingData, k: int, train: RatingData | None = None,
                items=None) -> float:
    """Mean over users of ``|test_j ∩ topk_j| / min(k, |test_j|)``.

    The ranking covers all items and excludes each user's training items.
    When ``items`` is given only test items in that set count, which gives the
    per-bucket variant. Users with no counted test items are left out; the
    result is ``nan`` if no user remains.
    """
    if k < 1:
        raise MatcompError(f"k must be >= 1, got {k}")
    m, n = model.U.shape[0], model.V.shape[0]
    test_mask = _user_item_mask(test, n, m)
    if items is not None:
        keep = np.zeros(m, dtype=bool)
        keep[np.asarray(items, dtype=np.int64)] = True
        test_mask &= keep[None, :]
    n_test = test_mask.sum(axis=1)
    users = np.flatnonzero(n_test > 0)
    if users.size == 0:
        return float("nan")
    exclude = _user_item_mask(train, n, m)[users] if train is not None else None
    top = top_k(model.scores(users), min(k, m), exclude)
    hits = np.take_along_axis(test_mask[users], top, axis=1)
    # excluded items can only land in the top-k when fewer than k remain
    if exclude is not None:
        hits &= ~np.take_along_axis(exclude, top, axis=1)
    return float(np.mean(hits.sum(axis=1) / np.minimum(k, n_test[users])))


@dataclass
class SlicedReport:
    """A metric computed globally and per frequency bucket.

    ``buckets[b]`` holds the task indices of bucket ``b``; bucket 0 has the
    lowest training counts.
    """

    metric: str
    buckets: list
    values: list
    global_value: float
    ks: list | None = None

    def rows(self):
        out = [("all", self.metric, self.global_value)]
        for b, v in enumerate(self.values):
            name = self.metric if self.ks is None else f"{self.metric}@{self.ks[b]}"
            out.append((str(b), name, v))
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bucket", "metric", "value"])
            for bucket, metric, value in self.rows():
                w.writerow([bucket, metric, repr(float(value))])


def frequency_buckets(train_counts, num_buckets: int) -> list:
    """Split tasks, sorted by ascending count, into equal buckets.

    Bucket sizes differ by at most one; the lowest buckets take the remainder.
    """
    counts = np.asarray(train_counts)
    m = counts.size
    if not 1 <= num_buckets <= m:
        raise MatcompError(f"bucket count must lie in [1, {m}], got {num_buckets}")
    order = np.argsort(counts, kind="stable")
    base, extra = divmod(m, num_buckets)
    sizes = [base + (1 if b < extra else 0) for b in range(num_buckets)]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [order[bounds[b]:bounds[b + 1]] for b in range(num_buckets)]


def graded_k(num_buckets: int, base: int = 20) -> list:
    """``k`` per bucket: ``base`` for the most frequent bucket, growing by ``base`` toward the tail."""
    return [base * (num_buckets - b) for b in range(num_buckets)]


def sliced_metrics(metric: str, model: FactorizationModel, test: RatingData, num_buckets: int,
                   train: RatingData, k: int | None = None, graded: bool = True) -> SlicedReport:
    """Global and per-bucket RMSE or recall, with buckets by training item counts.

    Args:
        metric: ``"rmse"`` or ``"recall"``.
        k: recall cutoff for the global value; per-bucket values use
            :func:`graded_k` with ``k`` as the base when ``graded``.
    """
    buckets = frequency_buckets(train.graph.task_counts, num_buckets)
    if metric == "rmse":
        values = []
        for items in buckets:
            keep = np.isin(test.graph.tasks, items)
            values.append(rmse(model, test.subset(keep)) if keep.any() else float("nan"))
        return SlicedReport("rmse", buckets, values, rmse(model, test))
    if metric == "recall":
        k = 20 if k is None else k
        ks = graded_k(num_buckets, k) if graded else [k] * num_buckets
        values = [recall_at_k(model, test, kb, train, items) for kb, items in zip(ks, buckets)]
        return SlicedReport("recall", buckets, values, recall_at_k(model, test, k, train), ks)
    raise MatcompError(f"unknown metric {metric!r}")


def write_metrics(rows, path) -> None:
    """Write ``(bucket, metric, value)`` rows as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket", "metric", "value"])
        for bucket, metric, value in rows:
            w.writerow([bucket, metric, repr(float(value))])


def train_test_split(ratings: RatingData, fraction: float, rng):
    """Random edge-level split of ratings."""
    if not 0 < fraction < 1:
        raise MatcompError(f"fraction must lie in (0, 1), got {fraction}")
    e = ratings.graph.num_edges
    mask = np.zeros(e, dtype=bool)
    mask[rng.permutation(e)[:int(round(fraction * e))]] = True
    return ratings.subset(mask), ratings.subset(~mask)


def low_rank_ratings(m: int, n: int, rank: int, density: float, rng, noise_std: float = 0.0,
                     skew: float | None = None) -> tuple[RatingData, np.ndarray, np.ndarray]:
    """Planted low-rank ratings ``<u_i, v_j> + noise`` on a random mask.

    With ``skew`` set, item observation rates follow ``U^{1/skew}`` scaled to
    the requested density instead of being uniform.
    """
    from .graph import ratings_from_arrays
    from .synthgen import normalize_rates

    U = rng.standard_normal((m, rank)) / math.sqrt(rank)
    V = rng.standard_normal((n, rank)) / math.sqrt(rank)
    if skew is None:
        rates = np.full(m, density)
    else:
        rates = normalize_rates(rng.random(m) ** (1.0 / skew), density * m)
    member = rng.random((m, n)) < rates[:, None]
    items, users = np.nonzero(member)
    vals = np.einsum("ed,ed->e", U[items], V[users]) + noise_std * rng.standard_normal(items.size)
    return ratings_from_arrays(items, users, vals, m, n), U, V
