"""Task-user membership graph and the per-edge training data.

Edges are stored once, sorted by ``(task, user)``, and indexed both by task
(CSR over tasks) and by user (a permutation plus CSR over users).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graph input."""


@dataclass(frozen=True, eq=False)
class TaskUserGraph:
    """Bipartite membership between ``m`` tasks and ``n`` users.

    Attributes:
        m: Number of tasks.
        n: Number of users.
        tasks: Task index of every edge, sorted ascending.
        users: User index of every edge (ascending within a task).
    """

    m: int
    n: int
    tasks: np.ndarray
    users: np.ndarray
    task_ptr: np.ndarray = field(repr=False)
    user_order: np.ndarray = field(repr=False)
    user_ptr: np.ndarray = field(repr=False)

    @property
    def num_edges(self) -> int:
        return int(self.tasks.shape[0])

    @property
    def task_counts(self) -> np.ndarray:
        """``n_i = |Omega_i|`` for every task."""
        return np.diff(self.task_ptr)

    @property
    def user_counts(self) -> np.ndarray:
        """``n^j = |Omega^j|`` for every user."""
        return np.diff(self.user_ptr)

    def task_edges(self, i: int) -> np.ndarray:
        """Edge ids belonging to task ``i``."""
        return np.arange(self.task_ptr[i], self.task_ptr[i + 1])

    def user_edges(self, j: int) -> np.ndarray:
        """Edge ids belonging to user ``j``."""
        return self.user_order[self.user_ptr[j]:self.user_ptr[j + 1]]

    def task_adjacency(self, i: int) -> np.ndarray:
        return self.users[self.task_edges(i)]

    def user_adjacency(self, j: int) -> np.ndarray:
        return self.tasks[self.user_edges(j)]

    def edges(self) -> set[tuple[int, int]]:
        return set(zip(self.tasks.tolist(), self.users.tolist()))

    def __eq__(self, other):
        if not isinstance(other, TaskUserGraph):
            return NotImplemented
        return (self.m == other.m and self.n == other.n
                and np.array_equal(self.tasks, other.tasks)
                and np.array_equal(self.users, other.users))

    def __hash__(self):
        return hash((self.m, self.n, self.tasks.tobytes(), self.users.tobytes()))

    def subgraph(self, keep: np.ndarray) -> TaskUserGraph:
        """Graph on the edges selected by the boolean mask ``keep``."""
        return _from_sorted(self.m, self.n, self.tasks[keep], self.users[keep])


def _from_sorted(m, n, tasks, users) -> TaskUserGraph:
    tasks = np.ascontiguousarray(tasks, dtype=np.int64)
    users = np.ascontiguousarray(users, dtype=np.int64)
    task_ptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.bincount(tasks, minlength=m), out=task_ptr[1:])
    user_order = np.argsort(users, kind="stable")
    user_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(users, minlength=n), out=user_ptr[1:])
    for arr in (tasks, users, task_ptr, user_order, user_ptr):
        arr.setflags(write=False)
    return TaskUserGraph(m, n, tasks, users, task_ptr, user_order, user_ptr)


def _dedup_order(m, n, tasks, users):
    """Indices of the last occurrence of each (task, user) pair, sorted by pair."""
    key = tasks * n + users
    # reversed stable unique keeps the last occurrence
    rev = key[::-1]
    _, first_in_rev = np.unique(rev, return_index=True)
    return (len(key) - 1 - first_in_rev)


def _check_edges(m, n, tasks, users):
    if m < 1 or n < 1:
        raise GraphError(f"need m >= 1 and n >= 1, got m={m}, n={n}")
    if m > n:
        raise GraphError(f"expected m <= n (more users than tasks), got m={m}, n={n}")
    bad = (tasks < 0) | (tasks >= m) | (users < 0) | (users >= n)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise GraphError(
            f"edge ({int(tasks[k])}, {int(users[k])}) out of range for m={m}, n={n}")


def build_graph(edge_list, m: int, n: int) -> TaskUserGraph:
    """Build a deduplicated graph from ``(task, user)`` pairs."""
    arr = np.asarray(list(edge_list) if not isinstance(edge_list, np.ndarray) else edge_list,
                     dtype=np.int64).reshape(-1, 2)
    tasks, users = arr[:, 0], arr[:, 1]
    _check_edges(m, n, tasks, users)
    idx = _dedup_order(m, n, tasks, users)
    return _from_sorted(m, n, tasks[idx], users[idx])


@dataclass(frozen=True, eq=False)
class MultiTaskDataset:
    """Edge-aligned features and scalar labels on a task-user graph.

    ``x[e]`` and ``y[e]`` belong to edge ``e`` of ``graph`` (same order as
    ``graph.tasks``). ``clip_x`` and ``clip_star`` record the bounds the
    data was clipped to, if any.
    """

    graph: TaskUserGraph
    x: np.ndarray
    y: np.ndarray
    clip_x: float | None = None
    clip_star: float | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.graph.num_edges:
            raise GraphError(
                f"x must have shape ({self.graph.num_edges}, d), got {x.shape}")
        if y.shape != (self.graph.num_edges,):
            raise GraphError(f"y must have shape ({self.graph.num_edges},), got {y.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def d(self) -> int:
        return int(self.x.shape[1])

    @property
    def m(self) -> int:
        return self.graph.m

    @property
    def n(self) -> int:
        return self.graph.n

    def subset(self, keep: np.ndarray) -> MultiTaskDataset:
        keep = np.asarray(keep, dtype=bool)
        return MultiTaskDataset(self.graph.subgraph(keep), self.x[keep], self.y[keep],
                                self.clip_x, self.clip_star)


def make_dataset(edge_list, x, y, m: int, n: int, **kwargs) -> MultiTaskDataset:
    """Dataset from unsorted edges with their data; duplicates keep the last row."""
    arr = np.asarray(edge_list, dtype=np.int64).reshape(-1, 2)
    tasks, users = arr[:, 0], arr[:, 1]
    _check_edges(m, n, tasks, users)
    idx = _dedup_order(m, n, tasks, users)
    graph = _from_sorted(m, n, tasks[idx], users[idx])
    x = np.asarray(x, dtype=np.float64)
    x = x.reshape(len(arr), x.shape[-1] if x.ndim == 2 else -1)
    return MultiTaskDataset(graph, x[idx], np.asarray(y, dtype=np.float64)[idx], **kwargs)


def remove_user(dataset: MultiTaskDataset, j: int) -> MultiTaskDataset:
    """The neighboring dataset with every sample of user ``j`` removed."""
    if not 0 <= j < dataset.n:
        raise GraphError(f"user {j} out of range [0, {dataset.n})")
    return dataset.subset(dataset.graph.users != j)


def clip_rows(x: np.ndarray, bound: float) -> np.ndarray:
    """Rescale each row to L2 norm at most ``bound``; rows inside are untouched.

    Rescaled rows are shrunk by a few ulps when rounding leaves them just
    outside, so the result is exactly inside and clipping is idempotent.
    """
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > bound, bound / norms, 1.0)
    out = x * scale
    for _ in range(8):
        over = np.linalg.norm(out, axis=-1, keepdims=True) > bound
        if not over.any():
            break
        scale = np.where(over, scale * (1.0 - 2.0 * np.finfo(float).eps), scale)
        out = x * scale
    return out


def clip_dataset(dataset: MultiTaskDataset, clip_x: float, clip_star: float) -> MultiTaskDataset:
    """Clip features to norm ``clip_x`` and labels to ``clip_x * clip_star``."""
    if clip_x <= 0 or clip_star <= 0:
        raise ValueError("clipping bounds must be positive")
    x = clip_rows(dataset.x, clip_x)
    y = np.clip(dataset.y, -clip_x * clip_star, clip_x * clip_star)
    return MultiTaskDataset(dataset.graph, x, y, clip_x, clip_star)


# --- text formats -----------------------------------------------------------

def write_graph(graph: TaskUserGraph, path) -> None:
    """Write a graph as ``m=``/``n=`` header lines followed by ``task,user`` rows."""
    with open(path, "w", newline="") as fh:
        fh.write(f"m={graph.m}\nn={graph.n}\n")
        w = csv.writer(fh)
        w.writerow(["task", "user"])
        w.writerows(zip(graph.tasks.tolist(), graph.users.tolist()))


def read_graph(path) -> TaskUserGraph:
    with open(path, newline="") as fh:
        m = int(fh.readline().strip().split("=", 1)[1])
        n = int(fh.readline().strip().split("=", 1)[1])
        rows = list(csv.reader(fh))[1:]
    return build_graph([(int(t), int(u)) for t, u in rows], m, n)


@dataclass(frozen=True)
class RatingData:
    """Ratings keyed by item (task) and user with the original identifiers."""

    graph: TaskUserGraph
    values: np.ndarray
    item_ids: list
    user_ids: list

    @property
    def m(self) -> int:
        return self.graph.m

    @property
    def n(self) -> int:
        return self.graph.n

    def subset(self, keep) -> RatingData:
        keep = np.asarray(keep, dtype=bool)
        return RatingData(self.graph.subgraph(keep), self.values[keep],
                          self.item_ids, self.user_ids)


def ratings_from_arrays(items, users, values, m: int, n: int, item_ids=None,
                        user_ids=None) -> RatingData:
    """Build ratings from index arrays; repeated (item, user) keep the last value."""
    items = np.asarray(items, dtype=np.int64)
    users = np.asarray(users, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    _check_edges(m, n, items, users)
    idx = _dedup_order(m, n, items, users)
    graph = _from_sorted(m, n, items[idx], users[idx])
    return RatingData(graph, values[idx],
                      list(range(m)) if item_ids is None else list(item_ids),
                      list(range(n)) if user_ids is None else list(user_ids))


def read_ratings(path) -> RatingData:
    """Read a ``user_id,item_id,value`` file with one header line.

    Items become tasks. Identifiers are mapped to contiguous indices in order
    of first appearance; a repeated (user, item) pair keeps its last value.
    """
    path = Path(path)
    item_index: dict[str, int] = {}
    user_index: dict[str, int] = {}
    items, users, values = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise GraphError(f"{path}: empty ratings file")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise GraphError(f"{path}:{lineno}: expected user_id,item_id,value")
            u, i, v = (s.strip() for s in row)
            users.append(user_index.setdefault(u, len(user_index)))
            items.append(item_index.setdefault(i, len(item_index)))
            try:
                values.append(float(v))
            except ValueError:
                raise GraphError(f"{path}:{lineno}: bad rating value {v!r}") from None
    m, n = len(item_index), len(user_index)
    if m == 0:
        raise GraphError(f"{path}: no ratings")
    return ratings_from_arrays(items, users, values, m, n,
                               item_ids=list(item_index), user_ids=list(user_index))


def write_ratings(ratings: RatingData, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "item_id", "value"])
        for t, u, v in zip(ratings.graph.tasks, ratings.graph.users, ratings.values):
            w.writerow([ratings.user_ids[u], ratings.item_ids[t], repr(float(v))])
