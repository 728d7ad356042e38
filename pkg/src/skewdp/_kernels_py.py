"""Pure numpy versions of the compiled segment reductions."""
import numpy as np


def segment_sum(groups, values, n_groups):
    groups = np.asarray(groups, dtype=np.int64)
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if groups.shape[0] != arr.shape[0]:
        raise ValueError("groups and values disagree on the number of edges")
    if groups.size and (groups.min() < 0 or groups.max() >= n_groups):
        raise IndexError(f"group index out of range [0, {n_groups})")
    flat = arr.reshape(arr.shape[0], int(np.prod(arr.shape[1:])))
    out = np.empty((n_groups, flat.shape[1]))
    for c in range(flat.shape[1]):
        out[:, c] = np.bincount(groups, weights=flat[:, c], minlength=n_groups)
    if arr.ndim == 1:
        return out.reshape(n_groups)
    return out.reshape((n_groups,) + arr.shape[1:])


def segment_gram(groups, x, w, y, n_groups):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_edges, d = x.shape
    if len(groups) != n_edges or w.shape[0] != n_edges or y.shape[0] != n_edges:
        raise ValueError("edge arrays have inconsistent lengths")
    wx = w[:, None] * x
    outer = wx[:, :, None] * x[:, None, :]
    A = segment_sum(groups, outer, n_groups)
    B = segment_sum(groups, (w * y)[:, None] * x, n_groups)
    upper = np.triu_indices(d, k=1)
    A[:, upper[1], upper[0]] = A[:, upper[0], upper[1]]
    return A, B
