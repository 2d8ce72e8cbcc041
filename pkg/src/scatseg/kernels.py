"""Hot inner loops: brute-force kNN and the neighbor-max gather/scatter pair.

Every kernel has a numba body and a numpy body computing the same thing with
the same floating-point operation order, so both paths agree bitwise. The
public wrappers dispatch on ``_accel.HAVE_NUMBA``.
"""
import numpy as np

from . import _accel


def _knn_numpy(xyz, k, chunk=256):
    n = xyz.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        dx = x[start:stop, None] - x[None, :]
        dy = y[start:stop, None] - y[None, :]
        dz = z[start:stop, None] - z[None, :]
        d2 = dx * dx + dy * dy + dz * dz
        rows = np.arange(stop - start)
        d2[rows, rows + start] = np.inf
        # stable sort keeps equal distances in index order
        out[start:stop] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def _knn_loop(xyz, k):
    n = xyz.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    best_d = np.empty(k, dtype=np.float64)
    best_i = np.empty(k, dtype=np.int64)
    for i in range(n):
        filled = 0
        for j in range(n):
            if j == i:
                continue
            dx = xyz[i, 0] - xyz[j, 0]
            dy = xyz[i, 1] - xyz[j, 1]
            dz = xyz[i, 2] - xyz[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if filled == k and not d < best_d[k - 1]:
                continue
            # j only grows, so inserting after equal distances keeps lower indices first
            p = filled if filled < k else k - 1
            while p > 0 and best_d[p - 1] > d:
                if p < k:
                    best_d[p] = best_d[p - 1]
                    best_i[p] = best_i[p - 1]
                p -= 1
            best_d[p] = d
            best_i[p] = j
            if filled < k:
                filled += 1
        for t in range(k):
            out[i, t] = best_i[t]
    return out


def _nbr_max_numpy(values, nbr):
    gathered = values[nbr]                      # N x k x d
    pos = np.argmax(gathered, axis=1)           # first max wins
    src = np.take_along_axis(nbr, pos, axis=1)
    out = np.take_along_axis(gathered, pos[:, None, :], axis=1)[:, 0, :]
    return out, src.astype(np.int64)


def _nbr_max_loop(values, nbr):
    n, k = nbr.shape
    d = values.shape[1]
    out = np.empty((n, d), dtype=np.float64)
    src = np.empty((n, d), dtype=np.int64)
    for i in range(n):
        for c in range(d):
            j0 = nbr[i, 0]
            best = values[j0, c]
            arg = j0
            for t in range(1, k):
                j = nbr[i, t]
                v = values[j, c]
                if v > best:
                    best = v
                    arg = j
            out[i, c] = best
            src[i, c] = arg
    return out, src


def _scatter_cols_numpy(grad, src, n):
    d = grad.shape[1]
    out = np.zeros((n, d), dtype=np.float64)
    cols = np.broadcast_to(np.arange(d), src.shape)
    np.add.at(out, (src, cols), grad)
    return out


def _scatter_cols_loop(grad, src, n):
    m, d = grad.shape
    out = np.zeros((n, d), dtype=np.float64)
    for i in range(m):
        for c in range(d):
            out[src[i, c], c] += grad[i, c]
    return out


def _index_add_numpy(grad, idx, n):
    out = np.zeros((n,) + grad.shape[1:], dtype=np.float64)
    np.add.at(out, idx, grad)
    return out


def _index_add_loop(grad, idx, n):
    m, d = grad.shape
    out = np.zeros((n, d), dtype=np.float64)
    for i in range(m):
        r = idx[i]
        for c in range(d):
            out[r, c] += grad[i, c]
    return out


_knn_jit = _accel.njit(_knn_loop)
_nbr_max_jit = _accel.njit(_nbr_max_loop)
_scatter_cols_jit = _accel.njit(_scatter_cols_loop)
_index_add_jit = _accel.njit(_index_add_loop)


def knn_indices(xyz, k, use_numba=None):
    """k nearest other points by squared Euclidean distance; ties to lower index."""
    xyz = np.ascontiguousarray(xyz[:, :3], dtype=np.float64)
    if _use(use_numba):
        return _knn_jit(xyz, int(k))
    return _knn_numpy(xyz, int(k))


def neighbor_max(values, nbr, use_numba=None):
    """Per-channel max of ``values`` over each row's neighbor list.

    Returns ``(out, src)`` where ``src[i, c]`` is the point index that won.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    nbr = np.ascontiguousarray(nbr, dtype=np.int64)
    if _use(use_numba):
        return _nbr_max_jit(values, nbr)
    return _nbr_max_numpy(values, nbr)


def scatter_cols(grad, src, n, use_numba=None):
    """Adjoint of :func:`neighbor_max`: route ``grad[i, c]`` to row ``src[i, c]``."""
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    if _use(use_numba):
        return _scatter_cols_jit(grad, np.ascontiguousarray(src), int(n))
    return _scatter_cols_numpy(grad, src, int(n))


def index_add_rows(grad, idx, n, use_numba=None):
    """``out[idx[i]] += grad[i]`` into an ``n``-row zero matrix."""
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if grad.ndim == 2 and _use(use_numba):
        return _index_add_jit(grad, idx, int(n))
    return _index_add_numpy(grad, idx, int(n))


def _use(flag):
    if flag is None:
        return _accel.HAVE_NUMBA
    if flag and not _accel.HAVE_NUMBA:
        raise RuntimeError("numba path requested but numba is disabled")
    return bool(flag)
