"""Pure-numpy implementations of the clustering hot loops.

Same contract as the compiled ``_kernels`` extension; selected automatically
when the extension is not built (see ``hazecast.kernels``).
"""

import numpy as np


def quartile_bounds(T):
    """0-based inclusive window [ceil(T/2)-1, ceil(3T/4)-1]."""
    return (T + 1) // 2 - 1, (3 * T + 3) // 4 - 1


def series_distance(xp, xq):
    xp = np.asarray(xp, dtype=np.float64)
    xq = np.asarray(xq, dtype=np.float64)
    w = np.maximum(xp / xp.sum(), xq / xq.sum())
    d = np.sort(w * (xp - xq) ** 2)[::-1]
    lo, hi = quartile_bounds(d.size)
    return float(np.mean(d[lo:hi + 1]))


def window_mean(values):
    """Mean of the values ranked between the ceil(N/2)-th and ceil(3N/4)-th smallest, inclusive."""
    r = np.sort(np.asarray(values, dtype=np.float64))
    n = r.size
    lo, hi = quartile_bounds(n)
    if n < 4:
        return float(r[lo])
    a, b = r[lo], r[hi]
    i = np.searchsorted(r, a, side="left")
    j = np.searchsorted(r, b, side="right")
    return float(np.mean(r[i:j]))


def distance_matrix(X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    n, T = X.shape
    shares = X / X.sum(axis=1, keepdims=True)
    lo, hi = quartile_bounds(T)
    D = np.zeros((n, n))
    for i in range(n - 1):
        w = np.maximum(shares[i], shares[i + 1:])
        d = -np.sort(-(w * (X[i] - X[i + 1:]) ** 2), axis=1)
        row = d[:, lo:hi + 1].mean(axis=1)
        D[i, i + 1:] = row
        D[i + 1:, i] = row
    return D


def agglomerate_merges(D):
    """Merge history as an [n-1, 4] array of (id_a, id_b, distance, new_id).

    Leaves carry ids 0..n-1 and the i-th merge creates id n+i. The closest
    pair merges first; equal linkages resolve to the lexicographically
    smallest (id_a, id_b) with id_a < id_b.
    """
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    link = D.copy()
    np.fill_diagonal(link, np.inf)
    ids = np.arange(n)
    members = [[i] for i in range(n)]
    active = np.ones(n, dtype=bool)
    merges = np.zeros((max(n - 1, 0), 4))
    for step in range(n - 1):
        best = link.min()
        rows, cols = np.nonzero(link == best)
        pairs = sorted((min(ids[r], ids[c]), max(ids[r], ids[c]), r, c) for r, c in zip(rows, cols))
        a_id, b_id, s1, s2 = pairs[0]
        keep, drop = min(s1, s2), max(s1, s2)
        merges[step] = (a_id, b_id, best, n + step)
        members[keep] = members[keep] + members[drop]
        members[drop] = []
        active[drop] = False
        ids[keep] = n + step
        link[drop, :] = np.inf
        link[:, drop] = np.inf
        mk = np.array(members[keep])
        for o in np.nonzero(active)[0]:
            if o == keep:
                continue
            v = window_mean(D[np.ix_(mk, members[o])].ravel())
            link[keep, o] = v
            link[o, keep] = v
    return merges
