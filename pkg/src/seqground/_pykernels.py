"""Pure-Python versions of the hot kernels.

Every function here has a twin with the same name and signature in
``_ckernels.pyx``; ``seqground.kernels`` picks one at import time.
"""
import math

import numpy as np


def interval_iou(a, b):
    """IoU between every span in ``a`` (n, 2) and every span in ``b`` (m, 2)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    for i in range(a.shape[0]):
        s1, e1 = a[i, 0], a[i, 1]
        for j in range(b.shape[0]):
            s2, e2 = b[j, 0], b[j, 1]
            inter = min(e1, e2) - max(s1, s2)
            if inter < 0.0:
                inter = 0.0
            union = (e1 - s1) + (e2 - s2) - inter
            out[i, j] = inter / union if union > 0.0 else 0.0
    return out


def interval_giou(a, b):
    """Generalized IoU between every pair of spans; 0 when the hull is empty."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    for i in range(a.shape[0]):
        s1, e1 = a[i, 0], a[i, 1]
        for j in range(b.shape[0]):
            s2, e2 = b[j, 0], b[j, 1]
            inter = min(e1, e2) - max(s1, s2)
            if inter < 0.0:
                inter = 0.0
            union = (e1 - s1) + (e2 - s2) - inter
            hull = max(e1, e2) - min(s1, s2)
            if hull <= 0.0:
                out[i, j] = 0.0
                continue
            iou = inter / union if union > 0.0 else 0.0
            out[i, j] = iou - (hull - union) / hull
    return out


def linear_assignment(cost):
    """Minimum-cost assignment for an n x m cost matrix with n <= m.

    Hungarian method with row/column potentials, O(n^2 m). Returns an int64
    array ``col`` of length n such that row ``r`` is assigned column ``col[r]``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n > m:
        raise ValueError("linear_assignment needs rows <= columns")
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    a = cost.tolist()
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            row = a[i0 - 1]
            ui0 = u[i0]
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col = np.empty(n, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col[p[j] - 1] = j - 1
    return col


def kendall_tau_b(x, y):
    """Tie-adjusted Kendall rank correlation; nan when either side is constant."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n = x.shape[0]
    concordant = discordant = 0
    ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0.0 and dy == 0.0:
                continue
            if dx == 0.0:
                ties_x += 1
            elif dy == 0.0:
                ties_y += 1
            elif (dx > 0.0) == (dy > 0.0):
                concordant += 1
            else:
                discordant += 1
    denom = math.sqrt((concordant + discordant + ties_x) * (concordant + discordant + ties_y))
    if denom == 0.0:
        return math.nan
    return (concordant - discordant) / denom


def mean_pairwise_intersection(spans):
    """Mean intersection length over all unordered pairs of spans (n, 2)."""
    spans = np.asarray(spans, dtype=np.float64).reshape(-1, 2)
    n = spans.shape[0]
    if n < 2:
        return 0.0
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            inter = min(spans[i, 1], spans[j, 1]) - max(spans[i, 0], spans[j, 0])
            if inter > 0.0:
                total += inter
    return total / (n * (n - 1) / 2)
