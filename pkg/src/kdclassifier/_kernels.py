"""Hot loops of kernel selection, compiled with numba when available.

Set ``KDCLASSIFIER_NUMBA=0`` before import to force the pure-numpy path.
Both paths return identical results up to floating-point summation order.
"""

import os

import numpy as np

_flag = os.environ.get("KDCLASSIFIER_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "no", "off")

try:
    if not _want_numba:
        raise ImportError
    import numba
except ImportError:
    numba = None

USE_NUMBA = numba is not None


# ---------------------------------------------------------------- numpy path


def removal_scores_numpy(log_p, weights):
    """Total log-likelihood with each kernel deleted and weights renormalized.

    ``log_p`` is ``(L, K)`` per-kernel log-densities, ``weights`` length ``K``.
    Entry ``k`` of the result is ``sum_i log(sum_{j != k} w_j p_ij / (1 - w_k))``.

    Each row is shifted by its largest weighted term; deleting any other
    kernel leaves a sum of at least one, so subtracting its share is safe.
    Deleting the row's largest term uses a second sum shifted by the
    runner-up instead.  Cost is ``O(L K)``.
    """
    L, K = log_p.shape
    logw = np.full(K, -np.inf)
    pos = weights > 0
    logw[pos] = np.log(weights[pos])
    t = log_p + logw
    rows = np.arange(L)
    best = np.argmax(t, axis=1)
    top1 = t[rows, best]
    rest = t.copy()
    rest[rows, best] = -np.inf
    top2 = rest.max(axis=1) if K > 1 else np.full(L, -np.inf)
    live1, live2 = np.isfinite(top1), np.isfinite(top2)
    with np.errstate(invalid="ignore", divide="ignore"):
        e = np.where(live1[:, None], np.exp(t - np.where(live1, top1, 0.0)[:, None]), 0.0)
        s1 = e.sum(axis=1)
        s2 = np.where(live2[:, None], np.exp(rest - np.where(live2, top2, 0.0)[:, None]), 0.0).sum(axis=1)
        terms = top1[:, None] + np.log(s1[:, None] - e)
        terms[rows, best] = np.where(live2, top2 + np.log(s2), -np.inf)
    terms[~live1] = -np.inf
    mass = weights.sum() - weights
    with np.errstate(divide="ignore", invalid="ignore"):
        out = terms.sum(axis=0) - L * np.log(mass)
    out[mass <= 0.0] = -np.inf
    return out


def assignment_votes_numpy(distances, rows, scale):
    """Column sums of row-normalized ``exp(-D / scale)`` over the given rows.

    Infinite distances contribute zero.  Each row is shifted by its minimum
    finite distance before exponentiation, which leaves the normalized
    probabilities unchanged.
    """
    L = distances.shape[1]
    votes = np.zeros(L)
    for start in range(0, rows.shape[0], 512):
        block = distances[rows[start : start + 512]]
        finite = np.isfinite(block)
        dmin = np.where(finite, block, np.inf).min(axis=1)
        live = np.isfinite(dmin)
        e = np.where(finite, np.exp(-(block - dmin[:, None]) / scale), 0.0)
        e = e[live]
        votes += (e / e.sum(axis=1, keepdims=True)).sum(axis=0)
    return votes


# ---------------------------------------------------------------- numba path

if USE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def removal_scores_numba(log_p, weights):
        L, K = log_p.shape
        total_w = 0.0
        for j in range(K):
            total_w += weights[j]
        logw = np.empty(K)
        for j in range(K):
            logw[j] = np.log(weights[j]) if weights[j] > 0.0 else -np.inf
        acc = np.zeros(K)
        e = np.empty(K)
        for i in range(L):
            # largest and runner-up weighted terms of this row
            a, b, ia = -np.inf, -np.inf, -1
            for j in range(K):
                t = log_p[i, j] + logw[j]
                if t > a:
                    b = a
                    a = t
                    ia = j
                elif t > b:
                    b = t
            if a == -np.inf:
                for k in range(K):
                    acc[k] = -np.inf
                continue
            s1 = 0.0
            s2 = 0.0
            for j in range(K):
                t = log_p[i, j] + logw[j]
                e[j] = np.exp(t - a)
                s1 += e[j]
                if j != ia and b > -np.inf:
                    s2 += np.exp(t - b)
            for k in range(K):
                if k == ia:
                    acc[k] += b + np.log(s2) if b > -np.inf else -np.inf
                else:
                    acc[k] += a + np.log(s1 - e[k])
        out = np.empty(K)
        for k in range(K):
            mass = total_w - weights[k]
            out[k] = acc[k] - L * np.log(mass) if mass > 0.0 else -np.inf
        return out

    @numba.njit(cache=True, nogil=True)
    def assignment_votes_numba(distances, rows, scale):
        L = distances.shape[1]
        votes = np.zeros(L)
        buf = np.empty(L)
        for r in range(rows.shape[0]):
            i = rows[r]
            dmin = np.inf
            for l in range(L):
                if distances[i, l] < dmin:
                    dmin = distances[i, l]
            if dmin == np.inf:
                continue
            s = 0.0
            for l in range(L):
                d = distances[i, l]
                e = np.exp(-(d - dmin) / scale) if d < np.inf else 0.0
                buf[l] = e
                s += e
            for l in range(L):
                votes[l] += buf[l] / s
        return votes

    removal_scores = removal_scores_numba
    assignment_votes = assignment_votes_numba
else:
    removal_scores_numba = assignment_votes_numba = None
    removal_scores = removal_scores_numpy
    assignment_votes = assignment_votes_numpy
