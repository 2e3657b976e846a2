"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The numba path is used when numba imports and ``DCC_DISABLE_NUMBA`` is unset
(or ``0``). Both paths return identical integer results and floating results
equal up to summation order.
"""
import math
import os

import numpy as np

try:
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("DCC_DISABLE_NUMBA", "") in ("", "0")


def backend():
    return "numba" if USE_NUMBA else "numpy"


def log_factorials(n):
    """Table ``t[k] = ln(k!)`` for k = 0..n."""
    return np.array([math.lgamma(k + 1.0) for k in range(n + 1)], dtype=np.float64)


# ---------------------------------------------------------------- numpy twins

def _components_np(n, ii, jj):
    lab = np.arange(n, dtype=np.int64)
    if len(ii) == 0:
        return lab
    while True:
        m = np.minimum(lab[ii], lab[jj])
        new = lab.copy()
        np.minimum.at(new, ii, m)
        np.minimum.at(new, jj, m)
        new = new[new]
        if np.array_equal(new, lab):
            break
        lab = new
    # roots are component minima, so sorted root order is discovery order
    return np.unique(lab, return_inverse=True)[1].astype(np.int64)


def _kruskal_np(n, ii, jj):
    parent = list(range(n))

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    keep = np.zeros(len(ii), dtype=np.bool_)
    for e, (a, b) in enumerate(zip(ii.tolist(), jj.tolist())):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
            keep[e] = True
    return keep


def _emi_np(a, b, n, lf):
    emi = 0.0
    for ai in a.tolist():
        for bj in b.tolist():
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if hi < lo:
                continue
            nij = np.arange(lo, hi + 1)
            term = nij / n * np.log(n * nij / (ai * bj))
            logp = (lf[ai] + lf[bj] + lf[n - ai] + lf[n - bj] - lf[n]
                    - lf[nij] - lf[ai - nij] - lf[bj - nij] - lf[n - ai - bj + nij])
            emi += float(np.sum(term * np.exp(logp)))
    return emi


def _scatter_np(n_rows, li, lj, g):
    out = np.zeros((n_rows, g.shape[1]), dtype=g.dtype)
    np.add.at(out, li, g)
    np.subtract.at(out, lj, g)
    return out


def _adam_np(p, g, m, v, beta1, beta2, step, bc2, eps):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= step * m / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------- numba kernels

if _HAVE_NUMBA:

    @njit(cache=True)
    def _find_nb(parent, a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            nxt = parent[a]
            parent[a] = root
            a = nxt
        return root

    @njit(cache=True)
    def _components_nb(n, ii, jj):
        parent = np.arange(n)
        for e in range(ii.shape[0]):
            ra = _find_nb(parent, ii[e])
            rb = _find_nb(parent, jj[e])
            if ra < rb:
                parent[rb] = ra
            elif rb < ra:
                parent[ra] = rb
        labels = np.empty(n, dtype=np.int64)
        remap = np.full(n, -1, dtype=np.int64)
        k = 0
        for i in range(n):
            r = _find_nb(parent, i)
            if remap[r] < 0:
                remap[r] = k
                k += 1
            labels[i] = remap[r]
        return labels

    @njit(cache=True)
    def _kruskal_nb(n, ii, jj):
        parent = np.arange(n)
        keep = np.zeros(ii.shape[0], dtype=np.bool_)
        for e in range(ii.shape[0]):
            ra = _find_nb(parent, ii[e])
            rb = _find_nb(parent, jj[e])
            if ra != rb:
                if ra < rb:
                    parent[rb] = ra
                else:
                    parent[ra] = rb
                keep[e] = True
        return keep

    @njit(cache=True)
    def _emi_nb(a, b, n, lf):
        emi = 0.0
        for i in range(a.shape[0]):
            ai = a[i]
            for j in range(b.shape[0]):
                bj = b[j]
                lo = max(1, ai + bj - n)
                hi = min(ai, bj)
                base = lf[ai] + lf[bj] + lf[n - ai] + lf[n - bj] - lf[n]
                for nij in range(lo, hi + 1):
                    term = nij / n * math.log(n * nij / (ai * bj))
                    logp = base - lf[nij] - lf[ai - nij] - lf[bj - nij] - lf[n - ai - bj + nij]
                    emi += term * math.exp(logp)
        return emi

    @njit(cache=True)
    def _scatter_nb(n_rows, li, lj, g):
        out = np.zeros((n_rows, g.shape[1]), dtype=g.dtype)
        for e in range(li.shape[0]):
            for c in range(g.shape[1]):
                out[li[e], c] += g[e, c]
                out[lj[e], c] -= g[e, c]
        return out


    @njit(cache=True)
    def _adam_nb(p, g, m, v, beta1, one_m_beta1, beta2, one_m_beta2, step, inv_bc2, eps):
        for i in range(p.shape[0]):
            mi = beta1 * m[i] + one_m_beta1 * g[i]
            vi = beta2 * v[i] + one_m_beta2 * (g[i] * g[i])
            m[i] = mi
            v[i] = vi
            p[i] -= step * mi / (np.sqrt(vi * inv_bc2) + eps)


# ---------------------------------------------------------------- dispatch

def connected_components(n, ii, jj):
    """Component labels numbered in order of first appearance by node index."""
    ii = np.ascontiguousarray(ii, dtype=np.int64)
    jj = np.ascontiguousarray(jj, dtype=np.int64)
    if USE_NUMBA:
        return _components_nb(n, ii, jj)
    return _components_np(n, ii, jj)


def kruskal(n, ii, jj):
    """Boolean mask of the spanning-forest edges; edges must be pre-sorted by weight."""
    ii = np.ascontiguousarray(ii, dtype=np.int64)
    jj = np.ascontiguousarray(jj, dtype=np.int64)
    if USE_NUMBA:
        return _kruskal_nb(n, ii, jj)
    return _kruskal_np(n, ii, jj)


def expected_mutual_info(a, b, n):
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    lf = log_factorials(int(n))
    if USE_NUMBA:
        return float(_emi_nb(a, b, int(n), lf))
    return _emi_np(a, b, int(n), lf)


def scatter_pairwise(n_rows, li, lj, g):
    """``out[li[e]] += g[e]`` and ``out[lj[e]] -= g[e]`` for every edge e."""
    li = np.ascontiguousarray(li, dtype=np.int64)
    lj = np.ascontiguousarray(lj, dtype=np.int64)
    g = np.ascontiguousarray(g)
    if USE_NUMBA:
        return _scatter_nb(n_rows, li, lj, g)
    return _scatter_np(n_rows, li, lj, g)


def adam_update(p, g, m, v, beta1, beta2, step, bc2, eps):
    """In-place Adam moment and parameter update; ``step`` is lr / (1 - beta1**t)."""
    if USE_NUMBA and p.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous:
        # scalars in the array dtype keep float32 arithmetic in float32
        t = p.dtype.type
        _adam_nb(p.reshape(-1), np.ascontiguousarray(g, dtype=p.dtype).reshape(-1), m.reshape(-1), v.reshape(-1),
                 t(beta1), t(1.0 - beta1), t(beta2), t(1.0 - beta2), t(step), t(1.0 / bc2), t(eps))
    else:
        _adam_np(p, g, m, v, beta1, beta2, step, bc2, eps)
