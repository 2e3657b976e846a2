"""Mutual-kNN graph with MST augmentation and the constants derived from it.

Node embeddings are row-major here as everywhere else (``y`` is N x d).
"""
from dataclasses import dataclass
import logging
import warnings

import numpy as np

from . import _kernels
from .errors import DegenerateError, GraphError, ParseError

log = logging.getLogger(__name__)

_BLOCK = 1024
GRAPH_FORMAT = "dcc-graph-v1"


@dataclass(frozen=True)
class NeighborhoodGraph:
    n_nodes: int
    edges: np.ndarray      # (E, 2) int64, i < j, lexicographically sorted
    distances: np.ndarray  # (E,) construction-metric distance per edge
    weights: np.ndarray    # (E,) balancing weight w_ij
    degrees: np.ndarray    # (N,) node degree in the final edge set
    k: int = 0
    metric: str = "cosine"
    n_mutual: int = 0
    n_components_mutual: int = 1

    @property
    def n_edges(self):
        return len(self.edges)


# ---------------------------------------------------------------- neighbours

def _pairwise_block(x, rows, metric, sq_norms=None):
    """Distances from ``x[rows]`` to every row of ``x``."""
    if metric == "cosine":
        d = 1.0 - x[rows] @ x.T
    elif metric == "euclidean":
        g = x[rows] @ x.T
        d2 = sq_norms[rows, None] + sq_norms[None, :] - 2.0 * g
        d = np.sqrt(np.maximum(d2, 0.0))
    else:
        raise GraphError(f"unknown metric {metric!r}")
    return d


def _prepare(x, metric):
    x = np.asarray(x, dtype=np.float64)
    if metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0):
            bad = int(np.flatnonzero(norms == 0)[0])
            raise GraphError(f"row {bad} is all zeros; cosine distance undefined")
        return x / norms[:, None], None
    return x, np.einsum("ij,ij->i", x, x)


def knn(x, k, metric="cosine"):
    """Exact k nearest neighbours of every row, excluding the row itself.

    Returns ``(idx, dist)`` of shape (N, k), sorted by distance with ties
    going to the lower index.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if k < 1:
        raise GraphError("k must be at least 1")
    if k >= n:
        raise GraphError(f"k={k} needs more than {k} points, got {n}")
    xs, sq = _prepare(x, metric)
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, _BLOCK):
        rows = np.arange(start, min(start + _BLOCK, n))
        d = _pairwise_block(xs, rows, metric, sq)
        d = np.maximum(d, 0.0)
        d[np.arange(len(rows)), rows] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        idx[rows] = order
        dist[rows] = np.take_along_axis(d, order, axis=1)
    return idx, dist


def cosine_knn(x, k):
    return knn(x, k, "cosine")


def _canonical(ii, jj):
    a = np.minimum(ii, jj)
    b = np.maximum(ii, jj)
    return np.stack([a, b], axis=1).astype(np.int64)


def symmetrized_knn_edges(idx, dist):
    """Undirected union of directed kNN edges, with their distances."""
    n, k = idx.shape
    pairs = _canonical(np.repeat(np.arange(n), k), idx.ravel())
    d = dist.ravel()
    order = np.lexsort((d, pairs[:, 1], pairs[:, 0]))
    pairs, d = pairs[order], d[order]
    first = np.ones(len(pairs), dtype=bool)
    first[1:] = np.any(pairs[1:] != pairs[:-1], axis=1)
    return pairs[first], d[first]


def mutual_knn_edges(idx):
    """Edges (i, j), i < j, with j among i's neighbours and i among j's."""
    n, k = idx.shape
    src = np.repeat(np.arange(n), k)
    dst = idx.ravel()
    keys = src * n + dst
    rev = dst * n + src
    mutual = np.isin(keys, rev) & (src < dst)
    pairs = np.stack([src[mutual], dst[mutual]], axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order].astype(np.int64)


def _edge_lookup(pairs, dist, n):
    return dict(zip((pairs[:, 0] * n + pairs[:, 1]).tolist(), dist.tolist()))


def _bridge_components(x, labels, metric):
    """Shortest pair between every two components, via a blockwise full scan."""
    n_comp = int(labels.max()) + 1
    best = np.full((n_comp, n_comp), np.inf)
    best_pair = np.zeros((n_comp, n_comp, 2), dtype=np.int64)
    xs, sq = _prepare(x, metric)
    n = len(xs)
    for start in range(0, n, _BLOCK):
        rows = np.arange(start, min(start + _BLOCK, n))
        d = np.maximum(_pairwise_block(xs, rows, metric, sq), 0.0)
        for ci in range(n_comp):
            sel = labels[rows] == ci
            if not sel.any():
                continue
            block = d[sel]
            row_ids = rows[sel]
            for cj in range(n_comp):
                if cj == ci:
                    continue
                cols = np.flatnonzero(labels == cj)
                sub = block[:, cols]
                flat = int(np.argmin(sub))
                r, c = divmod(flat, sub.shape[1])
                if sub[r, c] < best[ci, cj]:
                    best[ci, cj] = sub[r, c]
                    best_pair[ci, cj] = (row_ids[r], cols[c])
    cand = [(best[a, b], *sorted(best_pair[a, b].tolist()))
            for a in range(n_comp) for b in range(a + 1, n_comp)]
    cand.sort()
    return cand


def mst_augment(mutual, idx, dist, x=None, metric="cosine"):
    """Union of the mutual edges with a minimum spanning tree of the kNN graph.

    The kNN graph is the symmetrized union of directed neighbour edges,
    weighted by distance. If it is itself disconnected, components are joined
    greedily by their globally shortest inter-component pair (needs ``x``).
    Returns ``(edges, distances)`` sorted lexicographically.
    """
    n = idx.shape[0]
    sym, sym_d = symmetrized_knn_edges(idx, dist)
    order = np.lexsort((sym[:, 1], sym[:, 0], sym_d))
    keep = _kernels.kruskal(n, sym[order, 0], sym[order, 1])
    tree = sym[order][keep]
    tree_d = sym_d[order][keep]
    if len(tree) < n - 1:
        if x is None:
            raise GraphError("kNN graph is disconnected and no data was given for bridging")
        labels = _kernels.connected_components(n, tree[:, 0], tree[:, 1])
        extra = []
        cand = _bridge_components(x, labels, metric)
        comp_keep = _kernels.kruskal(
            int(labels.max()) + 1,
            np.array([labels[c[1]] for c in cand]), np.array([labels[c[2]] for c in cand]))
        for c, ok in zip(cand, comp_keep):
            if ok:
                extra.append(c)
        log.info("bridged %d kNN components", len(extra) + 1)
        tree = np.concatenate([tree, np.array([[c[1], c[2]] for c in extra], dtype=np.int64)])
        tree_d = np.concatenate([tree_d, np.array([c[0] for c in extra])])
    lookup = _edge_lookup(sym, sym_d, n)
    mutual_d = np.array([lookup[a * n + b] for a, b in mutual.tolist()], dtype=np.float64)
    allp = np.concatenate([mutual.reshape(-1, 2), tree]).astype(np.int64)
    alld = np.concatenate([mutual_d, tree_d])
    order = np.lexsort((allp[:, 1], allp[:, 0]))
    allp, alld = allp[order], alld[order]
    first = np.ones(len(allp), dtype=bool)
    first[1:] = np.any(allp[1:] != allp[:-1], axis=1)
    return allp[first], alld[first]


def compute_weights(edges, n_nodes):
    """Degrees and balancing weights ``mean_degree / sqrt(n_i * n_j)``."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    degrees = np.bincount(edges.ravel(), minlength=n_nodes).astype(np.int64)
    if np.any(degrees == 0):
        raise GraphError("graph has isolated nodes")
    mean_degree = degrees.sum() / n_nodes
    weights = mean_degree / np.sqrt(degrees[edges[:, 0]] * degrees[edges[:, 1]].astype(np.float64))
    return weights, degrees


def build_graph(x, k=10, metric="cosine"):
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise GraphError("need at least two points")
    k_eff = min(k, n - 1)
    idx, dist = knn(x, k_eff, metric)
    mutual = mutual_knn_edges(idx)
    n_comp = int(_kernels.connected_components(n, mutual[:, 0], mutual[:, 1]).max()) + 1
    edges, distances = mst_augment(mutual, idx, dist, x, metric)
    weights, degrees = compute_weights(edges, n)
    return NeighborhoodGraph(n, edges, distances, weights, degrees, k, metric, len(mutual), n_comp)


def n_components(n, edges):
    edges = np.asarray(edges).reshape(-1, 2)
    return int(_kernels.connected_components(n, edges[:, 0], edges[:, 1]).max()) + 1


# ---------------------------------------------------------------- spectral

def spectral_norm(op, n=None, tol=1e-9, max_iter=None, block=4, seed=0):
    """Largest-magnitude eigenvalue of a symmetric operator by block power iteration.

    ``op`` is either a dense symmetric array or a callable mapping an (n, p)
    block to an (n, p) block. Iterates a ``block``-column subspace with a
    Rayleigh-Ritz step and stops once the leading Ritz pair has residual
    below ``tol`` times its value. After ``max_iter`` (default 10 n) steps a
    RuntimeWarning is issued and the current estimate is returned.
    """
    if callable(op):
        apply = op
        if n is None:
            raise ValueError("n is required for a matrix-free operator")
    else:
        m = np.asarray(op, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("dense operator must be square")
        n = m.shape[0]
        apply = m.__matmul__
    if max_iter is None:
        max_iter = 10 * n
    p = min(block, n)
    v = np.random.default_rng(seed).standard_normal((n, p))
    v, _ = np.linalg.qr(v)
    theta = 0.0
    for _ in range(max(max_iter, 1)):
        w = apply(v)
        h = v.T @ w
        h = 0.5 * (h + h.T)
        evals, evecs = np.linalg.eigh(h)
        top = int(np.argmax(np.abs(evals)))
        theta = float(evals[top])
        if theta == 0.0 and not np.any(w):
            return 0.0
        ritz = v @ evecs[:, top]
        resid = np.linalg.norm(w @ evecs[:, top] - theta * ritz)
        if resid <= tol * abs(theta):
            return abs(theta)
        v, _ = np.linalg.qr(w)
    warnings.warn(f"spectral_norm: no convergence in {max_iter} iterations", RuntimeWarning)
    return abs(theta)


def laplacian_operator(edges, weights, n):
    """Matrix-free ``A v`` with ``(A v)_i = sum_j w_ij (v_i - v_j)``."""
    ii = edges[:, 0]
    jj = edges[:, 1]

    def apply(v):
        diff = weights[:, None] * (v[ii] - v[jj])
        return _kernels.scatter_pairwise(n, ii, jj, diff)
    return apply


def matrix_norm(y):
    """Spectral norm of ``y`` through power iteration on the Gram operator."""
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    return float(np.sqrt(spectral_norm(lambda v: y @ (y.T @ v), n)))


def compute_lambda(y, graph):
    y_norm = matrix_norm(y)
    a_norm = spectral_norm(laplacian_operator(graph.edges, graph.weights, graph.n_nodes), graph.n_nodes)
    if y_norm == 0.0 or a_norm == 0.0:
        raise DegenerateError("zero spectral norm; cannot balance the pairwise term")
    return y_norm / a_norm


def compute_delta1(y):
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.linalg.norm(y - y.mean(axis=0), axis=1)))


def edge_lengths(y, edges):
    y = np.asarray(y, dtype=np.float64)
    return np.linalg.norm(y[edges[:, 0]] - y[edges[:, 1]], axis=1)


def bottom_fraction_mean(values, fraction=0.01):
    values = np.sort(np.asarray(values, dtype=np.float64))
    if len(values) == 0:
        raise GraphError("no edges")
    count = max(1, int(np.floor(fraction * len(values))))
    return float(np.mean(values[:count]))


def compute_delta2(y, graph_or_edges):
    edges = getattr(graph_or_edges, "edges", graph_or_edges)
    return bottom_fraction_mean(edge_lengths(y, np.asarray(edges)))


# ---------------------------------------------------------------- persistence

def save_graph(path, graph):
    with open(path, "w") as f:
        f.write(f"# {GRAPH_FORMAT} n={graph.n_nodes} k={graph.k} metric={graph.metric} "
                f"edges={graph.n_edges} mutual={graph.n_mutual} "
                f"mutual_components={graph.n_components_mutual}\n")
        for (i, j), d, w in zip(graph.edges.tolist(), graph.distances.tolist(), graph.weights.tolist()):
            f.write(f"{i} {j} {d!r} {w!r}\n")


def load_graph(path):
    with open(path, "r") as f:
        header = f.readline().split()
        if len(header) < 2 or header[0] != "#" or header[1] != GRAPH_FORMAT:
            raise ParseError(f"{path}: not a {GRAPH_FORMAT} file")
        meta = dict(tok.split("=", 1) for tok in header[2:])
        rows = [line.split() for line in f if line.strip()]
    try:
        n = int(meta["n"])
        edges = np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64).reshape(-1, 2)
        dist = np.array([float(r[2]) for r in rows], dtype=np.float64)
    except (KeyError, ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed graph file ({exc})") from None
    if len(edges) != int(meta.get("edges", len(edges))):
        raise ParseError(f"{path}: edge count does not match header")
    weights, degrees = compute_weights(edges, n)
    return NeighborhoodGraph(n, edges, dist, weights, degrees, int(meta.get("k", 0)),
                             meta.get("metric", "cosine"), int(meta.get("mutual", 0)),
                             int(meta.get("mutual_components", 1)))
