"""Geman-McClure estimator, edge minibatches, and the clustering losses with gradients.

Two objectives share the machinery:

``"dcc"``
    Rebalanced minibatch loss over the edge sample E_B with incident nodes B::

        1/|B| sum_B w_i (|x_i - g(y_i)|^2 / D + rho1(|z_i - y_i|) / d)
          + lam/|B| sum_{E_B} w_ij rho2(|z_i - z_j|)

``"rcc"``
    The representative-only objective on a fixed embedding, minibatched the
    same way: ``1/|B| (sum_B w_i |z_i - y_i|^2 / 2 + lam/2 sum_{E_B} w_ij rho2)``.

Gradients are the exact derivatives of these losses. The robust terms carry
the factor ``2 mu^2 / (mu + r^2)^2`` from differentiating ``mu r^2/(mu + r^2)``.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ShapeError
from .nncore import backprop, decode, encode, embed, reconstruct

OBJECTIVES = ("dcc", "rcc")


@dataclass(frozen=True)
class RobustParams:
    mu1: float
    mu2: float
    lam: float

    def __post_init__(self):
        if not (self.mu1 > 0 and self.mu2 > 0):
            raise ValueError(f"mu1, mu2 must be positive, got {self.mu1}, {self.mu2}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")


def rho(x, mu):
    """Scaled Geman-McClure penalty ``mu x^2 / (mu + x^2)``."""
    x = np.asarray(x, dtype=np.float64)
    sq = x * x
    return mu * sq / (mu + sq)


def _rho_sq(sq, mu):
    return mu * sq / (mu + sq)


def _rho_slope(sq, mu):
    # d rho / d r = slope * r for residual vector r with |r|^2 = sq
    return 2.0 * mu * mu / (mu + sq) ** 2


# ---------------------------------------------------------------- minibatches

@dataclass(frozen=True)
class Minibatch:
    edge_ids: np.ndarray       # indices into graph.edges
    nodes: np.ndarray          # sorted global ids of incident nodes
    local: np.ndarray          # (m, 2) edge endpoints as positions in ``nodes``
    batch_degrees: np.ndarray  # n_i^B
    node_weights: np.ndarray   # n_i^B / n_i
    edge_weights: np.ndarray   # w_ij of the sampled edges

    @property
    def size(self):
        return len(self.nodes)


def make_minibatch(graph, edge_ids):
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    if edge_ids.size == 0:
        raise ValueError("a minibatch needs at least one edge")
    edges = graph.edges[edge_ids]
    nodes, inv = np.unique(edges.ravel(), return_inverse=True)
    local = inv.reshape(-1, 2)
    batch_degrees = np.bincount(inv, minlength=len(nodes))
    node_weights = batch_degrees / graph.degrees[nodes]
    return Minibatch(edge_ids, nodes, local, batch_degrees, node_weights, graph.weights[edge_ids])


def epoch_batches(n_edges, batch_edges, rng):
    """Random partition of all edge ids into chunks of ``batch_edges``."""
    if batch_edges < 1:
        raise ValueError("edges per batch must be positive")
    perm = rng.permutation(n_edges)
    return [perm[s:s + batch_edges] for s in range(0, n_edges, batch_edges)]


# ---------------------------------------------------------------- losses

@dataclass
class BatchEval:
    loss: float
    recon: float
    data: float
    pairwise: float
    grad_z: np.ndarray           # (|B|, d), rows follow batch.nodes
    grad_y: np.ndarray | None    # (|B|, d)
    param_grads: list | None     # flat, in Autoencoder.parameters() order


def _check(objective, z, x, ae):
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    if z.ndim != 2 or z.shape[1] != ae.n_code:
        raise ShapeError(f"representatives {z.shape} do not match code width {ae.n_code}")
    if x.shape[0] != z.shape[0]:
        raise ShapeError(f"{x.shape[0]} datapoints but {z.shape[0]} representatives")


def _data_term(r, wi, mu1, n_b, d, objective):
    sq = np.einsum("ij,ij->i", r, r)
    if objective == "dcc":
        value = float(np.sum(wi * _rho_sq(sq, mu1))) / (d * n_b)
        coef = wi * _rho_slope(sq, mu1) / (d * n_b)
    else:
        value = float(np.sum(wi * 0.5 * sq)) / n_b
        coef = wi / n_b
    return value, coef[:, None] * r


def _pair_term(zb, batch, rp, n_b, objective):
    li, lj = batch.local[:, 0], batch.local[:, 1]
    diff = zb[li] - zb[lj]
    sq = np.einsum("ij,ij->i", diff, diff)
    lam = rp.lam if objective == "dcc" else 0.5 * rp.lam
    value = lam * float(np.sum(batch.edge_weights * _rho_sq(sq, rp.mu2))) / n_b
    g = (lam * batch.edge_weights * _rho_slope(sq, rp.mu2) / n_b)[:, None] * diff
    return value, _kernels.scatter_pairwise(n_b, li, lj, g)


def evaluate_batch(batch, ae, z, x, rp, objective="dcc", param_grads=True):
    """Loss, its breakdown, and gradients for one edge minibatch."""
    x = np.asarray(x)
    _check(objective, z, x, ae)
    xb = np.asarray(x[batch.nodes], dtype=ae.dtype)
    zb = z[batch.nodes]
    n_b = batch.size
    wi = batch.node_weights
    y, enc_tape = encode(ae, xb)
    d = y.shape[1]
    data, gdata = _data_term(zb - y, wi, rp.mu1, n_b, d, objective)
    pair, gpair = _pair_term(zb, batch, rp, n_b, objective)
    gz = gdata + gpair
    recon = 0.0
    gy = None
    grads = None
    if objective == "dcc" and ae.decoder:
        xhat, dec_tape = decode(ae, y)
        res = xhat - xb
        n_in = xb.shape[1]
        recon = float(np.sum(wi * np.einsum("ij,ij->i", res, res))) / (n_in * n_b)
    if param_grads:
        # data term depends on y through (z - y)
        gy = -gdata
        dec_grads = [np.zeros_like(p) for l in ae.decoder for p in (l.weight, l.bias)]
        if objective == "dcc" and ae.decoder:
            upstream = (2.0 * wi / (n_in * n_b))[:, None] * res
            dec_grads, gy_rec = backprop(dec_tape, upstream)
            gy = gy + gy_rec
        enc_grads, _ = backprop(enc_tape, gy, input_grad=False)
        grads = enc_grads + dec_grads
    return BatchEval(recon + data + pair, recon, data, pair, gz, gy, grads)


def minibatch_loss(batch, ae, z, x, rp, objective="dcc"):
    return evaluate_batch(batch, ae, z, x, rp, objective, param_grads=False).loss


def grad_z(batch, z, y, rp, objective="dcc"):
    """Gradient with respect to the representatives of the batch nodes, given codes ``y``."""
    z = np.asarray(z)
    y = np.asarray(y)
    if z.shape != y.shape:
        raise ShapeError(f"z {z.shape} and y {y.shape} differ")
    zb = z[batch.nodes]
    _, gz = _data_term(zb - y[batch.nodes], batch.node_weights, rp.mu1, batch.size, z.shape[1], objective)
    _, gpair = _pair_term(zb, batch, rp, batch.size, objective)
    return gz + gpair


def grad_y_and_params(batch, ae, z, x, rp, objective="dcc"):
    """``(dL/dy for batch nodes, flat parameter gradients)``."""
    ev = evaluate_batch(batch, ae, z, x, rp, objective, param_grads=True)
    return ev.grad_y, ev.param_grads


def full_objective(ae, z, x, graph, rp, objective="dcc", parts=False):
    """Whole-dataset objective; with the minibatch convention for the pairwise scale.

    The dcc value equals ``|B|`` times the minibatch loss of a single batch
    holding every edge.
    """
    x = np.asarray(x, dtype=ae.dtype)
    _check(objective, z, x, ae)
    y = embed(ae, x)
    r = z - y
    sq = np.einsum("ij,ij->i", r, r)
    e = graph.edges
    diff = z[e[:, 0]] - z[e[:, 1]]
    sqp = np.einsum("ij,ij->i", diff, diff)
    if objective == "dcc":
        recon = float(np.sum((reconstruct(ae, x) - x) ** 2)) / x.shape[1] if ae.decoder else 0.0
        data = float(np.sum(_rho_sq(sq, rp.mu1))) / z.shape[1]
        pair = rp.lam * float(np.sum(graph.weights * _rho_sq(sqp, rp.mu2)))
    else:
        recon = 0.0
        data = 0.5 * float(np.sum(sq))
        pair = 0.5 * rp.lam * float(np.sum(graph.weights * _rho_sq(sqp, rp.mu2)))
    total = recon + data + pair
    return (total, recon, data, pair) if parts else total
