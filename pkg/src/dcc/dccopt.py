"""Joint optimization of representatives and autoencoder, continuation, stopping, extraction."""
from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels, sdae
from .dataio import DataMatrix, load_checkpoint, save_checkpoint
from .errors import CheckpointError, DegenerateError, DivergenceError, ShapeError
from .graph import build_graph, compute_delta1, compute_delta2, compute_lambda, edge_lengths
from .nncore import PAPER_HIDDEN, Adam, Autoencoder, Layer, adam_betas, embed, identity_autoencoder
from .robust import RobustParams, epoch_batches, evaluate_batch, make_minibatch

log = logging.getLogger(__name__)

EDGE_STABILITY = "edge-stability"
EPOCH_CAP = "epoch-cap"


@dataclass
class DCCConfig:
    edges_per_batch: int = 128
    lr: float = 0.001
    momentum: float = 0.99
    momentum_interpretation: str = "beta1"
    adam_eps: float = 1e-8
    period: int = 20                 # epochs between continuation steps
    epoch_cap: int = 300
    stop_fraction: float = 0.001
    mu_factor: float = 3.0
    mu1_init: float | None = None
    mu2_init: float | None = None
    lam: float | None = None         # None: balance by spectral norms
    objective: str = "dcc"
    freeze_autoencoder: bool = False
    seed: int = 0
    dtype: str = "float32"           # autoencoder precision when run_dcc pretrains
    z_update: str = "dense"          # "dense": Adam steps every row each batch; "lazy": batch rows only

    def __post_init__(self):
        if self.edges_per_batch < 1 or self.period < 1 or self.epoch_cap < 0:
            raise ValueError("edges_per_batch and period must be positive, epoch_cap non-negative")
        if self.z_update not in ("lazy", "dense"):
            raise ValueError(f"z_update must be lazy or dense, got {self.z_update!r}")

    def adam(self):
        b1, b2 = adam_betas(self.momentum_interpretation, self.momentum)
        return Adam(self.lr, b1, b2, self.adam_eps)


@dataclass
class TrainState:
    ae: Autoencoder
    z: np.ndarray
    rp: RobustParams
    delta1: float
    delta2: float
    period: int
    adam_omega: Adam
    adam_z: Adam
    rng: np.random.Generator
    objective: str = "dcc"
    frozen: bool = False
    epoch: int = 0
    continuation_complete: bool = False
    prev_labels: np.ndarray | None = None


@dataclass
class EpochLog:
    epoch: int
    loss: float
    recon: float
    data: float
    pairwise: float
    mu1: float
    mu2: float
    changed_fraction: float = math.nan
    num_clusters: int = -1


@dataclass
class ClusterResult:
    labels: np.ndarray
    num_clusters: int
    final_z: np.ndarray
    final_y: np.ndarray
    epochs_run: int
    termination_reason: str
    delta2: float
    history: list = field(default_factory=list)


# ---------------------------------------------------------------- setup

def initial_mus(y, graph, delta1, delta2, factor=3.0):
    """Start every residual inside the convex basin: ``mu = factor * max_residual^2``."""
    centre_dist = np.linalg.norm(y - y.mean(axis=0), axis=1)
    mu1 = max(factor * float(centre_dist.max()) ** 2, delta1 / 2)
    mu2 = max(factor * float(edge_lengths(y, graph.edges).max()) ** 2, delta2 / 2)
    return mu1, mu2


def init_state(ae, x, graph, cfg):
    x = np.asarray(getattr(x, "values", x))
    if x.shape[0] != graph.n_nodes:
        raise ShapeError(f"graph has {graph.n_nodes} nodes, data has {x.shape[0]} rows")
    y = embed(ae, x)
    if not np.all(np.isfinite(y)):
        raise DivergenceError("initial embedding is not finite")
    delta1 = compute_delta1(y)
    delta2 = compute_delta2(y, graph)
    if delta1 == 0.0 or delta2 == 0.0:
        raise DegenerateError(f"degenerate embedding (delta1={delta1}, delta2={delta2})")
    lam = compute_lambda(y, graph) if cfg.lam is None else cfg.lam
    mu1, mu2 = initial_mus(y, graph, delta1, delta2, cfg.mu_factor)
    if cfg.mu1_init is not None:
        mu1 = max(cfg.mu1_init, delta1 / 2)
    if cfg.mu2_init is not None:
        mu2 = max(cfg.mu2_init, delta2 / 2)
    state = TrainState(ae, y.copy(), RobustParams(mu1, mu2, lam), delta1, delta2, cfg.period,
                       cfg.adam(), cfg.adam(), np.random.default_rng(cfg.seed),
                       cfg.objective, cfg.freeze_autoencoder)
    state.continuation_complete = _at_floor(state)
    return state


def _at_floor(state):
    at2 = state.rp.mu2 == state.delta2 / 2
    if state.objective == "rcc":
        return at2
    return at2 and state.rp.mu1 == state.delta1 / 2


# ---------------------------------------------------------------- one epoch

def sample_edge_minibatch(graph, m, rng):
    """One batch of ``m`` distinct edges drawn uniformly."""
    ids = np.sort(rng.choice(graph.n_edges, size=min(m, graph.n_edges), replace=False))
    return make_minibatch(graph, ids)


def train_epoch(state, x, graph, cfg, max_batches=None):
    """One pass over a random partition of the edges. Returns mean loss terms."""
    x = np.asarray(getattr(x, "values", x), dtype=state.ae.dtype)
    parts = epoch_batches(graph.n_edges, cfg.edges_per_batch, state.rng)
    if max_batches is not None:
        parts = parts[:max_batches]
    totals = np.zeros(4)
    params = state.ae.parameters()
    for ids in parts:
        batch = make_minibatch(graph, ids)
        ev = evaluate_batch(batch, state.ae, state.z, x, state.rp, state.objective,
                            param_grads=not state.frozen)
        if not np.isfinite(ev.loss):
            raise DivergenceError(
                f"non-finite loss at epoch {state.epoch} (recon={ev.recon}, data={ev.data}, "
                f"pairwise={ev.pairwise}, mu1={state.rp.mu1}, mu2={state.rp.mu2})")
        if not state.frozen and params:
            state.adam_omega.step(params, ev.param_grads)
        if cfg.z_update == "dense":
            full = np.zeros_like(state.z)
            full[batch.nodes] = ev.grad_z
            state.adam_z.step([state.z], [full])
        else:
            state.adam_z.step_rows(state.z, batch.nodes, ev.grad_z)
        totals += (ev.loss, ev.recon, ev.data, ev.pairwise)
    state.epoch += 1
    return totals / max(len(parts), 1)


def continuation_step(state):
    """Halve both scales, never below half their thresholds."""
    state.rp = replace(state.rp, mu1=max(state.rp.mu1 / 2, state.delta1 / 2),
                       mu2=max(state.rp.mu2 / 2, state.delta2 / 2))
    state.continuation_complete = _at_floor(state)
    return state.rp


def halvings_to_floor(mu, delta):
    return max(0, math.ceil(math.log2(mu / (delta / 2))))


# ---------------------------------------------------------------- clustering

def threshold_pairs(z, radius, chunk=1024):
    """All pairs (i < j) with ``|z_i - z_j| < radius``, found with a k-d tree."""
    z = np.asarray(z, dtype=np.float64)
    tree = cKDTree(z)
    found = []
    r_query = radius * (1.0 + 1e-9)
    for start in range(0, len(z), chunk):
        lists = tree.query_ball_point(z[start:start + chunk], r_query, return_sorted=False)
        counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
        if counts.sum() == 0:
            continue
        jj = np.fromiter((j for l in lists for j in l), dtype=np.int64, count=int(counts.sum()))
        ii = np.repeat(np.arange(start, start + len(lists)), counts)
        keep = jj > ii
        ii, jj = ii[keep], jj[keep]
        dist = np.linalg.norm(z[ii] - z[jj], axis=1)
        strict = dist < radius
        found.append(np.stack([ii[strict], jj[strict]], axis=1))
    if not found:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(found)


def extract_clusters(z, delta2):
    """Connected components of the graph joining representatives closer than ``delta2``.

    Labels are numbered in order of first appearance by point index.
    """
    if not delta2 > 0:
        raise ValueError("delta2 must be positive")
    pairs = threshold_pairs(z, delta2)
    return _kernels.connected_components(len(z), pairs[:, 0], pairs[:, 1])


def changed_edge_fraction(prev_labels, labels, edges):
    same_prev = prev_labels[edges[:, 0]] == prev_labels[edges[:, 1]]
    same_now = labels[edges[:, 0]] == labels[edges[:, 1]]
    return float(np.count_nonzero(same_prev != same_now)) / len(edges)


def check_convergence(prev_labels, labels, graph, threshold=0.001):
    """``(stop, fraction)``; stop when fewer than ``threshold`` of edges flipped."""
    if prev_labels is None:
        return False, math.nan
    frac = changed_edge_fraction(prev_labels, labels, graph.edges)
    return frac < threshold, frac


# ---------------------------------------------------------------- drivers

def optimize(state, x, graph, cfg, on_epoch=None, history=None):
    """Run epochs from ``state`` until edge stability or the epoch cap."""
    history = [] if history is None else history
    reason = EPOCH_CAP
    while state.epoch < cfg.epoch_cap:
        mu1, mu2 = state.rp.mu1, state.rp.mu2
        loss, recon, data, pair = train_epoch(state, x, graph, cfg)
        rec = EpochLog(state.epoch, loss, recon, data, pair, mu1, mu2)
        stop = False
        if state.continuation_complete:
            labels = extract_clusters(state.z, state.delta2)
            stop, rec.changed_fraction = check_convergence(state.prev_labels, labels, graph, cfg.stop_fraction)
            rec.num_clusters = int(labels.max()) + 1
            state.prev_labels = labels
        elif state.epoch % state.period == 0:
            continuation_step(state)
        history.append(rec)
        log.info("epoch %d loss %.6g mu1 %.4g mu2 %.4g changed %.5f clusters %d",
                 rec.epoch, rec.loss, mu1, mu2, rec.changed_fraction, rec.num_clusters)
        if on_epoch is not None:
            on_epoch(state, rec)
        if stop:
            reason = EDGE_STABILITY
            break
    return reason, history


def finish(state, x, reason, history):
    x = np.asarray(getattr(x, "values", x), dtype=state.ae.dtype)
    labels = extract_clusters(state.z, state.delta2)
    return ClusterResult(labels, int(labels.max()) + 1, state.z.copy(), embed(state.ae, x),
                         state.epoch, reason, state.delta2, history)


def run_dcc(x, cfg=None, ae=None, graph=None, k=10, metric="cosine", n_code=10,
            hidden=PAPER_HIDDEN, pretrain=None, on_epoch=None, on_init=None):
    """Full pipeline: graph, autoencoder initialization, joint optimization, extraction.

    ``ae`` skips pretraining when given. ``on_init(state)`` runs once after
    initialization and ``on_epoch(state, record)`` after every epoch.
    """
    cfg = cfg or DCCConfig()
    values = np.asarray(x.values if isinstance(x, DataMatrix) else x, dtype=np.float64)
    if graph is None:
        graph = build_graph(values, k, metric)
    if ae is None:
        ae, _ = sdae.initialize(values, n_code, hidden, pretrain or sdae.PretrainConfig(seed=cfg.seed),
                               dtype=np.dtype(cfg.dtype))
    state = init_state(ae, values, graph, cfg)
    if on_init is not None:
        on_init(state)
    reason, history = optimize(state, values, graph, cfg, on_epoch)
    return finish(state, values, reason, history)


def run_rcc(x, cfg=None, graph=None, k=10, metric="cosine", on_epoch=None, on_init=None):
    """Representative-only clustering of a fixed embedding (the input itself)."""
    cfg = replace(cfg or DCCConfig(), objective="rcc", freeze_autoencoder=True)
    values = np.asarray(x.values if isinstance(x, DataMatrix) else x, dtype=np.float64)
    return run_dcc(values, cfg, ae=identity_autoencoder(values.shape[1]), graph=graph, k=k,
                   metric=metric, on_epoch=on_epoch, on_init=on_init)


# ---------------------------------------------------------------- persistence

def ae_arrays(ae, prefix="ae"):
    arrays = {}
    for side, layers in (("enc", ae.encoder), ("dec", ae.decoder)):
        for k, layer in enumerate(layers):
            arrays[f"{prefix}.{side}.{k:02d}.w"] = layer.weight
            arrays[f"{prefix}.{side}.{k:02d}.b"] = layer.bias
    return arrays


def ae_from_arrays(arrays, n_input, prefix="ae"):
    sides = {}
    for side in ("enc", "dec"):
        ks = sorted({int(name.split(".")[2]) for name in arrays if name.startswith(f"{prefix}.{side}.")})
        sides[side] = [Layer(arrays[f"{prefix}.{side}.{k:02d}.w"], arrays[f"{prefix}.{side}.{k:02d}.b"]) for k in ks]
    return Autoencoder(sides["enc"], sides["dec"], n_input)


def save_autoencoder(path, ae, extra=None):
    save_checkpoint(path, ae_arrays(ae), {"kind": "autoencoder", "n_input": ae.n_input, **(extra or {})})


def load_autoencoder(path):
    arrays, scalars = load_checkpoint(path)
    if scalars.get("kind") not in ("autoencoder", "train-state"):
        raise CheckpointError(f"{path} holds no autoencoder")
    return ae_from_arrays(arrays, scalars["n_input"])


def _adam_dump(opt, prefix, arrays, scalars):
    scalars[prefix] = {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
                       "t": opt.t, "n": 0 if opt.m is None else len(opt.m)}
    for k, (m, v) in enumerate(zip(opt.m or [], opt.v or [])):
        arrays[f"{prefix}.m.{k:03d}"] = m
        arrays[f"{prefix}.v.{k:03d}"] = v


def _adam_load(prefix, arrays, scalars):
    s = scalars[prefix]
    opt = Adam(s["lr"], s["beta1"], s["beta2"], s["eps"])
    opt.t = s["t"]
    if s["n"]:
        opt.m = [arrays[f"{prefix}.m.{k:03d}"] for k in range(s["n"])]
        opt.v = [arrays[f"{prefix}.v.{k:03d}"] for k in range(s["n"])]
    return opt


def save_state(path, state):
    if state.z.shape[1] != state.ae.n_code:
        raise ShapeError("representatives do not match the encoder output width")
    arrays = ae_arrays(state.ae)
    arrays["z"] = state.z
    if state.prev_labels is not None:
        arrays["prev_labels"] = state.prev_labels
    scalars = {"kind": "train-state", "n_input": state.ae.n_input,
               "mu1": state.rp.mu1, "mu2": state.rp.mu2, "lam": state.rp.lam,
               "delta1": state.delta1, "delta2": state.delta2, "period": state.period,
               "objective": state.objective, "frozen": state.frozen, "epoch": state.epoch,
               "continuation_complete": state.continuation_complete,
               "rng": state.rng.bit_generator.state}
    _adam_dump(state.adam_omega, "adam_omega", arrays, scalars)
    _adam_dump(state.adam_z, "adam_z", arrays, scalars)
    save_checkpoint(path, arrays, scalars)


def load_state(path):
    arrays, s = load_checkpoint(path)
    if s.get("kind") != "train-state":
        raise CheckpointError(f"{path} is not a training-state checkpoint")
    try:
        rng = np.random.Generator(getattr(np.random, s["rng"]["bit_generator"])())
        rng.bit_generator.state = s["rng"]
        return TrainState(
            ae_from_arrays(arrays, s["n_input"]), arrays["z"],
            RobustParams(s["mu1"], s["mu2"], s["lam"]), s["delta1"], s["delta2"], s["period"],
            _adam_load("adam_omega", arrays, s), _adam_load("adam_z", arrays, s), rng,
            s["objective"], s["frozen"], s["epoch"], s["continuation_complete"],
            arrays.get("prev_labels"))
    except (KeyError, AttributeError, TypeError) as exc:
        raise CheckpointError(f"{path}: incomplete training state ({exc})") from None


def write_history(path, history):
    with open(path, "w") as f:
        f.write("epoch\tloss\trecon\tdata\tpairwise\tmu1\tmu2\tchanged_fraction\tnum_clusters\n")
        for r in history:
            floats = (r.loss, r.recon, r.data, r.pairwise, r.mu1, r.mu2, r.changed_fraction)
            f.write("\t".join([str(int(r.epoch)), *(repr(float(v)) for v in floats), str(int(r.num_clusters))]) + "\n")


def read_history(path):
    out = []
    with open(path) as f:
        next(f)
        for line in f:
            if not line.strip():
                continue
            t = line.rstrip("\n").split("\t")
            out.append(EpochLog(int(t[0]), *map(float, t[1:8]), int(t[8])))
    return out
