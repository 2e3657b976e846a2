"""Command-line interface.

Every command takes ``--config FILE`` (flat ``key = value`` lines, ``#``
comments) plus flags; an explicit flag beats the file, which beats the
built-in default. Errors print one line ``dcc-error: <kind>: <message>`` to
stderr and exit with status 1.
"""
import argparse
from dataclasses import dataclass, fields
import logging
import os
import sys

import numpy as np

from . import dccopt, sdae
from .dataio import load_labels, load_matrix, normalize_features, save_labels, save_matrix, read_binary_matrix
from .errors import DCCError, MissingLogError, ParseError
from .graph import build_graph, load_graph, save_graph
from .metrics import evaluate
from .nncore import PAPER_HIDDEN, reconstruction_mse

GRAPH_FILE = "graph.txt"
SDAE_FILE = "sdae.ckpt"
PRETRAIN_LOG = "pretrain_log.tsv"
STATE_FILE = "state.ckpt"
RUN_LOG = "run_log.tsv"
LABELS_FILE = "labels.txt"
EMBEDDING_FILE = "embedding.bin"
SUMMARY_FILE = "summary.txt"
EVAL_FILE = "evaluation.tsv"


@dataclass
class RunConfig:
    data: str = ""
    format: str = "csv"
    labels: str = ""
    pred: str = ""
    out: str = "dcc_out"
    normalize: bool = True
    mode: str = "dcc"
    d: int = 10
    k: int = 10
    metric: str = "cosine"
    hidden: str = ",".join(map(str, PAPER_HIDDEN))
    period: int = 20
    edges_per_batch: int = 128
    lr: float = 0.001
    momentum: float = 0.99
    momentum_interpretation: str = "beta1"
    epoch_cap: int = 300
    seed: int = 0
    per_layer_epochs: int = 200
    finetune_epochs: int = 400
    pretrain_batch: int = 256
    dropout: float = 0.2
    pretrain_lr: float = 0.1
    graph: str = ""
    checkpoint: str = ""
    dtype: str = "float32"
    z_update: str = "dense"

    def validate(self):
        for name in ("d", "k", "period", "edges_per_batch", "pretrain_batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epoch_cap < 0:
            raise ValueError("epoch_cap must be non-negative")
        if self.mode not in ("dcc", "rcc"):
            raise ValueError(f"mode must be dcc or rcc, got {self.mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        return self

    def hidden_widths(self):
        return tuple(int(w) for w in self.hidden.split(",") if w.strip())

    def dcc_config(self):
        return dccopt.DCCConfig(edges_per_batch=self.edges_per_batch, lr=self.lr, momentum=self.momentum,
                                momentum_interpretation=self.momentum_interpretation, period=self.period,
                                epoch_cap=self.epoch_cap, objective=self.mode, seed=self.seed,
                                dtype=self.dtype, z_update=self.z_update)

    def pretrain_config(self):
        return sdae.PretrainConfig(per_layer_epochs=self.per_layer_epochs, finetune_epochs=self.finetune_epochs,
                                   batch_size=self.pretrain_batch, dropout=self.dropout,
                                   base_lr=self.pretrain_lr, seed=self.seed)


_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _coerce(key, text):
    kind = _TYPES[key]
    if kind is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    try:
        return kind(text)
    except ValueError:
        raise ValueError(f"{key}: cannot read {text!r} as {kind.__name__}") from None


def read_config_file(path):
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key = value")
            key, text = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _TYPES:
                raise ParseError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, text)
    return values


def resolve_config(args):
    """Defaults, then the config file, then flags given on the command line."""
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in _TYPES:
        given = getattr(args, key, None)
        if given is not None:
            values[key] = given
    return RunConfig(**values).validate()


# ---------------------------------------------------------------- helpers

def _load_data(cfg):
    if not cfg.data:
        raise ValueError("--data is required")
    m = load_matrix(cfg.data, cfg.format)
    if cfg.labels:
        m = m.with_labels(load_labels(cfg.labels, m.n_points))
    return normalize_features(m) if cfg.normalize else m


def _out(cfg, name):
    os.makedirs(cfg.out, exist_ok=True)
    return os.path.join(cfg.out, name)


def _graph(cfg, x):
    if cfg.graph:
        g = load_graph(cfg.graph)
        if g.n_nodes != len(x):
            raise ValueError(f"graph {cfg.graph} has {g.n_nodes} nodes, data has {len(x)} rows")
        return g
    g = build_graph(x, cfg.k, cfg.metric)
    save_graph(_out(cfg, GRAPH_FILE), g)
    return g


def _pretrain(cfg, x):
    ae, records = sdae.initialize(x, cfg.d, cfg.hidden_widths(), cfg.pretrain_config(), dtype=np.dtype(cfg.dtype))
    dccopt.save_autoencoder(_out(cfg, SDAE_FILE), ae)
    sdae.write_loss_log(_out(cfg, PRETRAIN_LOG), records)
    return ae


# ---------------------------------------------------------------- commands

def cmd_build_graph(cfg):
    m = _load_data(cfg)
    g = build_graph(m.values, cfg.k, cfg.metric)
    path = _out(cfg, GRAPH_FILE)
    save_graph(path, g)
    print(f"edges {g.n_edges}")
    print(f"mutual_edges {g.n_mutual}")
    print(f"mutual_components {g.n_components_mutual}")
    print(f"degree min {g.degrees.min()} mean {g.degrees.mean():.3f} max {g.degrees.max()}")
    print(f"wrote {path}")
    return g


def cmd_pretrain(cfg):
    m = _load_data(cfg)
    ae = _pretrain(cfg, m.values)
    mse = reconstruction_mse(ae, m.values)
    print(f"reconstruction_mse {mse:.6g}")
    print(f"wrote {_out(cfg, SDAE_FILE)}")
    return ae


def cmd_cluster(cfg):
    m = _load_data(cfg)
    x = m.values
    g = _graph(cfg, x)
    dcfg = cfg.dcc_config()
    holder = {}
    keep = lambda state: holder.setdefault("state", state)
    if cfg.mode == "rcc":
        res = dccopt.run_rcc(x, dcfg, graph=g, on_init=keep)
    else:
        ae = dccopt.load_autoencoder(cfg.checkpoint) if cfg.checkpoint else _pretrain(cfg, x)
        res = dccopt.run_dcc(x, dcfg, ae=ae, graph=g, on_init=keep)
    save_labels(_out(cfg, LABELS_FILE), res.labels)
    save_matrix(_out(cfg, EMBEDDING_FILE), res.final_z)
    dccopt.write_history(_out(cfg, RUN_LOG), res.history)
    dccopt.save_state(_out(cfg, STATE_FILE), holder["state"])
    lines = [f"num_clusters {res.num_clusters}", f"termination_reason {res.termination_reason}",
             f"epochs {res.epochs_run}", f"delta2 {float(res.delta2)!r}"]
    if m.labels is not None:
        scores = evaluate(m.labels, res.labels)
        lines.append(f"ami {scores['ami']:.3f} nmi {scores['nmi']:.3f} acc {scores['acc']:.3f}")
    with open(_out(cfg, SUMMARY_FILE), "w") as f:
        f.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return res


def cmd_evaluate(cfg):
    if not cfg.pred or not cfg.labels:
        raise ValueError("evaluate needs --pred and --labels")
    pred = load_labels(cfg.pred)
    truth = load_labels(cfg.labels, len(pred))
    scores = evaluate(truth, pred)
    row = f"{scores['ami']:.3f}\t{scores['nmi']:.3f}\t{scores['acc']:.3f}"
    print("AMI\tNMI\tACC")
    print(row)
    with open(_out(cfg, EVAL_FILE), "w") as f:
        f.write("AMI\tNMI\tACC\n" + row + "\n")
    return scores


def pca_2d(z):
    centred = z - z.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    proj = centred @ vt[:2].T
    if proj.shape[1] < 2:
        proj = np.hstack([proj, np.zeros((len(z), 2 - proj.shape[1]))])
    # fix the sign of each axis so output does not depend on the SVD routine
    signs = np.sign(proj[np.argmax(np.abs(proj), axis=0), range(2)])
    return proj * np.where(signs == 0, 1.0, signs)


def _write_csv(path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r) + "\n")


def cmd_export_plotdata(cfg):
    """CSV tables for plotting a finished run directory."""
    run_log = os.path.join(cfg.out, RUN_LOG)
    if not os.path.exists(run_log):
        raise MissingLogError(f"no {RUN_LOG} in {cfg.out}")
    history = dccopt.read_history(run_log)
    written = []

    def emit(name, header, rows):
        path = os.path.join(cfg.out, name)
        _write_csv(path, header, rows)
        written.append(path)

    emit("plot_loss.csv", ["epoch", "loss", "recon", "data", "pairwise"],
         [(r.epoch, r.loss, r.recon, r.data, r.pairwise) for r in history])
    emit("plot_mu.csv", ["epoch", "mu1", "mu2"], [(r.epoch, r.mu1, r.mu2) for r in history])
    emit("plot_clusters.csv", ["epoch", "num_clusters", "changed_fraction"],
         [(r.epoch, r.num_clusters, r.changed_fraction) for r in history if r.num_clusters >= 0])
    pre_log = os.path.join(cfg.out, PRETRAIN_LOG)
    if os.path.exists(pre_log):
        emit("plot_pretrain.csv", ["stage", "epoch", "loss"],
             [(r.stage, r.epoch, r.loss) for r in sdae.read_loss_log(pre_log)])
    emb = os.path.join(cfg.out, EMBEDDING_FILE)
    lab = os.path.join(cfg.out, LABELS_FILE)
    if os.path.exists(emb) and os.path.exists(lab):
        z = read_binary_matrix(emb)
        labels = load_labels(lab, len(z))
        proj = pca_2d(z)
        emit("plot_pca.csv", ["pc1", "pc2", "label"],
             [(float(a), float(b), int(c)) for (a, b), c in zip(proj, labels)])
    for path in written:
        print(f"wrote {path}")
    return written


COMMANDS = {
    "build-graph": cmd_build_graph,
    "pretrain": cmd_pretrain,
    "cluster": cmd_cluster,
    "evaluate": cmd_evaluate,
    "export-plotdata": cmd_export_plotdata,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="dcc", description="Deep continuous clustering of feature matrices.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value file; flags override it")
        p.add_argument("--data", help="feature matrix path")
        p.add_argument("--format", choices=["csv", "binary-matrix"], help="data file format (default csv)")
        p.add_argument("--labels", help="ground-truth labels, one integer per line")
        p.add_argument("--pred", help="predicted labels (evaluate)")
        p.add_argument("--out", help="output / run directory (default dcc_out)")
        p.add_argument("--mode", choices=["dcc", "rcc"])
        p.add_argument("--d", type=int, help="embedding width (default 10)")
        p.add_argument("--k", type=int, help="neighbours per point (default 10)")
        p.add_argument("--edges-per-batch", dest="edges_per_batch", type=int, help="default 128")
        p.add_argument("--epoch-cap", dest="epoch_cap", type=int, help="default 300")
        p.add_argument("--seed", type=int)
        p.add_argument("--graph", help="reuse a saved graph file")
        p.add_argument("--checkpoint", help="reuse a pretrained autoencoder checkpoint")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except DCCError as exc:
        print(f"dcc-error: {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"dcc-error: io-error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"dcc-error: invalid-argument: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
