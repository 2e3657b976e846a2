"""Stacked denoising autoencoder initialization.

Layer pairs (encoder layer k, its mirrored decoder layer) are trained one at
a time from the outside in. Each pair learns to reconstruct the clean output
of the frozen layers before it from a dropout-corrupted copy, with dropout on
the input of both of its affine maps. The whole stack is then fine-tuned
end-to-end on the reconstruction loss without noise.
"""
from dataclasses import dataclass
import logging

import numpy as np

from .errors import DivergenceError
from .nncore import PAPER_HIDDEN, SGDMomentum, backprop, build_autoencoder, forward

log = logging.getLogger(__name__)

_CACHE_LIMIT_BYTES = 512 * 2**20


@dataclass
class PretrainConfig:
    per_layer_epochs: int = 200
    finetune_epochs: int = 400
    batch_size: int = 256
    dropout: float = 0.2
    base_lr: float = 0.1
    lr_decay: float = 0.1
    decay_period: int = 80
    momentum: float = 0.9
    scale_lr: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.per_layer_epochs < 0 or self.finetune_epochs < 0 or self.batch_size < 1:
            raise ValueError("epoch counts must be non-negative and batch size positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def learning_rate(self, n_input):
        """Base rate, rescaled by input width as ``lr * 784 / D`` within [0.01, 0.1]."""
        if not self.scale_lr:
            return self.base_lr
        return float(np.clip(self.base_lr * 784.0 / n_input, 0.01, 0.1))

    def optimizer(self, n_input):
        return SGDMomentum(self.learning_rate(n_input), self.momentum, self.lr_decay, self.decay_period)


@dataclass
class EpochRecord:
    stage: str
    epoch: int
    loss: float


def _mse_step(layers, relu, inputs, targets, opt, epoch, dropout, rng):
    out, tape = forward(layers, inputs, dropout=dropout, rng=rng, relu=relu)
    res = out - targets
    loss = float(np.mean(res * res))
    grads, _ = backprop(tape, (2.0 / res.size) * res, input_grad=False)
    params = [p for l in layers for p in (l.weight, l.bias)]
    opt.step(params, grads, epoch)
    return loss


def _train_stack(layers, relu, source, target_of, n, cfg, opt, epochs, dropout, rng, stage, records):
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = np.sort(perm[s:s + cfg.batch_size])
            inputs = source(idx)
            targets = target_of(idx, inputs)
            total += len(idx) * _mse_step(layers, relu, inputs, targets, opt, epoch, dropout, rng)
        loss = total / n
        if not np.isfinite(loss):
            raise DivergenceError(f"{stage}: loss became non-finite at epoch {epoch}")
        records.append(EpochRecord(stage, epoch, loss))
        log.debug("%s epoch %d loss %.6g", stage, epoch, loss)


def _frozen_features(ae, k, x):
    """Clean activations after the first ``k`` encoder layers (all ReLU)."""
    a = x
    for layer in ae.encoder[:k]:
        a = np.maximum(a @ layer.weight.T + layer.bias, 0.0)
    return a


def pretrain_layerwise(x, ae, cfg, records=None):
    """Greedy outer-to-inner pretraining of every encoder/decoder layer pair, in place."""
    records = [] if records is None else records
    x = np.asarray(x, dtype=ae.dtype)
    n = len(x)
    rng = np.random.default_rng(cfg.seed)
    n_pairs = len(ae.encoder)
    for k in range(n_pairs):
        enc = ae.encoder[k]
        dec = ae.decoder[n_pairs - 1 - k]
        relu = [k < n_pairs - 1, k > 0]
        width = enc.n_in
        if k == 0:
            feats = x
        elif n * width * x.itemsize <= _CACHE_LIMIT_BYTES:
            feats = _frozen_features(ae, k, x)
        else:
            feats = None
        if feats is not None:
            source = feats.__getitem__
        else:
            source = lambda idx, k=k: _frozen_features(ae, k, x[idx])
        opt = cfg.optimizer(x.shape[1])
        _train_stack([enc, dec], relu, source, lambda idx, inputs: inputs, n, cfg, opt,
                     cfg.per_layer_epochs, cfg.dropout, rng, f"layer{k + 1}", records)
    return ae


def finetune(x, ae, cfg, records=None):
    """End-to-end reconstruction training of the full stack, in place, no dropout."""
    records = [] if records is None else records
    x = np.asarray(x, dtype=ae.dtype)
    n = len(x)
    rng = np.random.default_rng([cfg.seed, 1])
    layers = ae.encoder + ae.decoder
    last_enc = len(ae.encoder) - 1
    relu = [k != last_enc for k in range(len(ae.encoder))] + [k < len(ae.decoder) - 1 for k in range(len(ae.decoder))]
    opt = cfg.optimizer(x.shape[1])
    _train_stack(layers, relu, x.__getitem__, lambda idx, inputs: inputs, n, cfg, opt,
                 cfg.finetune_epochs, 0.0, rng, "finetune", records)
    return ae


def initialize(x, n_code=10, hidden=PAPER_HIDDEN, cfg=None, dtype=np.float64, records=None):
    """Build, pretrain and fine-tune an autoencoder on ``x``; returns ``(ae, records)``."""
    cfg = cfg or PretrainConfig()
    records = [] if records is None else records
    x = np.asarray(x)
    ae = build_autoencoder(x.shape[1], n_code, hidden, np.random.default_rng([cfg.seed, 0]), dtype)
    pretrain_layerwise(x, ae, cfg, records)
    finetune(x, ae, cfg, records)
    return ae, records


def write_loss_log(path, records):
    with open(path, "w") as f:
        f.write("stage\tepoch\tloss\n")
        for r in records:
            f.write(f"{r.stage}\t{r.epoch}\t{r.loss!r}\n")


def read_loss_log(path):
    with open(path) as f:
        next(f)
        return [EpochRecord(s, int(e), float(l)) for s, e, l in (line.split("\t") for line in f if line.strip())]
