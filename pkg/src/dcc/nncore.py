"""Dense autoencoder with hand-written reverse mode, plus Adam and momentum SGD.

Batches are row-major: one datapoint per row, so a layer maps ``a -> a @ W.T + b``.
Every affine layer is followed by a ReLU except the last layer of the encoder
(the code) and the last layer of the decoder (the reconstruction).
"""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ShapeError, TapeMismatchError

PAPER_HIDDEN = (500, 500, 2000)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]

    def copy(self):
        return Layer(self.weight.copy(), self.bias.copy())


@dataclass
class Autoencoder:
    """Encoder ``f`` (input -> code) and decoder ``g`` (code -> input).

    With no layers at all both maps are the identity, which is how the plain
    representative-only clustering mode is expressed.
    """
    encoder: list
    decoder: list
    n_input: int = field(default=0)

    def __post_init__(self):
        if self.encoder:
            self.n_input = self.encoder[0].n_in
        _check_chain(self.encoder, "encoder")
        _check_chain(self.decoder, "decoder")
        if self.encoder and self.decoder:
            if self.decoder[0].n_in != self.encoder[-1].n_out or self.decoder[-1].n_out != self.n_input:
                raise ShapeError("decoder does not mirror encoder widths")
        elif bool(self.encoder) != bool(self.decoder):
            raise ShapeError("encoder and decoder must both be empty or both non-empty")

    @property
    def n_code(self):
        return self.encoder[-1].n_out if self.encoder else self.n_input

    @property
    def widths(self):
        if not self.encoder:
            return [self.n_input]
        return [self.encoder[0].n_in] + [l.n_out for l in self.encoder] + [l.n_out for l in self.decoder]

    def layers(self):
        return self.encoder + self.decoder

    def parameters(self):
        """Flat list of arrays in a fixed order (encoder first, weight before bias)."""
        out = []
        for layer in self.layers():
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self):
        return Autoencoder([l.copy() for l in self.encoder], [l.copy() for l in self.decoder], self.n_input)

    def astype(self, dtype):
        cast = lambda l: Layer(l.weight.astype(dtype), l.bias.astype(dtype))
        return Autoencoder([cast(l) for l in self.encoder], [cast(l) for l in self.decoder], self.n_input)

    @property
    def dtype(self):
        return self.encoder[0].weight.dtype if self.encoder else np.dtype(np.float64)


def _check_chain(layers, name):
    for k, layer in enumerate(layers):
        if layer.weight.ndim != 2 or layer.bias.shape != (layer.n_out,):
            raise ShapeError(f"{name} layer {k}: weight {layer.weight.shape}, bias {layer.bias.shape}")
        if k and layers[k - 1].n_out != layer.n_in:
            raise ShapeError(f"{name} layer {k} expects {layer.n_in} inputs, previous gives {layers[k - 1].n_out}")


def init_layer(n_in, n_out, rng, dtype=np.float64):
    bound = 1.0 / np.sqrt(n_in)
    w = rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype)
    b = rng.uniform(-bound, bound, size=n_out).astype(dtype)
    return Layer(w, b)


def build_autoencoder(n_input, n_code, hidden=PAPER_HIDDEN, rng=None, dtype=np.float64):
    """Autoencoder ``D-h1-...-hk-d-hk-...-h1-D`` with fan-in uniform init."""
    rng = np.random.default_rng(rng)
    widths = [n_input, *hidden, n_code]
    encoder = [init_layer(widths[k], widths[k + 1], rng, dtype) for k in range(len(widths) - 1)]
    back = widths[::-1]
    decoder = [init_layer(back[k], back[k + 1], rng, dtype) for k in range(len(back) - 1)]
    return Autoencoder(encoder, decoder)


def identity_autoencoder(n_input, n_layers=0, dtype=np.float64):
    """Autoencoder computing the identity map.

    ``n_layers=0`` gives the layer-free passthrough; ``n_layers=1`` gives one
    explicit linear layer with identity weight and zero bias on each side.
    """
    if n_layers == 0:
        return Autoencoder([], [], n_input)
    if n_layers != 1:
        raise ValueError("only 0 or 1 explicit identity layers are supported")
    eye = np.eye(n_input, dtype=dtype)
    zero = np.zeros(n_input, dtype=dtype)
    return Autoencoder([Layer(eye.copy(), zero.copy())], [Layer(eye.copy(), zero.copy())])


@dataclass
class Tape:
    """Cached activations of one forward pass through a layer stack."""
    layers: list
    inputs: list        # per layer, the (post-dropout) input fed to the affine map
    pre: list           # per layer, pre-activation
    relu: list          # per layer, whether a ReLU followed
    masks: list         # per layer, dropout keep-mask scaled by 1/(1-p), or None
    batch_shape: tuple
    out_shape: tuple


def forward(layers, a, relu_last=False, dropout=0.0, rng=None, relu=None):
    """Run a stack of affine+ReLU layers; returns ``(output, tape)``.

    ``dropout`` > 0 applies inverted dropout to the input of every affine map.
    ``relu`` optionally gives an explicit per-layer activation flag.
    """
    if not 0.0 <= dropout < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    a = np.asarray(a)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D batch, got shape {a.shape}")
    if layers and a.shape[1] != layers[0].n_in:
        raise ShapeError(f"batch width {a.shape[1]} != layer input width {layers[0].n_in}")
    batch_shape = a.shape
    inputs, pres, relus, masks = [], [], [], []
    last = len(layers) - 1
    for k, layer in enumerate(layers):
        mask = None
        if dropout > 0.0:
            mask = (rng.random(a.shape) >= dropout).astype(a.dtype) / (1.0 - dropout)
            a = a * mask
        s = a @ layer.weight.T
        s += layer.bias
        use_relu = relu[k] if relu is not None else (relu_last or k < last)
        inputs.append(a)
        pres.append(s)
        relus.append(use_relu)
        masks.append(mask)
        a = np.maximum(s, 0.0) if use_relu else s
    return a, Tape(list(layers), inputs, pres, relus, masks, batch_shape, a.shape)


def backprop(tape, upstream, input_grad=True):
    """Reverse pass. Returns ``(param_grads, input_grad)``.

    ``param_grads`` is a flat list ``[dW0, db0, dW1, db1, ...]`` in layer order.
    With ``input_grad=False`` the gradient w.r.t. the stack input is skipped
    and returned as None.
    """
    upstream = np.asarray(upstream)
    if tape.layers:
        upstream = upstream.astype(tape.pre[-1].dtype, copy=False)
    if upstream.shape != tape.out_shape:
        raise TapeMismatchError(f"upstream gradient {upstream.shape} does not match output {tape.out_shape}")
    grads = [None] * (2 * len(tape.layers))
    g = upstream
    for k in range(len(tape.layers) - 1, -1, -1):
        layer = tape.layers[k]
        if tape.relu[k]:
            g = g * (tape.pre[k] > 0)
        grads[2 * k] = g.T @ tape.inputs[k]
        grads[2 * k + 1] = g.sum(axis=0)
        if k == 0 and not input_grad:
            return grads, None
        g = g @ layer.weight
        if tape.masks[k] is not None:
            g = g * tape.masks[k]
    return grads, g


def encode(ae, batch, dropout=0.0, rng=None):
    if ae.n_input and np.shape(batch)[-1] != ae.n_input:
        raise ShapeError(f"batch width {np.shape(batch)[-1]} != input width {ae.n_input}")
    return forward(ae.encoder, batch, relu_last=False, dropout=dropout, rng=rng)


def decode(ae, codes, dropout=0.0, rng=None):
    if np.shape(codes)[-1] != ae.n_code:
        raise ShapeError(f"code width {np.shape(codes)[-1]} != {ae.n_code}")
    return forward(ae.decoder, codes, relu_last=False, dropout=dropout, rng=rng)


def embed(ae, x, batch_size=4096):
    """Evaluation-mode encoder output for a whole matrix, chunked."""
    x = np.asarray(x, dtype=ae.dtype)
    if not ae.encoder:
        return x.copy()
    return np.concatenate([encode(ae, x[s:s + batch_size])[0] for s in range(0, len(x), batch_size)])


def reconstruct(ae, x, batch_size=4096):
    x = np.asarray(x, dtype=ae.dtype)
    if not ae.encoder:
        return x.copy()
    parts = []
    for s in range(0, len(x), batch_size):
        y, _ = encode(ae, x[s:s + batch_size])
        parts.append(decode(ae, y)[0])
    return np.concatenate(parts)


def reconstruction_mse(ae, x):
    x = np.asarray(x, dtype=ae.dtype)
    return float(np.mean((reconstruct(ae, x) - x) ** 2))


# ---------------------------------------------------------------- optimizers

class Adam:
    """Adam with bias correction.

    ``step`` updates a list of arrays in place. ``step_rows`` applies a sparse
    update to selected rows of one matrix; rows outside the selection keep both
    their values and their moments, and bias correction uses this optimizer's
    global step count.
    """

    def __init__(self, lr=0.001, beta1=0.99, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def _ensure(self, params):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        elif len(self.m) != len(params) or any(m.shape != p.shape for m, p in zip(self.m, params)):
            raise ShapeError("parameter shapes changed under the optimizer")

    def step(self, params, grads):
        self._ensure(params)
        if len(grads) != len(params):
            raise ShapeError("one gradient per parameter required")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ShapeError(f"gradient {g.shape} for parameter {p.shape}")
            _kernels.adam_update(p, g, m, v, self.beta1, self.beta2, self.lr / bc1, bc2, self.eps)

    def step_rows(self, param, rows, grad_rows):
        self._ensure([param])
        if grad_rows.shape != (len(rows),) + param.shape[1:]:
            raise ShapeError(f"row gradient {grad_rows.shape} for {len(rows)} rows of {param.shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        m = self.beta1 * self.m[0][rows] + (1.0 - self.beta1) * grad_rows
        v = self.beta2 * self.v[0][rows] + (1.0 - self.beta2) * (grad_rows * grad_rows)
        self.m[0][rows] = m
        self.v[0][rows] = v
        param[rows] -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


def adam_betas(interpretation="beta1", momentum=0.99):
    """Read a single quoted Adam "momentum" as either beta1 or beta2."""
    if interpretation == "beta1":
        return momentum, 0.999
    if interpretation == "beta2":
        return 0.9, momentum
    raise ValueError(f"unknown momentum interpretation {interpretation!r}")


class SGDMomentum:
    """SGD with heavy-ball momentum and step decay ``lr * factor**(epoch // period)``."""

    def __init__(self, lr=0.1, momentum=0.9, decay_factor=0.1, decay_period=80):
        self.base_lr = lr
        self.momentum = momentum
        self.decay_factor = decay_factor
        self.decay_period = decay_period
        self.velocity = None

    def lr_at(self, epoch):
        return self.base_lr * self.decay_factor ** (epoch // self.decay_period)

    def step(self, params, grads, epoch):
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        lr = self.lr_at(epoch)
        for p, g, vel in zip(params, grads, self.velocity):
            if g.shape != p.shape:
                raise ShapeError(f"gradient {g.shape} for parameter {p.shape}")
            vel *= self.momentum
            vel += g
            p -= lr * vel


def numeric_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at the flat vector ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        fp = f(x)
        x.flat[i] = old - h
        fm = f(x)
        x.flat[i] = old
        grad.flat[i] = (fp - fm) / (2.0 * h)
    return grad
