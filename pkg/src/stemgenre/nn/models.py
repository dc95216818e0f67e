"""The vocal BiLSTM network, the accompaniment CNN and a small MLP.

All three share one interface: a ``params`` dict of trainable arrays, a
``buffers`` dict of fixed arrays (input standardisation), ``forward`` /
``backward`` for training and ``predict_proba`` for inference.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from . import layers as L

N_CLASSES = 10


def glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _as_rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


@dataclass(frozen=True)
class VocalNetConfig:
    lstm_layers: int = 2
    hidden_per_direction: int = 256
    dense_sizes: tuple = (256, 128, 32)
    classes: int = N_CLASSES
    dropout_rate: float = 0.3
    frames: int = 132
    features: int = 40

    def to_dict(self):
        d = asdict(self)
        d["dense_sizes"] = list(self.dense_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "dense_sizes" in d:
            d["dense_sizes"] = tuple(d["dense_sizes"])
        return cls(**d)


@dataclass(frozen=True)
class AccompNetConfig:
    conv_channels: tuple = (64, 32, 32, 16)
    kernel: tuple = (3, 3)
    dense_hidden: int = 64
    classes: int = N_CLASSES
    dropout_rate: float = 0.3
    input_shape: tuple = (1, 40, 132)

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass(frozen=True)
class MLPConfig:
    inputs: int = 20
    hidden: tuple = (32,)
    classes: int = N_CLASSES
    dropout_rate: float = 0.0

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


class Network:
    kind = ""
    config_cls = None

    def __init__(self, config=None, rng=None):
        self.config = config if config is not None else self.config_cls()
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._build(_as_rng(rng))

    def _build(self, rng):
        raise NotImplementedError

    def weight_names(self):
        """Names of regularised parameters (everything except biases)."""
        return [k for k in self.params if not k.endswith(".b")]

    def param_count(self):
        return int(sum(p.size for p in self.params.values()))

    def fit_input_stats(self, X):
        pass

    def predict_proba(self, X, batch_size=64):
        """Class probabilities for a batch, or for a single example."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == self._example_ndim
        if single:
            X = X[None]
        out = []
        for s in range(0, X.shape[0], batch_size):
            logits, _ = self.forward(X[s:s + batch_size])
            out.append(L.softmax(logits))
        p = np.concatenate(out) if out else np.zeros((0, self.config.classes))
        return p[0] if single else p

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}


class _MfccInput:
    """Per-coefficient standardisation of ``(N, n_mfcc, frames)`` input."""

    _example_ndim = 2

    def _init_stats(self, n_coeff):
        self.buffers["input.mean"] = np.zeros(n_coeff)
        self.buffers["input.std"] = np.ones(n_coeff)

    def fit_input_stats(self, X):
        X = np.asarray(X, dtype=np.float64)
        self.buffers["input.mean"] = X.mean(axis=(0, 2))
        self.buffers["input.std"] = np.maximum(X.std(axis=(0, 2)), 1e-8)

    def _standardise(self, X):
        X = np.asarray(X, dtype=np.float64)
        return (X - self.buffers["input.mean"][None, :, None]) / self.buffers["input.std"][None, :, None]


class VocalNet(_MfccInput, Network):
    """Two stacked BiLSTM layers, then ReLU dense layers and a softmax output.

    Input is an MFCC batch ``(N, n_mfcc, frames)``, transposed to
    ``(N, frames, n_mfcc)`` so the recurrence runs over frames. The second
    BiLSTM layer is summarised by the last forward state and the last
    backward state.
    """

    kind = "vocal"
    config_cls = VocalNetConfig

    def _build(self, rng):
        c = self.config
        H = c.hidden_per_direction
        n_in = c.features
        for layer in range(c.lstm_layers):
            for d in ("fwd", "bwd"):
                p = f"lstm{layer}.{d}"
                self.params[p + ".Wx"] = glorot(rng, (n_in, 4 * H), n_in, 4 * H)
                self.params[p + ".Wh"] = glorot(rng, (H, 4 * H), H, 4 * H)
                b = np.zeros(4 * H)
                b[H:2 * H] = 1.0
                self.params[p + ".b"] = b
            n_in = 2 * H
        for k, size in enumerate(tuple(c.dense_sizes) + (c.classes,)):
            self.params[f"dense{k}.W"] = glorot(rng, (n_in, size), n_in, size)
            self.params[f"dense{k}.b"] = np.zeros(size)
            n_in = size
        self._init_stats(c.features)

    def _lstm(self, layer, d):
        p = f"lstm{layer}.{d}"
        return self.params[p + ".Wx"], self.params[p + ".Wh"], self.params[p + ".b"]

    def forward(self, X, train=False, rng=None):
        c = self.config
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1] != c.features:
            raise ShapeError(f"vocal net expects (N, {c.features}, frames), got {X.shape}")
        h = self._standardise(X).transpose(0, 2, 1)
        caches = []
        for layer in range(c.lstm_layers):
            h, lc = L.bilstm_forward(h, self._lstm(layer, "fwd"), self._lstm(layer, "bwd"))
            h, dm = L.dropout_forward(h, c.dropout_rate, rng, train)
            caches.append((lc, dm))
        H = c.hidden_per_direction
        T = h.shape[1]
        z = np.concatenate([h[:, -1, :H], h[:, 0, H:]], axis=1)
        dense = []
        n_dense = len(c.dense_sizes) + 1
        for k in range(n_dense):
            z, dc = L.dense_forward(z, self.params[f"dense{k}.W"], self.params[f"dense{k}.b"])
            if k < n_dense - 1:
                z, rm = L.relu_forward(z)
                z, dm = L.dropout_forward(z, c.dropout_rate, rng, train)
            else:
                rm = dm = None
            dense.append((dc, rm, dm))
        return z, (caches, dense, T, h.shape)

    def backward(self, dlogits, cache):
        c = self.config
        caches, dense, T, hshape = cache
        grads = {}
        dz = dlogits
        for k in reversed(range(len(dense))):
            dc, rm, dm = dense[k]
            if rm is not None:
                dz = L.relu_backward(L.dropout_backward(dz, dm), rm)
            dz, grads[f"dense{k}.W"], grads[f"dense{k}.b"] = L.dense_backward(dz, dc)
        H = c.hidden_per_direction
        dh = np.zeros(hshape)
        dh[:, -1, :H] = dz[:, :H]
        dh[:, 0, H:] = dz[:, H:]
        for layer in reversed(range(c.lstm_layers)):
            lc, dm = caches[layer]
            dh = L.dropout_backward(dh, dm)
            dh, gf, gb = L.bilstm_backward(dh, lc)
            for d, g in (("fwd", gf), ("bwd", gb)):
                p = f"lstm{layer}.{d}"
                grads[p + ".Wx"], grads[p + ".Wh"], grads[p + ".b"] = g
        return grads


class AccompNet(_MfccInput, Network):
    """Four conv + 2x2 max-pool stages, one ReLU dense layer, softmax output."""

    kind = "accomp"
    config_cls = AccompNetConfig

    def _build(self, rng):
        c = self.config
        kh, kw = c.kernel
        ch, H, W = c.input_shape
        for k, out in enumerate(c.conv_channels):
            self.params[f"conv{k}.W"] = glorot(rng, (out, ch, kh, kw), ch * kh * kw, out * kh * kw)
            self.params[f"conv{k}.b"] = np.zeros(out)
            ch, H, W = out, H // 2, W // 2
            if H < 1 or W < 1:
                raise ShapeError("too many pooling stages for the input shape")
        flat = ch * H * W
        self.params["dense0.W"] = glorot(rng, (flat, c.dense_hidden), flat, c.dense_hidden)
        self.params["dense0.b"] = np.zeros(c.dense_hidden)
        self.params["dense1.W"] = glorot(rng, (c.dense_hidden, c.classes), c.dense_hidden, c.classes)
        self.params["dense1.b"] = np.zeros(c.classes)
        self._init_stats(c.input_shape[1])

    def forward(self, X, train=False, rng=None):
        c = self.config
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1:] != tuple(c.input_shape[1:]):
            raise ShapeError(f"accompaniment net expects (N, {c.input_shape[1]}, {c.input_shape[2]}), got {X.shape}")
        h = self._standardise(X)[:, None]
        convs = []
        for k in range(len(c.conv_channels)):
            h, cc = L.conv2d_forward(h, self.params[f"conv{k}.W"], self.params[f"conv{k}.b"])
            h, rm = L.relu_forward(h)
            h, pc = L.maxpool2d_forward(h)
            convs.append((cc, rm, pc))
        fshape = h.shape
        z = h.reshape(h.shape[0], -1)
        z, d0 = L.dense_forward(z, self.params["dense0.W"], self.params["dense0.b"])
        z, r0 = L.relu_forward(z)
        z, m0 = L.dropout_forward(z, c.dropout_rate, rng, train)
        z, d1 = L.dense_forward(z, self.params["dense1.W"], self.params["dense1.b"])
        return z, (convs, fshape, d0, r0, m0, d1)

    def backward(self, dlogits, cache):
        convs, fshape, d0, r0, m0, d1 = cache
        grads = {}
        dz, grads["dense1.W"], grads["dense1.b"] = L.dense_backward(dlogits, d1)
        dz = L.relu_backward(L.dropout_backward(dz, m0), r0)
        dz, grads["dense0.W"], grads["dense0.b"] = L.dense_backward(dz, d0)
        dh = dz.reshape(fshape)
        for k in reversed(range(len(convs))):
            cc, rm, pc = convs[k]
            dh = L.relu_backward(L.maxpool2d_backward(dh, pc), rm)
            dh, grads[f"conv{k}.W"], grads[f"conv{k}.b"] = L.conv2d_backward(dh, cc)
        return grads


class MLP(Network):
    """Fully connected ReLU network over flat feature vectors."""

    kind = "mlp"
    config_cls = MLPConfig
    _example_ndim = 1

    def _build(self, rng):
        c = self.config
        n_in = c.inputs
        for k, size in enumerate(tuple(c.hidden) + (c.classes,)):
            self.params[f"dense{k}.W"] = glorot(rng, (n_in, size), n_in, size)
            self.params[f"dense{k}.b"] = np.zeros(size)
            n_in = size

    def forward(self, X, train=False, rng=None):
        c = self.config
        z = np.asarray(X, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != c.inputs:
            raise ShapeError(f"mlp expects (N, {c.inputs}), got {z.shape}")
        caches = []
        n = len(c.hidden) + 1
        for k in range(n):
            z, dc = L.dense_forward(z, self.params[f"dense{k}.W"], self.params[f"dense{k}.b"])
            rm = dm = None
            if k < n - 1:
                z, rm = L.relu_forward(z)
                z, dm = L.dropout_forward(z, c.dropout_rate, rng, train)
            caches.append((dc, rm, dm))
        return z, caches

    def backward(self, dlogits, cache):
        grads = {}
        dz = dlogits
        for k in reversed(range(len(cache))):
            dc, rm, dm = cache[k]
            if rm is not None:
                dz = L.relu_backward(L.dropout_backward(dz, dm), rm)
            dz, grads[f"dense{k}.W"], grads[f"dense{k}.b"] = L.dense_backward(dz, dc)
        return grads


MODEL_KINDS = {cls.kind: cls for cls in (VocalNet, AccompNet, MLP)}


def build_model(kind, config=None, rng=None) -> Network:
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}") from None
    if isinstance(config, dict):
        config = cls.config_cls.from_dict(config)
    return cls(config, rng)


def _check_mfcc(mfcc):
    values = getattr(mfcc, "values", mfcc)
    return np.asarray(values, dtype=np.float64)


def forward_vocal(mfcc, net: VocalNet) -> np.ndarray:
    """Genre probabilities for one vocal-stem MFCC matrix."""
    return net.predict_proba(_check_mfcc(mfcc))


def forward_accomp(mfcc, net: AccompNet) -> np.ndarray:
    """Genre probabilities for one accompaniment-stem MFCC matrix."""
    return net.predict_proba(_check_mfcc(mfcc))
