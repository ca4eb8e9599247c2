"""Frame-level acoustic models (DNN, RNN, ConvNet) and their training loops.

All models end in 88 sigmoid units giving independent pitch probabilities.
The loss is the mean over frames of the summed per-pitch Bernoulli
cross-entropy, in nats.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import serialize
from .features import context_window
from .numerics import (Adadelta, ConvLayer, DenseLayer, DimensionError,
                       RecurrentLayer, SgdMomentum, check_finite,
                       dropout_mask)

N_PITCHES = 88


@dataclass
class AcousticConfig:
    kind: str = "dnn"                    # dnn | rnn | convnet
    input_dim: int = 252
    n_layers: int = 3
    n_hidden: int = 125
    hidden_act: str = "sigmoid"          # dnn hidden activation
    window: int = 7                      # convnet context window (frames)
    conv_channels: tuple = (50, 50)
    conv_kernels: tuple = ((5, 25), (3, 5))
    conv_pools: tuple = ((1, 3), (1, 3))
    fc_sizes: tuple = (1000, 200)
    dropout: float = 0.0
    optimizer: str = "adadelta"          # adadelta | sgd-momentum
    lr0: float = 0.001
    lr_horizon: int = 1000
    momentum: float = 0.9
    clip_norm: float | None = None
    batch_size: int = 100
    subsequence: int = 100               # rnn training chunk length
    patience: int = 20
    max_epochs: int = 200
    seed: int = 0

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        cfg = cls()
        for k, v in d.items():
            cur = getattr(cfg, k)
            if isinstance(cur, tuple):
                v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
            setattr(cfg, k, v)
        return cfg

    @classmethod
    def standard_defaults(cls, kind, **overrides):
        """Best-performing architectures: DNN L=3 H=125, RNN L=2 H=200,
        ConvNet window 7 with (5,25)+(3,5) kernels, 50 maps, FC 1000/200."""
        base = {
            "dnn": dict(kind="dnn", n_layers=3, n_hidden=125, dropout=0.3,
                        optimizer="adadelta", batch_size=100),
            "rnn": dict(kind="rnn", n_layers=2, n_hidden=200,
                        optimizer="sgd-momentum", lr0=0.001, lr_horizon=1000,
                        momentum=0.9, clip_norm=5.0),
            "convnet": dict(kind="convnet", window=7, conv_channels=(50, 50),
                            conv_kernels=((5, 25), (3, 5)),
                            conv_pools=((1, 3), (1, 3)), fc_sizes=(1000, 200),
                            dropout=0.5, optimizer="sgd-momentum", lr0=0.01,
                            lr_horizon=1000, momentum=0.9, batch_size=256),
        }[kind]
        base.update(overrides)
        return cls(**base)


@dataclass
class Posteriogram:
    probs: np.ndarray
    frame_rate: float

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 2 or self.probs.shape[1] != N_PITCHES:
            raise ValueError("posteriogram must be T x 88")
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ValueError("probabilities must lie in [0, 1]")


@dataclass
class TrainingLog:
    train_nll: list = field(default_factory=list)
    valid_nll: list = field(default_factory=list)
    best_epoch: int = 0


def _bernoulli_output_loss(probs, targets):
    """(mean NLL per frame, gradient wrt output pre-activations / n_rows)."""
    eps = 1e-12
    p = np.clip(probs, eps, 1 - eps)
    nll = -(targets * np.log(p) + (1 - targets) * np.log(1 - p)).sum() / probs.shape[0]
    d_pre = (probs - targets) / probs.shape[0]
    return nll, d_pre


class DnnModel:
    """Frame-wise classifier: stacked dense layers + 88-sigmoid output."""

    kind = "dnn"

    def __init__(self, config, rng=None):
        self.config = config
        rng = rng or np.random.default_rng(config.seed)
        self.layers = []
        n_in = config.input_dim
        for _ in range(config.n_layers):
            self.layers.append(DenseLayer(n_in, config.n_hidden,
                                          act=config.hidden_act, rng=rng))
            n_in = config.n_hidden
        self.out = DenseLayer(n_in, N_PITCHES, act="sigmoid", rng=rng)

    def all_layers(self):
        return self.layers + [self.out]

    def params(self):
        out = {}
        for i, layer in enumerate(self.all_layers()):
            out.update(layer.params(f"l{i}."))
        return out

    def grads(self):
        out = {}
        for i, layer in enumerate(self.all_layers()):
            out.update(layer.grads(f"l{i}."))
        return out

    def zero_grads(self):
        for layer in self.all_layers():
            layer.zero_grads()

    def forward(self, x, dropout_rng=None):
        rate = self.config.dropout
        h = np.asarray(x, dtype=float)
        if dropout_rng is not None and rate > 0:
            h = h * dropout_mask(dropout_rng, h.shape, rate)
        self._masks = []
        for layer in self.layers:
            h = layer.forward(h)
            if dropout_rng is not None and rate > 0:
                mask = dropout_mask(dropout_rng, h.shape, rate)
                self._masks.append(mask)
                h = h * mask
            else:
                self._masks.append(None)
        return self.out.forward(h)

    def loss_and_grads(self, x, y, dropout_rng=None):
        self.zero_grads()
        probs = self.forward(x, dropout_rng=dropout_rng)
        nll, d_pre = _bernoulli_output_loss(probs, y)
        # output layer: sigmoid + CE collapse to (p - y) on pre-activations
        self.out.gW += d_pre.T @ self.out._x
        self.out.gb += d_pre.sum(axis=0)
        d = d_pre @ self.out.W
        for layer, mask in zip(reversed(self.layers), reversed(self._masks)):
            if mask is not None:
                d = d * mask
            d = layer.backward(d)
        return nll, self.grads()

    def predict(self, frames):
        return self.forward(frames)


class RnnModel:
    """Causal sequence classifier: stacked tanh recurrences + sigmoid output."""

    kind = "rnn"

    def __init__(self, config, rng=None):
        self.config = config
        rng = rng or np.random.default_rng(config.seed)
        self.layers = []
        n_in = config.input_dim
        for _ in range(config.n_layers):
            self.layers.append(RecurrentLayer(n_in, config.n_hidden, rng=rng))
            n_in = config.n_hidden
        self.out = DenseLayer(n_in, N_PITCHES, act="sigmoid", rng=rng)

    def params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"r{i}."))
        out.update(self.out.params("out."))
        return out

    def grads(self):
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.grads(f"r{i}."))
        out.update(self.out.grads("out."))
        return out

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()
        self.out.zero_grads()

    def forward(self, xs):
        h = np.asarray(xs, dtype=float)
        for layer in self.layers:
            h = layer.forward_sequence(h)
        return self.out.forward(h)

    def loss_and_grads(self, xs, ys):
        self.zero_grads()
        probs = self.forward(xs)
        nll, d_pre = _bernoulli_output_loss(probs, ys)
        self.out.gW += d_pre.T @ self.out._x
        self.out.gb += d_pre.sum(axis=0)
        d = d_pre @ self.out.W
        for layer in reversed(self.layers):
            d = layer.backward_sequence(d)
        return nll, self.grads()

    def predict(self, frames):
        return self.forward(frames)


class ConvnetModel:
    """Context-window classifier: conv/pool stack + fully connected head."""

    kind = "convnet"

    def __init__(self, config, rng=None):
        self.config = config
        rng = rng or np.random.default_rng(config.seed)
        self.conv_layers = []
        n_ch = 1
        shape = (config.window, config.input_dim)
        for ch, kern, pool in zip(config.conv_channels, config.conv_kernels,
                                  config.conv_pools):
            layer = ConvLayer(n_ch, ch, kern, pool=pool, rng=rng)
            shape = layer.output_shape(shape)
            if shape[0] < 1 or shape[1] < 1:
                raise DimensionError(
                    f"conv stack collapses feature map to {shape}")
            self.conv_layers.append(layer)
            n_ch = ch
        self.flat_dim = n_ch * shape[0] * shape[1]
        self.fc_layers = []
        n_in = self.flat_dim
        for size in config.fc_sizes:
            self.fc_layers.append(DenseLayer(n_in, size, act="sigmoid", rng=rng))
            n_in = size
        self.out = DenseLayer(n_in, N_PITCHES, act="sigmoid", rng=rng)

    def params(self):
        out = {}
        for i, layer in enumerate(self.conv_layers):
            out.update(layer.params(f"c{i}."))
        for i, layer in enumerate(self.fc_layers):
            out.update(layer.params(f"f{i}."))
        out.update(self.out.params("out."))
        return out

    def grads(self):
        out = {}
        for i, layer in enumerate(self.conv_layers):
            out.update(layer.grads(f"c{i}."))
        for i, layer in enumerate(self.fc_layers):
            out.update(layer.grads(f"f{i}."))
        out.update(self.out.grads("out."))
        return out

    def zero_grads(self):
        for layer in self.conv_layers + self.fc_layers + [self.out]:
            layer.zero_grads()

    def forward(self, windows, dropout_rng=None):
        """windows: (batch, window, input_dim) context blocks."""
        rate = self.config.dropout
        h = np.asarray(windows, dtype=float)[:, None, :, :]
        self._conv_masks = []
        self._fc_masks = []
        for layer in self.conv_layers:
            h = layer.forward(h)
            if dropout_rng is not None and rate > 0:
                mask = dropout_mask(dropout_rng, h.shape, rate)
                self._conv_masks.append(mask)
                h = h * mask
            else:
                self._conv_masks.append(None)
        self._conv_out_shape = h.shape
        h = h.reshape(h.shape[0], -1)
        for layer in self.fc_layers:
            h = layer.forward(h)
            if dropout_rng is not None and rate > 0:
                mask = dropout_mask(dropout_rng, h.shape, rate)
                self._fc_masks.append(mask)
                h = h * mask
            else:
                self._fc_masks.append(None)
        return self.out.forward(h)

    def loss_and_grads(self, windows, ys, dropout_rng=None):
        self.zero_grads()
        probs = self.forward(windows, dropout_rng=dropout_rng)
        nll, d_pre = _bernoulli_output_loss(probs, ys)
        self.out.gW += d_pre.T @ self.out._x
        self.out.gb += d_pre.sum(axis=0)
        d = d_pre @ self.out.W
        for layer, mask in zip(reversed(self.fc_layers), reversed(self._fc_masks)):
            if mask is not None:
                d = d * mask
            d = layer.backward(d)
        d = d.reshape(self._conv_out_shape)
        for layer, mask in zip(reversed(self.conv_layers), reversed(self._conv_masks)):
            if mask is not None:
                d = d * mask
            d = layer.backward(d)
        return nll, self.grads()

    def predict(self, frames):
        windows = _frames_to_windows(frames, self.config.window)
        chunks = []
        for start in range(0, windows.shape[0], 512):
            chunks.append(self.forward(windows[start:start + 512]))
        return np.concatenate(chunks, axis=0)


def _frames_to_windows(frames, window):
    from .features import FeatureSequence
    fs = FeatureSequence(np.asarray(frames, dtype=float), 1.0)
    return context_window(fs, window)


def build_acoustic(config):
    """Construct a seeded model from its config."""
    rng = np.random.default_rng(config.seed)
    cls = {"dnn": DnnModel, "rnn": RnnModel, "convnet": ConvnetModel}.get(config.kind)
    if cls is None:
        raise ValueError(f"unknown acoustic model kind {config.kind!r}")
    return cls(config, rng=rng)


def parameter_count(model):
    return sum(p.size for p in model.params().values())


def predict_posteriogram(model, fs):
    """Run the model over a standardized FeatureSequence."""
    if fs.dim != model.config.input_dim:
        raise DimensionError(
            f"feature dim {fs.dim} != model input dim {model.config.input_dim}")
    probs = model.predict(fs.frames)
    return Posteriogram(probs, fs.frame_rate)


# ---------------------------------------------------------------------------
# training

class DataError(ValueError):
    pass


def _make_optimizer(config):
    if config.optimizer == "adadelta":
        return Adadelta(clip_norm=config.clip_norm)
    if config.optimizer == "sgd-momentum":
        return SgdMomentum(config.lr0, config.lr_horizon,
                           momentum=config.momentum, clip_norm=config.clip_norm)
    raise ValueError(f"unknown optimizer {config.optimizer!r}")


def _check_pairs(pairs, what):
    for i, (fs, roll) in enumerate(pairs):
        nf = fs.frames.shape[0] if hasattr(fs, "frames") else fs.shape[0]
        nr = roll.frames.shape[0] if hasattr(roll, "frames") else roll.shape[0]
        if nf != nr:
            raise DataError(
                f"{what} item {i}: {nf} feature frames vs {nr} label frames")


def _as_arrays(pairs):
    out = []
    for fs, roll in pairs:
        x = fs.frames if hasattr(fs, "frames") else np.asarray(fs, dtype=float)
        y = roll.frames if hasattr(roll, "frames") else np.asarray(roll)
        out.append((np.asarray(x, dtype=float), np.asarray(y, dtype=float)))
    return out


def train_acoustic(model, train, valid, config=None):
    """Train on (features, roll) pairs; returns the model restored to the
    best-validation epoch plus a per-epoch TrainingLog."""
    config = config or model.config
    _check_pairs(train, "train")
    _check_pairs(valid, "valid")
    train = _as_arrays(train)
    valid = _as_arrays(valid)
    rng = np.random.default_rng(config.seed + 1)
    opt = _make_optimizer(config)
    log = TrainingLog()
    best_nll = np.inf
    best_params = None
    bad_epochs = 0

    if model.kind == "rnn":
        chunks = []
        for x, y in train:
            for start in range(0, x.shape[0], config.subsequence):
                cx = x[start:start + config.subsequence]
                cy = y[start:start + config.subsequence]
                if cx.shape[0] >= 2:
                    chunks.append((cx, cy))

        def epoch_pass():
            total, count = 0.0, 0
            for idx in rng.permutation(len(chunks)):
                cx, cy = chunks[idx]
                loss, grads = model.loss_and_grads(cx, cy)
                check_finite(loss, grads)
                opt.update(model.params(), grads)
                total += loss * cx.shape[0]
                count += cx.shape[0]
            return total / count

        def valid_nll():
            total = sum(_eval_nll(model.forward(x), y) for x, y in valid)
            return total / sum(x.shape[0] for x, _ in valid)
    else:
        if model.kind == "convnet":
            xs = np.concatenate(
                [_frames_to_windows(x, config.window) for x, _ in train], axis=0)
            vxs = [(_frames_to_windows(x, config.window), y) for x, y in valid]
        else:
            xs = np.concatenate([x for x, _ in train], axis=0)
            vxs = valid
        ys = np.concatenate([y for _, y in train], axis=0)

        def epoch_pass():
            order = rng.permutation(xs.shape[0])
            total = 0.0
            for start in range(0, xs.shape[0], config.batch_size):
                sel = order[start:start + config.batch_size]
                loss, grads = model.loss_and_grads(
                    xs[sel], ys[sel], dropout_rng=rng)
                check_finite(loss, grads)
                opt.update(model.params(), grads)
                total += loss * sel.size
            return total / xs.shape[0]

        def valid_nll():
            total, count = 0.0, 0
            for vx, vy in vxs:
                for start in range(0, vx.shape[0], 512):
                    probs = model.forward(vx[start:start + 512])
                    total += _eval_nll(probs, vy[start:start + 512])
                    count += min(512, vx.shape[0] - start)
            return total / count

    for epoch in range(config.max_epochs):
        log.train_nll.append(epoch_pass())
        v_nll = valid_nll()
        if not math.isfinite(v_nll):
            raise DataError(f"non-finite validation loss at epoch {epoch}")
        log.valid_nll.append(v_nll)
        if v_nll < best_nll:
            best_nll = v_nll
            best_params = {k: v.copy() for k, v in model.params().items()}
            log.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    if best_params is not None:
        for k, v in model.params().items():
            v[...] = best_params[k]
    return model, log


def _eval_nll(probs, targets):
    eps = 1e-12
    p = np.clip(probs, eps, 1 - eps)
    return -(targets * np.log(p) + (1 - targets) * np.log(1 - p)).sum()


# ---------------------------------------------------------------------------
# serialization

def save_acoustic(path, model, standardizer=None):
    """Write the model (and optionally its feature standardizer) as PSNN."""
    config = {"model": "acoustic", "config": model.config.to_dict()}
    arrays = sorted(model.params().items())
    if standardizer is not None:
        arrays += [("std.mean", standardizer.mean), ("std.std", standardizer.std)]
    serialize.write_model(path, config, arrays)


def load_acoustic(path):
    """Returns (model, standardizer-or-None)."""
    from .features import Standardizer
    config, arrays = serialize.read_model(path)
    if config.get("model") != "acoustic":
        raise ValueError(f"not an acoustic model container: {config!r}")
    model = build_acoustic(AcousticConfig.from_dict(config["config"]))
    values = dict(arrays)
    for name, p in model.params().items():
        p[...] = values[name]
    standardizer = None
    if "std.mean" in values:
        standardizer = Standardizer(values["std.mean"], values["std.std"])
    return model, standardizer
