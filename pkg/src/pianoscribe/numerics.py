"""Dense-tensor layers and optimizers for training the transcription models.

Everything runs in float64 on the CPU. Layers cache their forward-pass
inputs so that ``backward`` can be called immediately afterwards; gradients
accumulate into ``g<name>`` attributes until ``zero_grads`` is called.
"""

import numpy as np

EPS = 1e-12


class DimensionError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# activations

def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _act_apply(name, x):
    if name == "sigmoid":
        return sigmoid(x)
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "linear":
        return x
    raise ValueError(f"unknown activation {name!r}")


def _act_deriv(name, out):
    """Derivative of the activation expressed through its output value."""
    if name == "sigmoid":
        return out * (1.0 - out)
    if name == "tanh":
        return 1.0 - out * out
    if name == "relu":
        return (out > 0.0).astype(out.dtype)
    if name == "linear":
        return np.ones_like(out)
    raise ValueError(f"unknown activation {name!r}")


# ---------------------------------------------------------------------------
# initialization

def glorot_uniform(rng, n_out, n_in, shape=None, scale=1.0):
    """Uniform in +-sqrt(6/(fan_in+fan_out)), optionally rescaled."""
    limit = scale * np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (n_out, n_in))


# ---------------------------------------------------------------------------
# layers

class DenseLayer:
    """Fully connected layer: act(W x + b)."""

    def __init__(self, n_in, n_out, act="sigmoid", rng=None):
        if rng is None:
            self.W = np.zeros((n_out, n_in))
        else:
            self.W = glorot_uniform(rng, n_out, n_in)
        self.b = np.zeros(n_out)
        self.act = act
        self.zero_grads()

    def zero_grads(self):
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)

    def forward(self, x):
        """x: (batch, n_in) -> (batch, n_out)."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.W.shape[1]:
            raise DimensionError(
                f"dense input shape {x.shape} incompatible with W {self.W.shape}")
        self._x = x
        self._out = _act_apply(self.act, x @ self.W.T + self.b)
        return self._out

    def backward(self, d_out):
        """d_out: gradient wrt layer output; returns gradient wrt input."""
        d_pre = d_out * _act_deriv(self.act, self._out)
        self.gW += d_pre.T @ self._x
        self.gb += d_pre.sum(axis=0)
        return d_pre @ self.W

    def params(self, prefix=""):
        return {prefix + "W": self.W, prefix + "b": self.b}

    def grads(self, prefix=""):
        return {prefix + "W": self.gW, prefix + "b": self.gb}


class RecurrentLayer:
    """tanh recurrent layer: h_t = tanh(Wf x_t + Wr h_{t-1} + b)."""

    def __init__(self, n_in, n_hidden, rng=None):
        if rng is None:
            self.Wf = np.zeros((n_hidden, n_in))
            self.Wr = np.zeros((n_hidden, n_hidden))
        else:
            self.Wf = glorot_uniform(rng, n_hidden, n_in)
            self.Wr = glorot_uniform(rng, n_hidden, n_hidden, scale=0.1)
        self.b = np.zeros(n_hidden)
        self.zero_grads()

    @property
    def n_hidden(self):
        return self.Wr.shape[0]

    def zero_grads(self):
        self.gWf = np.zeros_like(self.Wf)
        self.gWr = np.zeros_like(self.Wr)
        self.gb = np.zeros_like(self.b)

    def step(self, x_t, h_prev):
        x_t = np.asarray(x_t, dtype=float)
        h_prev = np.asarray(h_prev, dtype=float)
        if x_t.shape[-1] != self.Wf.shape[1]:
            raise DimensionError(
                f"recurrent input dim {x_t.shape[-1]} != {self.Wf.shape[1]}")
        if h_prev.shape[-1] != self.n_hidden:
            raise DimensionError(
                f"hidden dim {h_prev.shape[-1]} != {self.n_hidden}")
        return np.tanh(x_t @ self.Wf.T + h_prev @ self.Wr.T + self.b)

    def forward_sequence(self, xs, h0=None):
        """xs: (T, n_in) -> hidden states (T, n_hidden)."""
        xs = np.asarray(xs, dtype=float)
        T = xs.shape[0]
        hs = np.zeros((T, self.n_hidden))
        h = np.zeros(self.n_hidden) if h0 is None else h0
        for t in range(T):
            h = self.step(xs[t], h)
            hs[t] = h
        self._xs = xs
        self._hs = hs
        self._h0 = np.zeros(self.n_hidden) if h0 is None else np.asarray(h0, dtype=float)
        return hs

    def backward_sequence(self, d_hs):
        """BPTT. d_hs: (T, n_hidden) gradient wrt each hidden state.

        Returns gradient wrt the input sequence (T, n_in).
        """
        xs, hs = self._xs, self._hs
        T = xs.shape[0]
        d_xs = np.zeros_like(xs)
        carry = np.zeros(self.n_hidden)
        for t in range(T - 1, -1, -1):
            e = d_hs[t] + carry
            g = e * (1.0 - hs[t] * hs[t])
            self.gWf += np.outer(g, xs[t])
            h_prev = hs[t - 1] if t > 0 else self._h0
            self.gWr += np.outer(g, h_prev)
            self.gb += g
            d_xs[t] = g @ self.Wf
            carry = g @ self.Wr
        return d_xs

    def params(self, prefix=""):
        return {prefix + "Wf": self.Wf, prefix + "Wr": self.Wr, prefix + "b": self.b}

    def grads(self, prefix=""):
        return {prefix + "Wf": self.gWf, prefix + "Wr": self.gWr, prefix + "b": self.gb}


def _im2col(x, kt, kf):
    """x: (batch, ch, H, W) -> (batch, H', W', ch*kt*kf) for valid windows."""
    b, c, H, W = x.shape
    Ho, Wo = H - kt + 1, W - kf + 1
    sb, sc, sh, sw = x.strides
    cols = np.lib.stride_tricks.as_strided(
        x, shape=(b, c, Ho, Wo, kt, kf), strides=(sb, sc, sh, sw, sh, sw))
    return cols.transpose(0, 2, 3, 1, 4, 5).reshape(b, Ho, Wo, c * kt * kf)


class ConvLayer:
    """Valid-mode 2-D cross-correlation + bias + activation + max pooling.

    Kernels: (out_ch, in_ch, kt, kf). Pooling is over non-overlapping
    (pool_t, pool_f) regions; trailing elements that do not fill a full
    pool window are truncated.
    """

    def __init__(self, n_in_ch, n_out_ch, kernel, pool=(1, 1), act="tanh", rng=None):
        kt, kf = kernel
        if kt < 1 or kf < 1:
            raise DimensionError("kernel dims must be positive")
        fan_in = n_in_ch * kt * kf
        fan_out = n_out_ch * kt * kf
        if rng is None:
            self.kernels = np.zeros((n_out_ch, n_in_ch, kt, kf))
        else:
            self.kernels = glorot_uniform(
                rng, fan_out, fan_in, shape=(n_out_ch, n_in_ch, kt, kf))
        self.biases = np.zeros(n_out_ch)
        self.pool = tuple(pool)
        self.act = act
        self.zero_grads()

    def zero_grads(self):
        self.gkernels = np.zeros_like(self.kernels)
        self.gbiases = np.zeros_like(self.biases)

    def output_shape(self, in_shape):
        """(H, W) of the pooled output given the input spatial shape."""
        H, W = in_shape
        kt, kf = self.kernels.shape[2:]
        if H < kt or W < kf:
            raise DimensionError(
                f"input {in_shape} smaller than kernel ({kt},{kf})")
        Ho, Wo = H - kt + 1, W - kf + 1
        pt, pf = self.pool
        return Ho // pt, Wo // pf

    def forward(self, x):
        """x: (batch, in_ch, H, W) -> (batch, out_ch, H'', W'')."""
        x = np.asarray(x, dtype=float)
        oc, ic, kt, kf = self.kernels.shape
        if x.shape[1] != ic:
            raise DimensionError(f"channel count {x.shape[1]} != {ic}")
        self.output_shape(x.shape[2:])
        cols = _im2col(x, kt, kf)                       # (b, Ho, Wo, ic*kt*kf)
        wmat = self.kernels.reshape(oc, -1)             # (oc, ic*kt*kf)
        pre = cols @ wmat.T + self.biases               # (b, Ho, Wo, oc)
        act = _act_apply(self.act, pre)
        b, Ho, Wo, _ = act.shape
        pt, pf = self.pool
        Hp, Wp = Ho // pt, Wo // pf
        trimmed = act[:, :Hp * pt, :Wp * pf, :]
        windows = trimmed.reshape(b, Hp, pt, Wp, pf, oc)
        pooled = windows.max(axis=(2, 4))               # (b, Hp, Wp, oc)
        self._x = x
        self._cols = cols
        self._act = act
        self._argmask = windows == pooled[:, :, None, :, None, :]
        out = pooled.transpose(0, 3, 1, 2)              # (b, oc, Hp, Wp)
        self._out = out
        return out

    def backward(self, d_out):
        """d_out: (batch, out_ch, Hp, Wp); returns gradient wrt input."""
        x = self._x
        oc, ic, kt, kf = self.kernels.shape
        b, _, Hp, Wp = d_out.shape
        pt, pf = self.pool
        d_pool = d_out.transpose(0, 2, 3, 1)            # (b, Hp, Wp, oc)
        # route through max: on ties, split gradient evenly (keeps the
        # analytic gradient equal to the symmetric finite difference)
        counts = self._argmask.sum(axis=(2, 4), keepdims=True)
        d_win = self._argmask * (d_pool[:, :, None, :, None, :] / counts)
        Ho, Wo = self._act.shape[1:3]
        d_act = np.zeros_like(self._act)
        d_act[:, :Hp * pt, :Wp * pf, :] = d_win.reshape(b, Hp * pt, Wp * pf, oc)
        d_pre = d_act * _act_deriv(self.act, self._act)
        flat = d_pre.reshape(-1, oc)                    # (b*Ho*Wo, oc)
        cols = self._cols.reshape(-1, ic * kt * kf)
        self.gkernels += (flat.T @ cols).reshape(oc, ic, kt, kf)
        self.gbiases += flat.sum(axis=0)
        # scatter back to input positions
        d_cols = flat @ self.kernels.reshape(oc, -1)    # (b*Ho*Wo, ic*kt*kf)
        d_cols = d_cols.reshape(b, Ho, Wo, ic, kt, kf)
        d_x = np.zeros_like(x)
        for dt in range(kt):
            for df in range(kf):
                d_x[:, :, dt:dt + Ho, df:df + Wo] += d_cols[:, :, :, :, dt, df].transpose(0, 3, 1, 2)
        return d_x

    def params(self, prefix=""):
        return {prefix + "kernels": self.kernels, prefix + "biases": self.biases}

    def grads(self, prefix=""):
        return {prefix + "kernels": self.gkernels, prefix + "biases": self.gbiases}


# ---------------------------------------------------------------------------
# functional wrappers

def dense_forward(x, layer):
    """Single-vector dense layer application: f(Wx + b)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (layer.W.shape[1],):
        raise DimensionError(f"expected input of length {layer.W.shape[1]}, got {x.shape}")
    return _act_apply(layer.act, layer.W @ x + layer.b)


def recurrent_step(x_t, h_prev, layer):
    """Single recurrent update: tanh(Wf x_t + Wr h_prev + b)."""
    return layer.step(x_t, h_prev)


def conv_forward(x, layer):
    """Convolve a stack of feature maps: (in_ch, H, W) -> (out_ch, H', W')."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    return layer.forward(x[None])[0]


# ---------------------------------------------------------------------------
# loss

def bernoulli_nll(probs, targets):
    """Mean over rows of summed per-unit cross-entropy, in nats."""
    p = np.clip(probs, EPS, 1.0 - EPS)
    ll = targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p)
    return -ll.sum() / probs.shape[0]


def clip_gradients(grads, threshold=5.0):
    """Rescale the gradient set so its global L2 norm is at most threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    sq = sum(float(np.sum(g * g)) for g in grads.values())
    norm = np.sqrt(sq)
    if norm > threshold:
        scale = threshold / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


# ---------------------------------------------------------------------------
# optimizers

class SgdMomentum:
    """SGD with constant momentum and a linear learning-rate decay.

    The rate starts at lr0 and reaches exactly 0 at `horizon` updates,
    staying 0 afterwards.
    """

    kind = "sgd-momentum"

    def __init__(self, lr0, horizon, momentum=0.9, clip_norm=None):
        self.lr0 = lr0
        self.horizon = horizon
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.iteration = 0
        self.velocity = {}

    def learning_rate(self):
        if self.iteration >= self.horizon:
            return 0.0
        return self.lr0 * (1.0 - self.iteration / self.horizon)

    def update(self, params, grads):
        if self.clip_norm is not None:
            grads = clip_gradients(grads, self.clip_norm)
        lr = self.learning_rate()
        for name, p in params.items():
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
            v = self.momentum * v - lr * grads[name]
            self.velocity[name] = v
            p += v
        self.iteration += 1


class Adadelta:
    """ADADELTA with the cited defaults rho=0.95, eps=1e-6."""

    kind = "adadelta"

    def __init__(self, rho=0.95, eps=1e-6, clip_norm=None):
        self.rho = rho
        self.eps = eps
        self.clip_norm = clip_norm
        self.iteration = 0
        self.acc_grad = {}
        self.acc_update = {}

    def update(self, params, grads):
        if self.clip_norm is not None:
            grads = clip_gradients(grads, self.clip_norm)
        for name, p in params.items():
            g = grads[name]
            eg = self.acc_grad.get(name)
            ed = self.acc_update.get(name)
            if eg is None:
                eg = np.zeros_like(p)
                ed = np.zeros_like(p)
            eg = self.rho * eg + (1.0 - self.rho) * g * g
            step = -np.sqrt(ed + self.eps) / np.sqrt(eg + self.eps) * g
            ed = self.rho * ed + (1.0 - self.rho) * step * step
            self.acc_grad[name] = eg
            self.acc_update[name] = ed
            p += step
        self.iteration += 1


def optimizer_update(params, grads, state):
    """Apply one optimizer step in place; `state` is SgdMomentum or Adadelta."""
    state.update(params, grads)
    return params, state


# ---------------------------------------------------------------------------
# dropout

def dropout_mask(rng, shape, rate):
    """Inverted-dropout mask: 0 with probability rate, else 1/(1-rate)."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def check_finite(loss, grads, where=""):
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss{' in ' + where if where else ''}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
