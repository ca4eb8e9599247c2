"""Autoregressive note-combination priors: NADE and the RNN-conditioned NADE.

A Nade factorizes P(v) over pitch indices in ascending order (index 0 =
A0): h_i = sigmoid(W[:, <i] v_<i + b_h), P(v_i = 1 | v_<i) =
sigmoid(V[i] h_i + b_v[i]). The RnnNade shares W and V across time and
emits per-step biases b_v + W1 h_t and b_h + W2 h_t from a tanh
recurrent layer driven by the previously emitted frame.
"""

from dataclasses import dataclass

import numpy as np

from . import serialize
from .numerics import (RecurrentLayer, SgdMomentum, check_finite,
                       clip_gradients, glorot_uniform, sigmoid)


class Nade:
    """Distribution over D-bit vectors with a fixed conditioning order."""

    def __init__(self, dim, n_hidden, rng=None):
        if rng is None:
            self.W = np.zeros((n_hidden, dim))
            self.V = np.zeros((dim, n_hidden))
        else:
            self.W = glorot_uniform(rng, n_hidden, dim)
            self.V = glorot_uniform(rng, dim, n_hidden)
        self.b_h = np.zeros(n_hidden)
        self.b_v = np.zeros(dim)

    @property
    def dim(self):
        return self.V.shape[0]

    @property
    def n_hidden(self):
        return self.W.shape[0]

    def with_biases(self, b_v, b_h):
        """Shallow copy sharing W, V but with the given biases."""
        out = Nade.__new__(Nade)
        out.W = self.W
        out.V = self.V
        out.b_v = b_v
        out.b_h = b_h
        return out

    def conditionals(self, v):
        """P(v_i = 1 | v_<i) for each i, given the full vector v."""
        v = _check_binary(v, self.dim)
        probs = np.zeros(self.dim)
        a = self.b_h.copy()
        for i in range(self.dim):
            h = sigmoid(a)
            probs[i] = sigmoid(self.V[i] @ h + self.b_v[i])
            a += self.W[:, i] * v[i]
        return probs

    def log_prob(self, v):
        v = _check_binary(v, self.dim)
        p = self.conditionals(v)
        return float(np.sum(v * np.log(p) + (1 - v) * np.log1p(-p)))

    def log_prob_batch(self, vs):
        """Log probability of each row of vs (N, D)."""
        vs = np.asarray(vs, dtype=float)
        n = vs.shape[0]
        # a[:, :, i] = b_h + sum_{j<i} v_j W[:, j], via a shifted cumsum
        a = np.empty((n, self.n_hidden, self.dim))
        a[:, :, 0] = 0.0
        np.cumsum(vs[:, None, :-1] * self.W[None, :, :-1], axis=2,
                  out=a[:, :, 1:])
        a += self.b_h[:, None]
        h = sigmoid(a)
        p = sigmoid(np.einsum("nhd,dh->nd", h, self.V) + self.b_v)
        return np.sum(vs * np.log(p) + (1 - vs) * np.log1p(-p), axis=1)

    def sample(self, rng, n=None):
        """Ancestral sample(s) in pitch-index order.

        Returns one D-vector, or an (n, D) matrix when n is given.
        """
        rows = 1 if n is None else n
        v = np.zeros((rows, self.dim), dtype=np.uint8)
        a = np.broadcast_to(self.b_h, (rows, self.n_hidden)).copy()
        for i in range(self.dim):
            h = sigmoid(a)
            p = sigmoid(h @ self.V[i] + self.b_v[i])
            v[:, i] = rng.random(rows) < p
            a += np.outer(v[:, i], self.W[:, i])
        return v[0] if n is None else v


def _check_binary(v, dim):
    v = np.asarray(v, dtype=float)
    if v.shape != (dim,):
        raise ValueError(f"expected vector of length {dim}, got {v.shape}")
    if not np.isin(v, (0.0, 1.0)).all():
        raise ValueError("input must be binary")
    return v


def nade_log_prob(n, v):
    return n.log_prob(v)


def nade_sample(n, rng):
    return n.sample(rng)


def _nade_nll_grads(nade, vs, b_v_rows=None, b_h_rows=None):
    """Summed NLL and gradients for a batch of rows.

    Optional per-row bias overrides (RNN conditioning). Returns
    (nll, gW, gV, g_bv_rows, g_bh_rows) where the bias gradients are
    per-row matrices.
    """
    vs = np.asarray(vs, dtype=float)
    n_rows, dim = vs.shape
    H = nade.n_hidden
    bh = np.broadcast_to(nade.b_h, (n_rows, H)) if b_h_rows is None else b_h_rows
    bv = np.broadcast_to(nade.b_v, (n_rows, dim)) if b_v_rows is None else b_v_rows

    a = bh.copy()
    hs = np.zeros((dim, n_rows, H))
    probs = np.zeros((n_rows, dim))
    for i in range(dim):
        h = sigmoid(a)
        hs[i] = h
        probs[:, i] = sigmoid(h @ nade.V[i] + bv[:, i])
        a += vs[:, i:i + 1] * nade.W[None, :, i]

    nll = -np.sum(vs * np.log(probs) + (1 - vs) * np.log1p(-probs))

    d = probs - vs                      # (n_rows, dim): d NLL / d pre-sigmoid
    gW = np.zeros_like(nade.W)
    gV = np.zeros_like(nade.V)
    carry = np.zeros((n_rows, H))       # d NLL / d a_{i+1}
    for i in range(dim - 1, -1, -1):
        gW[:, i] = (carry * vs[:, i:i + 1]).sum(axis=0)
        gV[i] = d[:, i] @ hs[i]
        carry += d[:, i:i + 1] * nade.V[i][None, :] * hs[i] * (1.0 - hs[i])
    return nll, gW, gV, d, carry


class MlmState:
    """Value object: recurrent hidden vector plus the last emitted frame."""

    __slots__ = ("hidden", "last_frame")

    def __init__(self, hidden, last_frame):
        self.hidden = hidden
        self.last_frame = last_frame


class RnnNade:
    """Sequence model: P(y_t | y_0^{t-1}) as an RNN-conditioned NADE."""

    def __init__(self, dim=88, n_rnn=200, n_nade=150, rng=None):
        self.rnn = RecurrentLayer(dim, n_rnn, rng=rng)
        self.nade = Nade(dim, n_nade, rng=rng)
        # zero init keeps the initial conditionals at the base NADE
        self.W1 = np.zeros((dim, n_rnn))
        self.W2 = np.zeros((n_nade, n_rnn))

    @property
    def dim(self):
        return self.nade.dim

    def initial_state(self):
        return MlmState(np.zeros(self.rnn.n_hidden), np.zeros(self.dim))

    def conditional(self, state):
        """The NADE over y_t given the current state."""
        b_v = self.nade.b_v + self.W1 @ state.hidden
        b_h = self.nade.b_h + self.W2 @ state.hidden
        return self.nade.with_biases(b_v, b_h)

    def advance(self, state, y):
        y = _check_binary(y, self.dim)
        hidden = self.rnn.step(y, state.hidden)
        return MlmState(hidden, y.copy())

    # ------------------------------------------------------------------
    # training

    def params(self):
        out = self.rnn.params("rnn.")
        out.update({"nade.W": self.nade.W, "nade.V": self.nade.V,
                    "nade.b_h": self.nade.b_h, "nade.b_v": self.nade.b_v,
                    "W1": self.W1, "W2": self.W2})
        return out

    def sequence_nll(self, ys):
        """Mean per-frame NLL of a (T, D) binary sequence."""
        ys = np.asarray(ys, dtype=float)
        T = ys.shape[0]
        inputs = np.vstack([np.zeros(self.dim), ys[:-1]])
        hidden = self.rnn.forward_sequence(inputs)
        bv = self.nade.b_v + hidden @ self.W1.T
        bh = self.nade.b_h + hidden @ self.W2.T
        nll, *_ = _nade_nll_grads(self.nade, ys, b_v_rows=bv, b_h_rows=bh)
        return nll / T

    def loss_and_grads(self, ys):
        """Mean per-frame NLL and gradients over one (T, D) sequence."""
        ys = np.asarray(ys, dtype=float)
        T = ys.shape[0]
        self.rnn.zero_grads()
        inputs = np.vstack([np.zeros(self.dim), ys[:-1]])
        hidden = self.rnn.forward_sequence(inputs)           # (T, n_rnn)
        bv = self.nade.b_v + hidden @ self.W1.T
        bh = self.nade.b_h + hidden @ self.W2.T
        nll, gW, gV, g_bv_rows, g_bh_rows = _nade_nll_grads(
            self.nade, ys, b_v_rows=bv, b_h_rows=bh)
        d_hidden = g_bv_rows @ self.W1 + g_bh_rows @ self.W2
        self.rnn.backward_sequence(d_hidden)
        grads = {k: v / T for k, v in self.rnn.grads("rnn.").items()}
        grads.update({
            "nade.W": gW / T, "nade.V": gV / T,
            "nade.b_h": g_bh_rows.sum(axis=0) / T,
            "nade.b_v": g_bv_rows.sum(axis=0) / T,
            "W1": g_bv_rows.T @ hidden / T,
            "W2": g_bh_rows.T @ hidden / T,
        })
        return nll / T, grads

    # ------------------------------------------------------------------
    # serialization

    ARRAY_ORDER = ("rnn.Wf", "rnn.Wr", "rnn.b", "nade.W", "nade.V",
                   "nade.b_h", "nade.b_v", "W1", "W2")

    def to_container(self):
        config = {"model": "rnn-nade", "dim": self.dim,
                  "n_rnn": self.rnn.n_hidden, "n_nade": self.nade.n_hidden}
        params = self.params()
        return config, [(tag, params[tag]) for tag in self.ARRAY_ORDER]

    @classmethod
    def from_container(cls, config, arrays):
        if config.get("model") != "rnn-nade":
            raise ValueError(f"not an RNN-NADE container: {config!r}")
        model = cls(dim=config["dim"], n_rnn=config["n_rnn"],
                    n_nade=config["n_nade"])
        values = dict(arrays)
        params = model.params()
        for tag in cls.ARRAY_ORDER:
            params[tag][...] = values[tag]
        return model

    def save(self, path):
        config, arrays = self.to_container()
        serialize.write_model(path, config, arrays)

    @classmethod
    def load(cls, path):
        return cls.from_container(*serialize.read_model(path))


def mlm_initial_state(m):
    return m.initial_state()


def mlm_conditional(m, s):
    return m.conditional(s)


def mlm_advance(m, s, y):
    return m.advance(s, y)


@dataclass
class TrainingLog:
    train_nll: list
    valid_nll: list
    best_epoch: int


def train_mlm(sequences, valid_sequences, n_rnn=200, n_nade=150, seed=0,
              lr0=0.001, horizon=1000, momentum=0.9, clip_norm=5.0,
              subsequence=100, patience=20, max_epochs=200):
    """Train an RnnNade on binary rolls (arrays or PianoRoll frames).

    SGD one subsequence at a time, linear learning-rate decay, gradient
    clipping, early stopping on held-out mean per-frame NLL.
    """
    train = [np.asarray(getattr(s, "frames", s), dtype=float) for s in sequences]
    valid = [np.asarray(getattr(s, "frames", s), dtype=float) for s in valid_sequences]
    if not train:
        raise ValueError("empty training corpus")
    if not valid:
        raise ValueError("empty validation corpus")
    dim = train[0].shape[1]
    rng = np.random.default_rng(seed)
    model = RnnNade(dim=dim, n_rnn=n_rnn, n_nade=n_nade, rng=rng)
    opt = SgdMomentum(lr0, horizon, momentum=momentum, clip_norm=clip_norm)

    chunks = []
    for seq in train:
        for start in range(0, seq.shape[0], subsequence):
            chunk = seq[start:start + subsequence]
            if chunk.shape[0] >= 2:
                chunks.append(chunk)

    def corpus_nll(seqs):
        total = sum(model.sequence_nll(s) * s.shape[0] for s in seqs)
        return total / sum(s.shape[0] for s in seqs)

    log = TrainingLog([], [], 0)
    best_nll = np.inf
    best_params = None
    bad_epochs = 0
    for epoch in range(max_epochs):
        order = rng.permutation(len(chunks))
        epoch_nll = 0.0
        for idx in order:
            loss, grads = model.loss_and_grads(chunks[idx])
            check_finite(loss, grads, where=f"mlm epoch {epoch}")
            opt.update(model.params(), grads)
            epoch_nll += loss
        log.train_nll.append(epoch_nll / max(len(chunks), 1))
        v_nll = corpus_nll(valid)
        log.valid_nll.append(v_nll)
        if v_nll < best_nll:
            best_nll = v_nll
            best_params = {k: v.copy() for k, v in model.params().items()}
            log.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= patience:
                break
        if opt.iteration >= horizon:
            break
    if best_params is not None:
        for k, v in model.params().items():
            v[...] = best_params[k]
    return model, log
