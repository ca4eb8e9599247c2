"""Posteriogram to binary piano roll: thresholding, per-pitch HMM Viterbi,
and the hybrid hashed beam-search decoder.

The hybrid score of a candidate frame y' given history s is
log P_mlm(y'|s) + log P_acoustic(y'|x_t) - log P_marginal(y'), summed
over frames; the marginal term factorizes over pitches.
"""

from dataclasses import dataclass
from functools import cmp_to_key as _cmp_key
from itertools import islice

import numpy as np

from .beam import (BeamEntry, HashedBeam, bernoulli_log_prob, clamp_probs,
                   cmp_entries, hash_last_n, top_k_configs)
from .pianoroll import N_PITCHES, PianoRoll

DEFAULT_BEAM_WIDTH = 10
DEFAULT_BRANCH = 4
DEFAULT_CHAIN = 2
DEFAULT_HASH_FRAMES = 1


class EmptyCorpusError(ValueError):
    pass


# ---------------------------------------------------------------------------
# thresholding

def fit_threshold(posteriograms, ground_truth_rolls):
    """Grid-search theta in {0.00, 0.01, ..., 1.00} maximizing the corpus
    frame F-measure; ties resolve to the lowest theta."""
    if not posteriograms:
        raise EmptyCorpusError("no posteriograms given")
    probs = np.concatenate([pg.probs for pg in posteriograms], axis=0)
    truth = np.concatenate(
        [r.frames.astype(bool) for r in ground_truth_rolls], axis=0)
    best_theta, best_f = 0.0, -1.0
    for step in range(101):
        theta = step / 100.0
        # >= here: theta 0.0 marks everything active, so a perfectly
        # separable corpus picks 0.01 rather than degenerating to 0.0
        pred = probs >= theta
        tp = np.count_nonzero(pred & truth)
        fp = np.count_nonzero(pred & ~truth)
        fn = np.count_nonzero(~pred & truth)
        f = 2.0 * tp / (2.0 * tp + fp + fn) if tp else 0.0
        if f > best_f:
            best_f, best_theta = f, theta
    return best_theta


def threshold_decode(pg, theta):
    """Pitches with probability strictly greater than theta become 1."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return PianoRoll((pg.probs > theta).astype(np.uint8), pg.frame_rate)


# ---------------------------------------------------------------------------
# pitch marginals

@dataclass
class PitchMarginals:
    p: np.ndarray  # 88 probabilities of a pitch being active

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.shape != (N_PITCHES,):
            raise ValueError("marginals must have 88 entries")
        if np.any(self.p <= 0) or np.any(self.p >= 1):
            raise ValueError("marginals must lie strictly inside (0, 1)")

    @classmethod
    def uniform(cls):
        return cls(np.full(N_PITCHES, 0.5))

    @classmethod
    def from_rolls(cls, rolls):
        """Add-one smoothed per-pitch occupancy over training rolls."""
        if not rolls:
            raise EmptyCorpusError("no rolls given")
        active = sum(r.frames.sum(axis=0, dtype=float) for r in rolls)
        total = sum(r.n_frames for r in rolls)
        return cls((active + 1.0) / (total + 2.0))

    def log_prob(self, config):
        return bernoulli_log_prob(self.p, config)


# ---------------------------------------------------------------------------
# per-pitch HMM smoothing

@dataclass
class PitchHmm:
    transitions: np.ndarray  # 2x2, rows (from off/on) sum to 1
    prior: np.ndarray        # stationary occupancy (off, on)

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.prior = np.asarray(self.prior, dtype=float)
        if self.transitions.shape != (2, 2) or self.prior.shape != (2,):
            raise ValueError("bad HMM shapes")
        if not np.allclose(self.transitions.sum(axis=1), 1.0):
            raise ValueError("transition rows must sum to 1")


def fit_pitch_hmms(rolls):
    """88 two-state HMMs from add-one smoothed counts over ground truth."""
    if not rolls:
        raise EmptyCorpusError("no rolls given")
    trans = np.ones((N_PITCHES, 2, 2))       # add-one smoothing
    occ = np.ones((N_PITCHES, 2))
    for roll in rolls:
        frames = roll.frames
        occ[:, 1] += frames.sum(axis=0)
        occ[:, 0] += frames.shape[0] - frames.sum(axis=0)
        prev = frames[:-1].astype(int)
        cur = frames[1:].astype(int)
        for a in (0, 1):
            for b in (0, 1):
                trans[:, a, b] += ((prev == a) & (cur == b)).sum(axis=0)
    trans /= trans.sum(axis=2, keepdims=True)
    occ /= occ.sum(axis=1, keepdims=True)
    return [PitchHmm(trans[i], occ[i]) for i in range(N_PITCHES)]


def _viterbi_two_state(emit_log, trans_log, prior_log):
    """emit_log: (T, 2) log emission scores. Returns the argmax path."""
    T = emit_log.shape[0]
    delta = prior_log + emit_log[0]
    back = np.zeros((T, 2), dtype=np.int8)
    for t in range(1, T):
        scores = delta[:, None] + trans_log          # (from, to)
        back[t] = scores.argmax(axis=0)
        delta = scores.max(axis=0) + emit_log[t]
    path = np.zeros(T, dtype=np.uint8)
    path[-1] = delta.argmax()
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def hmm_decode(pg, hmms):
    """Independent per-pitch Viterbi with scaled-likelihood emissions
    P(y=q|x) / P(y=q)."""
    probs = clamp_probs(pg.probs)
    T = probs.shape[0]
    out = np.zeros((T, N_PITCHES), dtype=np.uint8)
    for i, hmm in enumerate(hmms):
        p_on = probs[:, i]
        prior = np.clip(hmm.prior, 1e-12, None)
        emit = np.stack([(1.0 - p_on) / prior[0], p_on / prior[1]], axis=1)
        out[:, i] = _viterbi_two_state(
            np.log(emit), np.log(np.clip(hmm.transitions, 1e-12, None)),
            np.log(prior))
    return PianoRoll(out, pg.frame_rate)


# ---------------------------------------------------------------------------
# hybrid hashed beam search

def _marginal_log_terms(marginals):
    p = np.clip(marginals.p, 1e-12, 1 - 1e-12)
    return np.log(p), np.log1p(-p)


def _decode_beam(pg, mlm, marginals, width, branch, chain, hash_frames,
                 use_hash=True):
    """Shared core of hybrid and legacy decoding.

    hash_frames=None hashes the full sequence. With use_hash=False the
    frontier is a plain width-bounded list (no per-key pruning).
    """
    if width < 1 or branch < 1 or chain < 1:
        raise ValueError("width, branch and chain must be >= 1")
    probs = clamp_probs(pg.probs)
    T = probs.shape[0]
    lm0, lm1 = _marginal_log_terms(marginals)
    root = BeamEntry(0.0, None, None, mlm_state=mlm.initial_state())
    beam = [root]
    for t in range(T):
        candidates = list(islice(top_k_configs(probs[t]), branch))
        survivors = _expand_frame(beam, candidates, lm0, lm1, mlm,
                                  width, chain, hash_frames, use_hash)
        if not survivors:
            raise RuntimeError(f"beam emptied at frame {t}")
        for entry in survivors:
            entry.mlm_state = mlm.advance(entry.parent.mlm_state,
                                          np.asarray(entry.frame, dtype=float))
        beam = survivors
    best = beam[0]
    for entry in beam[1:]:
        if cmp_entries(entry, best) < 0:
            best = entry
    frames = np.array(best.frames(), dtype=np.uint8)
    return PianoRoll(frames, pg.frame_rate), best.score


def _expand_frame(beam, candidates, lm0, lm1, mlm, width, chain, hash_frames,
                  use_hash):
    configs = np.array([cfg for cfg, _ in candidates], dtype=float)
    marg_lp = configs @ lm0 + (1.0 - configs) @ lm1
    patterns = [tuple(int(b) for b in cfg) for cfg, _ in candidates]
    scored = []
    for entry in beam:
        cond = mlm.conditional(entry.mlm_state)
        mlm_lp = cond.log_prob_batch(configs)
        for j, (cfg, acoustic_lp) in enumerate(candidates):
            score = entry.score + float(mlm_lp[j]) + acoustic_lp - float(marg_lp[j])
            scored.append(BeamEntry(score, entry, patterns[j]))
    scored.sort(key=_cmp_key(cmp_entries))
    if not use_hash:
        return scored[:width]
    frontier = HashedBeam(width, chain, lambda e: hash_last_n(e, hash_frames))
    for cand in scored:
        frontier.insert(cand)
    return frontier.entries()


def hybrid_decode(pg, mlm, marginals=None, width=DEFAULT_BEAM_WIDTH,
                  branch=DEFAULT_BRANCH, chain=DEFAULT_CHAIN,
                  hash_frames=DEFAULT_HASH_FRAMES):
    """Hashed high dimensional beam search; returns (roll, total log score).

    Per frame, every beam entry proposes its `branch` next-most-probable
    acoustic configurations; candidates are offered to a fresh hashed
    frontier of width `width` with `chain` entries per hash key of the
    last `hash_frames` frames (None hashes the whole sequence).
    """
    marginals = marginals or PitchMarginals.uniform()
    return _decode_beam(pg, mlm, marginals, width, branch, chain, hash_frames)


def legacy_beam_decode(pg, mlm, marginals=None, width=DEFAULT_BEAM_WIDTH,
                       branch=DEFAULT_BRANCH):
    """Plain beam search baseline: hybrid decoding where every distinct
    sequence is its own hash key (full-sequence hashing, depth 1)."""
    marginals = marginals or PitchMarginals.uniform()
    roll, score = _decode_beam(pg, mlm, marginals, width, branch, 1,
                               hash_frames=None)
    return roll, score
