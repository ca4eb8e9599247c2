"""Frame-based and note-based precision/recall/accuracy/F-measure.

Frame metrics micro-aggregate TP/FP/FN over all frames and pitches.
Note metrics match predicted notes one-to-one to ground truth notes of
the same pitch whose onsets lie within an inclusive tolerance (50 ms by
default); offsets are ignored.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .pianoroll import PianoRoll

ONSET_TOLERANCE = 0.050


class FrameRateMismatchError(ValueError):
    pass


@dataclass
class MetricReport:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self):
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self):
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def accuracy(self):
        d = self.tp + self.fp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f_measure(self):
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r > 0 else 0.0

    def __add__(self, other):
        return MetricReport(self.tp + other.tp, self.fp + other.fp,
                            self.fn + other.fn)


def frame_metrics(pred, truth):
    """Micro-aggregated frame counts; lengths aligned by truncation."""
    if pred.frame_rate != truth.frame_rate:
        raise FrameRateMismatchError(
            f"frame rates differ ({pred.frame_rate} vs {truth.frame_rate}); "
            "resample one roll first")
    T = min(pred.n_frames, truth.n_frames)
    if pred.n_frames != truth.n_frames:
        warnings.warn(
            f"truncating to {T} frames ({pred.n_frames} vs {truth.n_frames})")
    p = pred.frames[:T].astype(bool)
    t = truth.frames[:T].astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return MetricReport(tp, fp, fn)


def resample_roll(roll, target_rate):
    """Nearest-frame hold: output frame t copies input frame
    round(t * in_rate / out_rate), clamped to range."""
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    if target_rate == roll.frame_rate:
        return roll
    T_out = int(np.ceil(roll.duration * target_rate))
    src = np.floor(np.arange(T_out) * roll.frame_rate / target_rate + 0.5)
    src = np.clip(src.astype(int), 0, roll.n_frames - 1)
    return PianoRoll(roll.frames[src], target_rate)


def note_metrics(pred, truth, onset_tol=ONSET_TOLERANCE):
    """Greedy one-to-one onset matching within an inclusive tolerance.

    Truth notes are visited in onset order; each claims the unmatched
    same-pitch prediction with the nearest onset.
    """
    matched_pred = set()
    tp = 0
    by_pitch = {}
    for j, note in enumerate(pred):
        by_pitch.setdefault(note.pitch, []).append(j)
    for note in sorted(truth, key=lambda n: (n.onset, n.pitch)):
        best_j, best_dist = None, None
        for j in by_pitch.get(note.pitch, ()):
            if j in matched_pred:
                continue
            dist = abs(pred[j].onset - note.onset)
            # small slack keeps the inclusive boundary inclusive under
            # floating-point subtraction (e.g. 1.05 - 1.0 > 0.05)
            if dist <= onset_tol + 1e-9 and (best_dist is None
                                             or dist < best_dist):
                best_j, best_dist = j, dist
        if best_j is not None:
            matched_pred.add(best_j)
            tp += 1
    fp = len(pred) - tp
    fn = len(truth) - tp
    return MetricReport(tp, fp, fn)


def corpus_report(reports):
    """Sum raw counts across tracks before computing the ratios."""
    total = MetricReport(0, 0, 0)
    for r in reports:
        total = total + r
    return total


def format_report_rows(rows):
    """rows: list of (label, frame MetricReport, note MetricReport)."""
    lines = ["track\tlevel\ttp\tfp\tfn\tprecision\trecall\taccuracy\tf_measure"]
    for label, frame, note in rows:
        for level, rep in (("frame", frame), ("note", note)):
            if rep is None:
                continue
            lines.append(
                f"{label}\t{level}\t{rep.tp}\t{rep.fp}\t{rep.fn}\t"
                f"{rep.precision:.4f}\t{rep.recall:.4f}\t"
                f"{rep.accuracy:.4f}\t{rep.f_measure:.4f}")
    return "\n".join(lines) + "\n"
