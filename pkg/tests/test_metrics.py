"""Frame and note scoring against hand-counted fixtures."""

import numpy as np
import pytest

from pianoscribe.metrics import (FrameRateMismatchError, MetricReport,
                                 corpus_report, format_report_rows,
                                 frame_metrics, note_metrics, resample_roll)
from pianoscribe.pianoroll import NoteEvent, PianoRoll

RATE = 100.0


def roll_from_cells(cells, T=10):
    frames = np.zeros((T, 88), dtype=np.uint8)
    for t, col in cells:
        frames[t, col] = 1
    return PianoRoll(frames, RATE)


class TestFrameMetrics:
    def test_perfect_prediction(self, rng):
        frames = (rng.random((20, 88)) < 0.2).astype(np.uint8)
        frames[0, 0] = 1
        rep = frame_metrics(PianoRoll(frames, RATE), PianoRoll(frames, RATE))
        assert rep.precision == rep.recall == rep.accuracy == rep.f_measure == 1.0

    def test_all_zero_prediction(self):
        pred = roll_from_cells([])
        truth = roll_from_cells([(0, 5), (1, 5)])
        rep = frame_metrics(pred, truth)
        assert (rep.precision, rep.recall, rep.f_measure) == (0.0, 0.0, 0.0)

    def test_hand_counted_two_one_one(self):
        # TP = {(0,5), (1,5)}; FP = {(2,6)}; FN = {(3,7)}
        pred = roll_from_cells([(0, 5), (1, 5), (2, 6)])
        truth = roll_from_cells([(0, 5), (1, 5), (3, 7)])
        rep = frame_metrics(pred, truth)
        assert (rep.tp, rep.fp, rep.fn) == (2, 1, 1)
        assert rep.precision == pytest.approx(2 / 3)
        assert rep.recall == pytest.approx(2 / 3)
        assert rep.accuracy == pytest.approx(1 / 2)
        assert rep.f_measure == pytest.approx(2 / 3)

    def test_swapping_arguments_swaps_p_and_r(self, rng):
        a = PianoRoll((rng.random((15, 88)) < 0.3).astype(np.uint8), RATE)
        b = PianoRoll((rng.random((15, 88)) < 0.3).astype(np.uint8), RATE)
        ab, ba = frame_metrics(a, b), frame_metrics(b, a)
        assert ab.precision == ba.recall and ab.recall == ba.precision

    def test_rate_mismatch(self):
        with pytest.raises(FrameRateMismatchError, match="resample"):
            frame_metrics(roll_from_cells([]),
                          PianoRoll(np.zeros((5, 88), dtype=np.uint8), 31.25))

    def test_length_mismatch_truncates_with_warning(self):
        pred = roll_from_cells([(0, 5)], T=10)
        truth = roll_from_cells([(0, 5), (11, 5)], T=12)
        with pytest.warns(UserWarning, match="10"):
            rep = frame_metrics(pred, truth)
        assert (rep.tp, rep.fp, rep.fn) == (1, 0, 0)

    def test_ordering_chain_invariant(self, rng):
        for _ in range(10):
            a = PianoRoll((rng.random((12, 88)) < 0.3).astype(np.uint8), RATE)
            b = PianoRoll((rng.random((12, 88)) < 0.3).astype(np.uint8), RATE)
            rep = frame_metrics(a, b)
            if rep.tp + rep.fp + rep.fn == 0:
                continue
            p, r, f, acc = (rep.precision, rep.recall, rep.f_measure,
                            rep.accuracy)
            assert 0.0 <= acc <= min(p, r) + 1e-12
            assert min(p, r) <= f + 1e-12 <= max(p, r) + 1e-12
            assert max(p, r) <= 1.0


class TestResampleRoll:
    def test_identity_at_same_rate(self, rng):
        roll = PianoRoll((rng.random((9, 88)) < 0.3).astype(np.uint8), RATE)
        assert resample_roll(roll, RATE) is roll

    def test_constant_roll_any_rate(self):
        frames = np.ones((10, 88), dtype=np.uint8)
        out = resample_roll(PianoRoll(frames, 31.25), 100.0)
        assert out.frames.all()
        assert out.frame_rate == 100.0
        assert out.n_frames == int(np.ceil(10 / 31.25 * 100.0))

    def test_round_trip_boundary_error_bound(self, rng):
        frames = np.zeros((60, 88), dtype=np.uint8)
        col = frames[:, 0]
        col[10:25] = 1
        col[40:55] = 1
        roll = PianoRoll(frames, 31.25)
        back = resample_roll(resample_roll(roll, 100.0), 31.25)
        diff = np.count_nonzero(back.frames[:60, 0] != col)
        assert diff <= 4  # two runs -> four boundaries, <=1 frame each

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            resample_roll(roll_from_cells([]), 0.0)


class TestNoteMetrics:
    def test_perfect(self):
        notes = [NoteEvent(60, 0.0, 1.0), NoteEvent(64, 0.5, 1.5)]
        rep = note_metrics(notes, list(notes))
        assert rep.f_measure == 1.0

    def test_tolerance_boundary_inclusive(self):
        truth = [NoteEvent(60, 1.000, 2.0)]
        assert note_metrics([NoteEvent(60, 1.049, 2.0)], truth).tp == 1
        assert note_metrics([NoteEvent(60, 1.050, 2.0)], truth).tp == 1
        late = note_metrics([NoteEvent(60, 1.051, 2.0)], truth)
        assert (late.tp, late.fp, late.fn) == (0, 1, 1)

    def test_offsets_ignored(self):
        rep = note_metrics([NoteEvent(60, 0.0, 9.0)],
                           [NoteEvent(60, 0.0, 1.0)])
        assert rep.tp == 1

    def test_pitch_must_match(self):
        rep = note_metrics([NoteEvent(61, 0.0, 1.0)],
                           [NoteEvent(60, 0.0, 1.0)])
        assert (rep.tp, rep.fp, rep.fn) == (0, 1, 1)

    def test_one_prediction_between_two_truths(self):
        # truth onsets 60 ms apart; the single prediction sits 20 ms from the
        # first and 40 ms from the second: one TP (nearer onset), one FN
        truth = [NoteEvent(60, 1.00, 2.0), NoteEvent(60, 1.06, 2.0)]
        rep = note_metrics([NoteEvent(60, 1.02, 2.0)], truth)
        assert (rep.tp, rep.fp, rep.fn) == (1, 0, 1)

    def test_one_to_one_no_double_matching(self):
        truth = [NoteEvent(60, 1.0, 2.0)]
        pred = [NoteEvent(60, 1.01, 2.0), NoteEvent(60, 0.99, 2.0)]
        rep = note_metrics(pred, truth)
        assert (rep.tp, rep.fp, rep.fn) == (1, 1, 0)

    def test_two_truths_two_preds_crossed(self):
        # both predictions within tolerance of both truths; one-to-one
        # matching must pair them up and count two TPs
        truth = [NoteEvent(60, 1.00, 2.0), NoteEvent(60, 1.04, 2.0)]
        pred = [NoteEvent(60, 1.03, 2.0), NoteEvent(60, 1.01, 2.0)]
        rep = note_metrics(pred, truth)
        assert (rep.tp, rep.fp, rep.fn) == (2, 0, 0)

    def test_empty_lists(self):
        rep = note_metrics([], [])
        assert (rep.tp, rep.fp, rep.fn) == (0, 0, 0)
        assert rep.f_measure == 0.0

    def test_permutation_invariance(self, rng):
        truth = [NoteEvent(int(rng.integers(21, 109)), float(t), float(t) + 0.5)
                 for t in rng.random(8) * 3]
        pred = [NoteEvent(n.pitch, n.onset + float(rng.normal() * 0.04),
                          n.offset)
                for n in truth if n.onset > 0.2]
        base = note_metrics(pred, truth)
        for _ in range(5):
            p = [pred[i] for i in rng.permutation(len(pred))]
            t = [truth[i] for i in rng.permutation(len(truth))]
            rep = note_metrics(p, t)
            assert (rep.tp, rep.fp, rep.fn) == (base.tp, base.fp, base.fn)

    def test_pitch_relabeling_invariance(self):
        truth = [NoteEvent(60, 0.0, 1.0), NoteEvent(64, 0.5, 1.0)]
        pred = [NoteEvent(60, 0.02, 1.0), NoteEvent(64, 0.9, 1.0)]
        base = note_metrics(pred, truth)
        shift = lambda ns: [NoteEvent(n.pitch + 5, n.onset, n.offset)
                            for n in ns]
        rep = note_metrics(shift(pred), shift(truth))
        assert (rep.tp, rep.fp, rep.fn) == (base.tp, base.fp, base.fn)


class TestAggregation:
    def test_corpus_report_sums_counts(self):
        total = corpus_report([MetricReport(2, 1, 1), MetricReport(3, 0, 2)])
        assert (total.tp, total.fp, total.fn) == (5, 1, 3)
        assert total.precision == pytest.approx(5 / 6)

    def test_format_report_rows(self):
        text = format_report_rows(
            [("trk0", MetricReport(2, 1, 1), MetricReport(1, 0, 0))])
        lines = text.splitlines()
        assert lines[0].startswith("track\tlevel")
        assert lines[1].split("\t")[:5] == ["trk0", "frame", "2", "1", "1"]
        assert lines[2].split("\t")[1] == "note"

    def test_format_skips_missing_note_report(self):
        text = format_report_rows([("t", MetricReport(1, 0, 0), None)])
        assert len(text.splitlines()) == 2
