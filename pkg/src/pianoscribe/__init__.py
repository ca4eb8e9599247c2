"""Polyphonic piano transcription: neural acoustic models, an RNN-NADE
note-combination prior, and hashed beam-search decoding."""

__version__ = "0.1.0"

from .acoustic import (AcousticConfig, Posteriogram, build_acoustic,
                       predict_posteriogram, train_acoustic)
from .decode import (PitchMarginals, fit_pitch_hmms, fit_threshold,
                     hmm_decode, hybrid_decode, legacy_beam_decode,
                     threshold_decode)
from .features import (FeatureSequence, Standardizer, apply_standardizer,
                       context_window, cqt, fit_standardizer, resample_to_16k)
from .metrics import MetricReport, frame_metrics, note_metrics, resample_roll
from .mlm import Nade, RnnNade, train_mlm
from .pianoroll import NoteEvent, PianoRoll, events_to_roll, midi_to_events, roll_to_events

__all__ = [
    "AcousticConfig", "Posteriogram", "build_acoustic", "predict_posteriogram",
    "train_acoustic", "PitchMarginals", "fit_pitch_hmms", "fit_threshold",
    "hmm_decode", "hybrid_decode", "legacy_beam_decode", "threshold_decode",
    "FeatureSequence", "Standardizer", "apply_standardizer", "context_window",
    "cqt", "fit_standardizer", "resample_to_16k", "MetricReport",
    "frame_metrics", "note_metrics", "resample_roll", "Nade", "RnnNade",
    "train_mlm", "NoteEvent", "PianoRoll", "events_to_roll", "midi_to_events",
    "roll_to_events",
]
