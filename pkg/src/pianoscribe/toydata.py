"""Synthetic additive-harmonic piano corpus for desk-scale experiments.

Tracks are rendered from randomly generated piano rolls over a small
pitch set: each note is a decaying sum of harmonic partials with
amplitude tremolo, on top of broadband noise. The rolls use the CQT
frame rate so features and labels align frame for frame.
"""

from dataclasses import dataclass, field

import numpy as np

from .features import FRAME_RATE, TARGET_RATE
from .pianoroll import NoteEvent, events_to_roll

DEFAULT_PITCHES = (60, 62, 64, 65, 67, 69, 71, 72)  # C major scale C4-C5


def midi_to_hz(pitch):
    return 440.0 * 2.0 ** ((pitch - 69) / 12.0)


@dataclass
class ToyConfig:
    pitches: tuple = DEFAULT_PITCHES
    n_tracks: int = 200
    duration: float = 3.0            # seconds per track
    min_note_frames: int = 8
    max_note_frames: int = 26
    max_polyphony: int = 3
    rest_prob: float = 0.25
    n_partials: int = 4
    noise_level: float = 0.10
    tremolo_depth: float = 0.55
    tremolo_rate: float = 4.0        # Hz
    amp_jitter: float = 0.35
    seed: int = 0


@dataclass
class ToyTrack:
    samples: np.ndarray
    roll: object                     # PianoRoll at the CQT frame rate
    events: list = field(default_factory=list)


def generate_events(rng, config):
    """Random note events: chords of 1..max_polyphony notes separated by
    occasional rests, note lengths drawn in frames."""
    events = []
    t = 0.0
    frame = 1.0 / FRAME_RATE
    while t < config.duration - config.min_note_frames * frame:
        if rng.random() < config.rest_prob:
            t += rng.integers(2, 8) * frame
            continue
        n_notes = int(rng.integers(1, config.max_polyphony + 1))
        pitches = rng.choice(config.pitches, size=n_notes, replace=False)
        length = int(rng.integers(config.min_note_frames,
                                  config.max_note_frames + 1))
        offset = min(t + length * frame, config.duration)
        for pitch in pitches:
            events.append(NoteEvent(int(pitch), t, offset))
        t = offset + rng.integers(0, 3) * frame
    return events


def render_audio(events, config, rng):
    """Additive-harmonic rendering with decay, tremolo and noise."""
    n = int(round(config.duration * TARGET_RATE))
    out = rng.normal(0.0, config.noise_level, size=n)
    t_axis = np.arange(n) / TARGET_RATE
    for ev in events:
        i0 = int(ev.onset * TARGET_RATE)
        i1 = min(int(ev.offset * TARGET_RATE), n)
        if i1 <= i0:
            continue
        t = t_axis[i0:i1] - ev.onset
        f0 = midi_to_hz(ev.pitch)
        gain = 0.35 * (1.0 + config.amp_jitter * (rng.random() * 2 - 1))
        tone = np.zeros(i1 - i0)
        phase = rng.random() * 2 * np.pi
        for h in range(1, config.n_partials + 1):
            f = f0 * h
            if f >= TARGET_RATE / 2:
                break
            tone += np.sin(2 * np.pi * f * t + phase * h) / h
        envelope = np.exp(-1.1 * t)
        trem_phase = rng.random() * 2 * np.pi
        envelope *= 1.0 - config.tremolo_depth * 0.5 * (
            1.0 + np.sin(2 * np.pi * config.tremolo_rate * t + trem_phase))
        # short attack ramp to avoid clicks
        ramp = min(160, tone.size)
        attack = np.ones_like(tone)
        attack[:ramp] = np.linspace(0.0, 1.0, ramp)
        out[i0:i1] += gain * tone * envelope * attack
    peak = np.max(np.abs(out))
    if peak > 1.0:
        out /= peak
    return out


def generate_track(rng, config):
    events = generate_events(rng, config)
    samples = render_audio(events, config, rng)
    roll = events_to_roll(events, FRAME_RATE, config.duration)
    return ToyTrack(samples, roll, events)


def generate_corpus(config=None):
    config = config or ToyConfig()
    rng = np.random.default_rng(config.seed)
    return [generate_track(rng, config) for _ in range(config.n_tracks)]
