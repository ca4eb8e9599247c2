"""MIDI ingestion and piano-roll / note-event conversions.

Piano rolls are T x 88 binary matrices; column i is MIDI pitch 21 + i
(A0 through C8). Same-pitch overlaps in MIDI are matched FIFO
(first note-on pairs with first note-off); the sustain pedal is ignored.
"""

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

PITCH_MIN = 21
PITCH_MAX = 108
N_PITCHES = 88
DEFAULT_TEMPO = 500000  # microseconds per quarter note (120 bpm)


class MidiParseError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class NoteEvent:
    pitch: int
    onset: float
    offset: float

    def __post_init__(self):
        if not PITCH_MIN <= self.pitch <= PITCH_MAX:
            raise ValueError(f"pitch {self.pitch} outside {PITCH_MIN}..{PITCH_MAX}")
        if self.onset < 0:
            raise ValueError("onset must be >= 0")
        if self.offset <= self.onset:
            raise ValueError("offset must exceed onset")


@dataclass
class PianoRoll:
    frames: np.ndarray  # (T, 88) of 0/1
    frame_rate: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_PITCHES:
            raise ValueError("piano roll must be T x 88")
        if not np.isin(self.frames, (0, 1)).all():
            raise ValueError("piano roll entries must be 0/1")
        self.frames = self.frames.astype(np.uint8)
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def duration(self):
        return self.n_frames / self.frame_rate


# ---------------------------------------------------------------------------
# MIDI parsing

def _read_varlen(data, pos):
    value = 0
    start = pos
    while True:
        if pos >= len(data):
            raise MidiParseError("truncated variable-length quantity", start)
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos


def _parse_track(data, pos, end):
    """Yields (tick, kind, payload) events from one MTrk chunk body."""
    tick = 0
    status = None
    events = []
    while pos < end:
        delta, pos = _read_varlen(data, pos)
        tick += delta
        if pos >= end:
            raise MidiParseError("truncated event", pos)
        byte = data[pos]
        if byte & 0x80:
            status = byte
            pos += 1
        elif status is None:
            raise MidiParseError("running status with no prior status byte", pos)
        if status == 0xFF:  # meta
            if pos >= end:
                raise MidiParseError("truncated meta event", pos)
            meta_type = data[pos]
            pos += 1
            length, pos = _read_varlen(data, pos)
            payload = data[pos:pos + length]
            if len(payload) != length:
                raise MidiParseError("truncated meta payload", pos)
            pos += length
            if meta_type == 0x51:
                if length != 3:
                    raise MidiParseError("bad tempo meta length", pos)
                events.append((tick, "tempo", int.from_bytes(payload, "big")))
            elif meta_type == 0x2F:
                break
        elif status in (0xF0, 0xF7):  # sysex
            length, pos = _read_varlen(data, pos)
            pos += length
            if pos > end:
                raise MidiParseError("truncated sysex", pos)
        else:
            kind = status & 0xF0
            channel = status & 0x0F
            n_data = 1 if kind in (0xC0, 0xD0) else 2
            if pos + n_data > end:
                raise MidiParseError("truncated channel event", pos)
            d = data[pos:pos + n_data]
            pos += n_data
            if kind == 0x90 and d[1] > 0:
                events.append((tick, "on", (channel, d[0])))
            elif kind == 0x80 or (kind == 0x90 and d[1] == 0):
                events.append((tick, "off", (channel, d[0])))
    return events


def midi_to_events(data):
    """Parse standard MIDI bytes into a list of NoteEvent, times in seconds.

    Pitches outside the 88-key range are dropped with a warning.
    """
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    header_len = int.from_bytes(data[4:8], "big")
    if header_len < 6:
        raise MidiParseError("bad MThd length", 4)
    fmt = int.from_bytes(data[8:10], "big")
    n_tracks = int.from_bytes(data[10:12], "big")
    division = int.from_bytes(data[12:14], "big")
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported MIDI format {fmt}", 8)
    if division & 0x8000:
        raise MidiParseError("SMPTE time division not supported", 12)
    ticks_per_quarter = division

    pos = 8 + header_len
    all_events = []
    for _ in range(n_tracks):
        if pos + 8 > len(data):
            raise MidiParseError("truncated track chunk header", pos)
        if data[pos:pos + 4] != b"MTrk":
            raise MidiParseError(f"expected MTrk, got {data[pos:pos + 4]!r}", pos)
        length = int.from_bytes(data[pos + 4:pos + 8], "big")
        body_start = pos + 8
        body_end = body_start + length
        if body_end > len(data):
            raise MidiParseError("truncated track chunk body", pos)
        all_events.extend(_parse_track(data, body_start, body_end))
        pos = body_end

    # tempo map: convert ticks to seconds piecewise
    tempos = sorted((t, v) for t, v, in
                    ((tk, pl) for tk, kd, pl in all_events if kd == "tempo"))

    def tick_to_seconds(tick):
        seconds = 0.0
        last_tick = 0
        tempo = DEFAULT_TEMPO
        for tt, tv in tempos:
            if tt >= tick:
                break
            seconds += (tt - last_tick) * tempo / (1e6 * ticks_per_quarter)
            last_tick, tempo = tt, tv
        return seconds + (tick - last_tick) * tempo / (1e6 * ticks_per_quarter)

    notes = []
    open_notes = {}  # (channel, pitch) -> list of onset ticks, FIFO
    dropped = 0
    ordered = sorted(
        (e for e in all_events if e[1] in ("on", "off")), key=lambda e: e[0])
    for tick, kind, (channel, pitch) in ordered:
        key = (channel, pitch)
        if kind == "on":
            open_notes.setdefault(key, []).append(tick)
        else:
            stack = open_notes.get(key)
            if stack:
                onset_tick = stack.pop(0)
                if PITCH_MIN <= pitch <= PITCH_MAX:
                    on_s = tick_to_seconds(onset_tick)
                    off_s = tick_to_seconds(tick)
                    if off_s > on_s:
                        notes.append(NoteEvent(pitch, on_s, off_s))
                else:
                    dropped += 1
    if dropped:
        warnings.warn(f"dropped {dropped} notes outside the 88-key range")
    notes.sort(key=lambda n: (n.onset, n.pitch, n.offset))
    return notes


# ---------------------------------------------------------------------------
# roll <-> events

def events_to_roll(events, frame_rate, duration):
    """Sample note events into a binary roll; cell (t, p) is active iff
    onset <= t/frame_rate < offset. Events are truncated at the duration."""
    if frame_rate <= 0:
        raise ValueError("frame_rate must be positive")
    T = int(np.ceil(duration * frame_rate))
    frames = np.zeros((T, N_PITCHES), dtype=np.uint8)
    for ev in events:
        start = int(np.ceil(ev.onset * frame_rate - 1e-9))
        end = int(np.ceil(ev.offset * frame_rate - 1e-9))
        start = max(start, 0)
        end = min(end, T)
        if end > start:
            frames[start:end, ev.pitch - PITCH_MIN] = 1
    return PianoRoll(frames, frame_rate)


def roll_to_events(roll):
    """Each maximal run of 1s in a column becomes one NoteEvent."""
    events = []
    T = roll.n_frames
    rate = roll.frame_rate
    for col in range(N_PITCHES):
        column = roll.frames[:, col]
        changes = np.flatnonzero(np.diff(np.concatenate(([0], column, [0]))))
        for start, end in zip(changes[::2], changes[1::2]):
            events.append(NoteEvent(col + PITCH_MIN, start / rate, end / rate))
    events.sort(key=lambda n: (n.onset, n.pitch, n.offset))
    return events


# ---------------------------------------------------------------------------
# CSV note lists

def events_to_csv(events):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["pitch", "onset", "offset"])
    for ev in events:
        writer.writerow([ev.pitch, f"{ev.onset:.6f}", f"{ev.offset:.6f}"])
    return buf.getvalue()


def events_from_csv(text):
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    return [NoteEvent(int(p), float(on), float(off)) for p, on, off in rows[1:]]
