"""Shared test helpers: finite-difference oracles and MIDI fixture building."""

import struct

import numpy as np
import pytest


def central_difference(f, params, eps=1e-5, max_coords=6, rng=None):
    """Numeric gradient of scalar f() wrt a dict of parameter arrays.

    Probes up to max_coords randomly chosen coordinates per array and
    returns {name: [(index, numeric_grad), ...]}.
    """
    rng = rng or np.random.default_rng(0)
    out = {}
    for name, p in params.items():
        flat = p.reshape(-1)
        n_probe = min(max_coords, flat.size)
        idx = rng.choice(flat.size, size=n_probe, replace=False)
        probes = []
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            probes.append((int(i), (hi - lo) / (2 * eps)))
        out[name] = probes
    return out


def max_rel_error(analytic, numeric):
    """Largest relative error between analytic gradients and probed
    central differences, with an absolute floor for near-zero entries."""
    worst = 0.0
    for name, probes in numeric.items():
        g = analytic[name].reshape(-1)
        for i, num in probes:
            denom = max(abs(num), abs(g[i]), 1e-4)
            worst = max(worst, abs(g[i] - num) / denom)
    return worst


# ---------------------------------------------------------------------------
# hand-built MIDI fixtures

def midi_varlen(value):
    out = bytearray()
    out.append(value & 0x7F)
    value >>= 7
    while value:
        out.insert(0, 0x80 | (value & 0x7F))
        value >>= 7
    return bytes(out)


def midi_file(events, division=480, fmt=0):
    """events: list of (delta_ticks, raw_event_bytes). Builds one track."""
    body = b"".join(midi_varlen(d) + e for d, e in events)
    body += midi_varlen(0) + b"\xff\x2f\x00"  # end of track
    header = b"MThd" + struct.pack(">IHHH", 6, fmt, 1, division)
    track = b"MTrk" + struct.pack(">I", len(body)) + body
    return header + track


def note_on(pitch, velocity=64, channel=0):
    return bytes([0x90 | channel, pitch, velocity])


def note_off(pitch, channel=0):
    return bytes([0x80 | channel, pitch, 0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
