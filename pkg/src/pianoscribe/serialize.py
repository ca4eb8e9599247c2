"""Binary file containers: PSFT features, PSPG posteriograms, PSPR rolls, PSNN models.

All integers are little-endian. Floats are IEEE 754 little-endian.
"""

import json
import os
import struct

import numpy as np

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}")
    return data


def atomic_write(path, payload):
    """Write bytes to path via a temp file + rename."""
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# PSFT / PSPG: float32 frame matrices with a frame rate

def _encode_frames(magic, frames, frame_rate):
    frames = np.ascontiguousarray(frames, dtype="<f4")
    T, D = frames.shape
    head = magic + struct.pack("<IQId", FORMAT_VERSION, T, D, float(frame_rate))
    return head + frames.tobytes()


def _decode_frames(magic, data):
    if data[:4] != magic:
        raise FormatError(f"bad magic {data[:4]!r}, expected {magic!r}")
    ver, T, D, rate = struct.unpack_from("<IQId", data, 4)
    if ver != FORMAT_VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {ver}")
    off = 4 + struct.calcsize("<IQId")
    need = T * D * 4
    if len(data) - off < need:
        raise FormatError("truncated frame payload")
    frames = np.frombuffer(data, dtype="<f4", count=T * D, offset=off)
    return frames.reshape(T, D).astype(float), rate


def write_features(path, frames, frame_rate):
    atomic_write(path, _encode_frames(b"PSFT", frames, frame_rate))


def read_features(path):
    with open(path, "rb") as fh:
        return _decode_frames(b"PSFT", fh.read())


def write_posteriogram(path, probs, frame_rate):
    if probs.shape[1] != 88:
        raise FormatError("posteriogram must have 88 columns")
    atomic_write(path, _encode_frames(b"PSPG", probs, frame_rate))


def read_posteriogram(path):
    with open(path, "rb") as fh:
        probs, rate = _decode_frames(b"PSPG", fh.read())
    if probs.shape[1] != 88:
        raise FormatError("posteriogram must have 88 columns")
    return probs, rate


# ---------------------------------------------------------------------------
# PSPR: packed binary piano rolls (88 pitches, 11 bytes per frame)

def encode_roll(frames, frame_rate):
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != 88:
        raise FormatError("piano roll must be T x 88")
    T = frames.shape[0]
    head = b"PSPR" + struct.pack("<IQd", FORMAT_VERSION, T, float(frame_rate))
    packed = np.packbits(frames.astype(np.uint8), axis=1)
    return head + packed.tobytes()


def decode_roll(data):
    if data[:4] != b"PSPR":
        raise FormatError(f"bad magic {data[:4]!r}, expected b'PSPR'")
    ver, T, rate = struct.unpack_from("<IQd", data, 4)
    if ver != FORMAT_VERSION:
        raise FormatError(f"unsupported PSPR version {ver}")
    off = 4 + struct.calcsize("<IQd")
    if len(data) - off < T * 11:
        raise FormatError("truncated roll payload")
    packed = np.frombuffer(data, dtype=np.uint8, count=T * 11, offset=off)
    bits = np.unpackbits(packed.reshape(T, 11), axis=1)[:, :88]
    return bits.astype(np.uint8), rate


def write_roll(path, frames, frame_rate):
    atomic_write(path, encode_roll(frames, frame_rate))


def read_roll(path):
    with open(path, "rb") as fh:
        return decode_roll(fh.read())


# ---------------------------------------------------------------------------
# PSNN: versioned model container
#
# Layout: magic "PSNN", version u32, header-length u32 + UTF-8 JSON config,
# array count u32, then per array: tag-length u16 + ASCII tag, ndim u32,
# dims (u32 each), row-major float64 data.

def encode_model(config, arrays):
    """config: JSON-serializable dict; arrays: list of (tag, ndarray)."""
    header = json.dumps(config, sort_keys=True).encode()
    out = [b"PSNN", struct.pack("<I", FORMAT_VERSION),
           struct.pack("<I", len(header)), header,
           struct.pack("<I", len(arrays))]
    for tag, arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        tag_b = tag.encode("ascii")
        out.append(struct.pack("<H", len(tag_b)) + tag_b)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_model(data):
    if data[:4] != b"PSNN":
        raise FormatError(f"bad magic {data[:4]!r}, expected b'PSNN'")
    ver, hlen = struct.unpack_from("<II", data, 4)
    if ver != FORMAT_VERSION:
        raise FormatError(f"unsupported PSNN version {ver}")
    off = 12
    config = json.loads(data[off:off + hlen].decode())
    off += hlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays = []
    for _ in range(count):
        (tlen,) = struct.unpack_from("<H", data, off)
        off += 2
        tag = data[off:off + tlen].decode("ascii")
        off += tlen
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(dims).copy()
        off += n * 8
        arrays.append((tag, arr))
    return config, arrays


def write_model(path, config, arrays):
    atomic_write(path, encode_model(config, arrays))


def read_model(path):
    with open(path, "rb") as fh:
        return decode_model(fh.read())
