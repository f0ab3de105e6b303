"""
RIFF/WAVE reading and writing for PCM16, PCM24 and IEEE float32.

Reading returns the first channel only; multichannel files set
``metadata["first_channel_only"]`` and add a message to ``metadata["warnings"]``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .audio import AudioBuffer
from .errors import InvalidArgumentError, WavFormatError

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

_SUPPORTED = {
    (WAVE_FORMAT_PCM, 16),
    (WAVE_FORMAT_PCM, 24),
    (WAVE_FORMAT_IEEE_FLOAT, 32),
}


def _decode(raw: bytes, fmt: int, bits: int, channels: int) -> np.ndarray:
    if fmt == WAVE_FORMAT_IEEE_FLOAT:
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    elif bits == 16:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    else:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        v = b[:, 0].astype(np.int32) | (b[:, 1].astype(np.int32) << 8) | (b[:, 2].astype(np.int32) << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        data = v.astype(np.float64) / float(1 << 23)
    return data.reshape(-1, channels)


def read(path) -> AudioBuffer:
    """Read a WAV file into a normalised mono :class:`AudioBuffer`."""
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise WavFormatError("file too short for a RIFF header", 0)
    if blob[0:4] != b"RIFF":
        raise WavFormatError(f"expected 'RIFF', found {blob[0:4]!r}", 0)
    if blob[8:12] != b"WAVE":
        raise WavFormatError(f"expected 'WAVE', found {blob[8:12]!r}", 8)

    fmt_info = None
    data_span = None
    pos = 12
    while pos + 8 <= len(blob):
        chunk_id = blob[pos:pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = pos + 8
        if chunk_id == b"fmt ":
            if size < 16 or body + 16 > len(blob):
                raise WavFormatError("truncated fmt chunk", pos)
            fmt, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", blob, body)
            if fmt == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise WavFormatError("truncated WAVE_FORMAT_EXTENSIBLE fmt chunk", pos)
                (fmt,) = struct.unpack_from("<H", blob, body + 24)
            fmt_info = (fmt, channels, rate, block_align, bits, pos)
        elif chunk_id == b"data":
            end = min(body + size, len(blob))
            data_span = (body, end)
        pos = body + size + (size & 1)
        if data_span is not None and fmt_info is not None:
            break

    if fmt_info is None:
        raise WavFormatError("no fmt chunk found", 12)
    fmt, channels, rate, block_align, bits, fmt_pos = fmt_info
    if (fmt, bits) not in _SUPPORTED:
        raise WavFormatError(f"unsupported codec: format tag 0x{fmt:04x} with {bits} bits", fmt_pos + 8)
    if channels < 1 or rate < 1:
        raise WavFormatError(f"invalid channel count {channels} or sample rate {rate}", fmt_pos + 8)
    if block_align != channels * bits // 8:
        raise WavFormatError(f"block align {block_align} inconsistent with {channels}x{bits} bits", fmt_pos + 20)
    if data_span is None:
        raise WavFormatError("no data chunk found", pos)
    start, end = data_span
    usable = (end - start) // block_align * block_align
    frames = _decode(blob[start:start + usable], fmt, bits, channels)
    if not np.all(np.isfinite(frames[:, 0])):
        raise WavFormatError("non-finite float samples", start)

    meta = {"channels": channels, "bit_depth": bits, "format": "float" if fmt == WAVE_FORMAT_IEEE_FLOAT else "pcm",
            "warnings": []}
    if channels > 1:
        meta["first_channel_only"] = True
        meta["warnings"].append(f"{channels}-channel input: using the first channel only")
    return AudioBuffer(frames[:, 0].copy(), rate, meta)


def write(path, signal: AudioBuffer, bit_depth: int = 32) -> Path:
    """Write mono audio; ``bit_depth`` 32 means IEEE float32, 16/24 mean PCM.

    PCM output is clipped to the representable range.
    """
    x = signal.samples
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("cannot write non-finite samples")
    if bit_depth == 32:
        fmt, payload = WAVE_FORMAT_IEEE_FLOAT, x.astype("<f4").tobytes()
    elif bit_depth == 16:
        v = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        fmt, payload = WAVE_FORMAT_PCM, v.tobytes()
    elif bit_depth == 24:
        v = np.clip(np.round(x * float(1 << 23)), -(1 << 23), (1 << 23) - 1).astype(np.int32)
        b = np.empty((len(v), 3), dtype=np.uint8)
        u = v & 0xFFFFFF
        b[:, 0], b[:, 1], b[:, 2] = u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF
        fmt, payload = WAVE_FORMAT_PCM, b.tobytes()
    else:
        raise InvalidArgumentError(f"bit_depth must be 16, 24 or 32, got {bit_depth}")
    block = bit_depth // 8
    header = struct.pack("<4sI4s", b"RIFF", 36 + len(payload) + (len(payload) & 1), b"WAVE")
    fmt_chunk = struct.pack("<4sIHHIIHH", b"fmt ", 16, fmt, 1, signal.sample_rate,
                            signal.sample_rate * block, block, bit_depth)
    data_hdr = struct.pack("<4sI", b"data", len(payload))
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(header + fmt_chunk + data_hdr + payload + (b"\x00" if len(payload) & 1 else b""))
    return path
