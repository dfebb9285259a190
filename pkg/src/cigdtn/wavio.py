"""RIFF/WAVE reading and writing (PCM16 and float32)."""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .dsp import AudioClip

PCM = 1
IEEE_FLOAT = 3
EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    """Malformed or unsupported WAV data."""


def wav_read(path: str | os.PathLike) -> AudioClip:
    """Decode a PCM16 or float32 WAV file; multichannel audio is averaged to mono."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid, size = struct.unpack_from("<4sI", raw, pos)
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavError(f"{path}: chunk {cid!r} truncated")
        if cid == b"fmt ":
            if size < 16:
                raise WavError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == EXTENSIBLE and size >= 26:
                fmt = (struct.unpack_from("<H", body, 24)[0],) + fmt[1:]
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise WavError(f"{path}: missing fmt or data chunk")
    codec, channels, rate, _, align, bits = fmt
    if channels < 1:
        raise WavError(f"{path}: zero channels")
    if codec == PCM and bits == 16:
        x = np.frombuffer(data[: len(data) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0
    elif codec == IEEE_FLOAT and bits == 32:
        x = np.frombuffer(data[: len(data) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise WavError(f"{path}: unsupported encoding (format tag {codec}, {bits} bits)")
    x = x[: len(x) // channels * channels].reshape(-1, channels)
    return AudioClip(x.mean(axis=1) if channels > 1 else x[:, 0], int(rate))


def encode_pcm16(clip: AudioClip) -> bytes:
    s = np.clip(clip.samples, -1.0, 1.0)
    q = np.clip(np.round(s * 32768.0), -32768, 32767).astype("<i2")
    payload = q.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, PCM, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16,
        b"data", len(payload),
    )
    return header + payload


def wav_write(path: str | os.PathLike, clip: AudioClip) -> None:
    """Write mono PCM16, clamping to [-1, 1]; the file is replaced atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_pcm16(clip))
    os.replace(tmp, path)
