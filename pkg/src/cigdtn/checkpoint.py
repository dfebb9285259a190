"""Binary checkpoint format.

Layout (little-endian)::

    b"CGDT"  u32 version
    u32 config_len  config bytes (UTF-8 key=value lines)
    u32 n_params
    per param: u32 name_len, name, u32 rank, u32 * rank extents, f32 payload
    u64 checksum (blake2b-64 of every preceding byte)

Parameters are always stored as 32-bit reals.
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .config import format_kv, parse_kv
from .dsp import StftConfig
from .model import ModelConfig, param_shapes

MAGIC = b"CGDT"
VERSION = 1


class CheckpointError(ValueError):
    """Corrupt, truncated or incompatible checkpoint."""


def _checksum(b: bytes) -> bytes:
    return hashlib.blake2b(b, digest_size=8).digest()


def encode(params: Mapping[str, np.ndarray], cfg: ModelConfig, stft_cfg: StftConfig | None = None) -> bytes:
    shapes = param_shapes(cfg)
    if set(params) != set(shapes):
        raise CheckpointError(f"parameter names do not match the config ({len(params)} vs {len(shapes)})")
    conf = dict(cfg.to_dict())
    if stft_cfg is not None:
        conf["stft_window_length"] = stft_cfg.window_length
        conf["stft_fft_size"] = stft_cfg.fft_size
        conf["stft_hop"] = stft_cfg.hop
    conf_bytes = format_kv(conf).encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(conf_bytes)) + conf_bytes
    out += struct.pack("<I", len(params))
    for name in shapes:
        arr = np.asarray(params[name])
        if arr.shape != shapes[name]:
            raise CheckpointError(f"{name}: shape {arr.shape} does not match config {shapes[name]}")
        nb = name.encode("utf-8")
        out += struct.pack("<I", len(nb)) + nb
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += _checksum(bytes(out))
    return bytes(out)


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], ModelConfig, StftConfig | None]:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not a CGDT checkpoint (bad magic)")
    body, tail = blob[:-8], blob[-8:]
    if _checksum(body) != tail:
        raise CheckpointError("checksum mismatch (file truncated or corrupted)")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 8
    (clen,) = struct.unpack_from("<I", body, pos)
    pos += 4
    conf = parse_kv(body[pos : pos + clen].decode("utf-8"))
    pos += clen
    stft_cfg = None
    if "stft_window_length" in conf:
        hop = conf.pop("stft_hop", "none")
        stft_cfg = StftConfig(
            int(conf.pop("stft_window_length")),
            int(conf.pop("stft_fft_size")),
            None if hop == "none" else int(hop),
        )
    cfg = ModelConfig.from_dict(_model_values(conf))
    (n,) = struct.unpack_from("<I", body, pos)
    pos += 4
    params = {}
    for _ in range(n):
        (nl,) = struct.unpack_from("<I", body, pos)
        name = body[pos + 4 : pos + 4 + nl].decode("utf-8")
        pos += 4 + nl
        (rank,) = struct.unpack_from("<I", body, pos)
        shape = struct.unpack_from(f"<{rank}I", body, pos + 4)
        pos += 4 + 4 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += 4 * count
        params[name] = arr.astype(np.float64)
    if pos != len(body):
        raise CheckpointError("trailing bytes after parameter table")
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        raise CheckpointError("parameter table does not match the stored config")
    for k, shape in expected.items():
        if params[k].shape != shape:
            raise CheckpointError(f"{k}: stored shape {params[k].shape}, config needs {shape}")
    return params, cfg, stft_cfg


def _model_values(conf: Mapping[str, str]) -> dict:
    types = {f: type(v) for f, v in ModelConfig().to_dict().items()}
    out = {}
    for k, v in conf.items():
        if k not in types:
            raise CheckpointError(f"unknown config key in checkpoint: {k}")
        if types[k] is tuple:
            out[k] = tuple(int(x) for x in v.split(",") if x.strip())
        else:
            out[k] = types[k](v)
    return out


def checkpoint_save(path, params: Mapping[str, np.ndarray], cfg: ModelConfig, stft_cfg: StftConfig | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(params, cfg, stft_cfg))
    os.replace(tmp, path)


def checkpoint_load(path) -> tuple[dict[str, np.ndarray], ModelConfig, StftConfig | None]:
    return decode(Path(path).read_bytes())
