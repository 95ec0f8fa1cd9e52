"""Binary weight container.

Layout (all little-endian)::

    magic    4s   b"MDKW"
    version  u16
    flags    u16  (reserved, 0)
    count    u32  number of tensors
    crc32    u32  of the data section
    table    count entries:
               name_len u16, name utf-8, dtype u8 (0=i8, 1=f32),
               ndim u8, shape u32 * ndim, scale f64, offset u64, nbytes u64
    data     tensors at their offsets (relative to the data section start),
             each aligned to 16 bytes

Offsets are relative so the table can be written before the data is placed.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .config import LINEAR_LAYERS, ModelConfig
from .model import ACT_POINTS, QLayer, QModel, build_quantized
from .quant import QMAX, QTensor

MAGIC = b"MDKW"
VERSION = 1
_HEADER = struct.Struct("<4sHHII")
_DTYPES = {0: np.int8, 1: np.float32}
_CODES = {np.dtype(np.int8): 0, np.dtype(np.float32): 1}
_ALIGN = 16


class WeightFileError(ValueError):
    pass


def write_tensors(path, tensors: dict[str, tuple[np.ndarray, float]]) -> None:
    table = bytearray()
    data = bytearray()
    for name, (arr, scale) in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES:
            raise WeightFileError(f"{name}: unsupported dtype {arr.dtype}")
        pad = (-len(data)) % _ALIGN
        data += b"\0" * pad
        offset = len(data)
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        data += raw
        nb = name.encode()
        table += struct.pack("<H", len(nb)) + nb
        table += struct.pack("<BB", _CODES[arr.dtype], arr.ndim)
        table += struct.pack(f"<{arr.ndim}I", *arr.shape)
        table += struct.pack("<dQQ", float(scale), offset, len(raw))
    header = _HEADER.pack(MAGIC, VERSION, 0, len(tensors), zlib.crc32(bytes(data)))
    Path(path).write_bytes(header + bytes(table) + bytes(data))


def read_tensors(path) -> dict[str, tuple[np.ndarray, float]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise WeightFileError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise WeightFileError("file too short for header")
    magic, version, _, count, crc = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise WeightFileError(f"bad magic {magic!r}")
    if version != VERSION:
        raise WeightFileError(f"unsupported version {version}")
    pos = _HEADER.size
    entries = []
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n].decode()
            pos += n
            code, ndim = struct.unpack_from("<BB", blob, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            scale, offset, nbytes = struct.unpack_from("<dQQ", blob, pos)
            pos += 24
            if code not in _DTYPES:
                raise WeightFileError(f"{name}: unknown dtype code {code}")
            entries.append((name, _DTYPES[code], shape, scale, offset, nbytes))
    except (struct.error, UnicodeDecodeError) as exc:
        raise WeightFileError(f"corrupt tensor table: {exc}") from exc
    data = blob[pos:]
    if zlib.crc32(data) != crc:
        raise WeightFileError("data checksum mismatch")
    out = {}
    for name, dtype, shape, scale, offset, nbytes in entries:
        expect = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        if nbytes != expect or offset + nbytes > len(data):
            raise WeightFileError(f"{name}: bad extent")
        arr = np.frombuffer(data, dtype=np.dtype(dtype).newbyteorder("<"), count=expect // np.dtype(dtype).itemsize,
                            offset=offset).reshape(shape)
        out[name] = (arr.astype(dtype), scale)
    return out


# ---------------------------------------------------------------------------
# model <-> tensors

def model_tensors(m: QModel) -> dict[str, tuple[np.ndarray, float]]:
    cfg = m.cfg
    t: dict[str, tuple[np.ndarray, float]] = {}
    f32 = lambda a: (np.asarray(a, dtype=np.float32), 1.0)
    t["config"] = (np.array([cfg.n_layers, cfg.l_embed, cfg.n_heads, cfg.head_dim, cfg.ffn_dim,
                             cfg.vocab_size, cfg.max_seq_len], dtype=np.float32), 1.0)
    t["wte"] = f32(m.wte)
    t["wpe"] = f32(m.wpe)
    t["lnf.g"], t["lnf.b"] = f32(m.lnf[0]), f32(m.lnf[1])
    for i, L in enumerate(m.layers):
        p = f"layers.{i}."
        for name in LINEAR_LAYERS:
            t[p + name + ".w"] = (L.w[name].data, L.w[name].scale)
            t[p + name + ".b"] = f32(L.b[name])
        t[p + "ln1.g"], t[p + "ln1.b"] = f32(L.ln1[0]), f32(L.ln1[1])
        t[p + "ln2.g"], t[p + "ln2.b"] = f32(L.ln2[0]), f32(L.ln2[1])
        t[p + "act"] = f32([L.act[a] for a in ACT_POINTS])
    return t


def save_model(m: QModel, path) -> None:
    write_tensors(path, model_tensors(m))


def load_model(path, expect: ModelConfig | None = None) -> QModel:
    t = read_tensors(path)

    def get(name):
        if name not in t:
            raise WeightFileError(f"missing tensor {name}")
        return t[name]

    c = [int(x) for x in get("config")[0]]
    cfg = ModelConfig(n_layers=c[0], l_embed=c[1], n_heads=c[2], head_dim=c[3], ffn_dim=c[4],
                      vocab_size=c[5], max_seq_len=c[6])
    if expect is not None and expect != cfg:
        raise WeightFileError(f"weight file model {cfg} does not match config {expect}")
    f64 = lambda name: get(name)[0].astype(np.float64)
    layers = []
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        w = {}
        for name in LINEAR_LAYERS:
            data, scale = get(p + name + ".w")
            if data.size and int(np.max(np.abs(data.astype(np.int16)))) != QMAX:
                raise WeightFileError(f"{p}{name}.w: scale is not max-abs / 127")
            w[name] = QTensor(data, scale)
        b = {name: f64(p + name + ".b") for name in LINEAR_LAYERS}
        act = dict(zip(ACT_POINTS, (float(x) for x in f64(p + "act"))))
        layers.append(QLayer(w, b, (f64(p + "ln1.g"), f64(p + "ln1.b")),
                             (f64(p + "ln2.g"), f64(p + "ln2.b")), act))
    return QModel(cfg, f64("wte"), f64("wpe"), (f64("lnf.g"), f64("lnf.b")), layers)


def generate_weights(cfg: ModelConfig, seed: int, path) -> QModel:
    """Random weights with max-abs scales, written to ``path``."""
    _, qm = build_quantized(cfg, seed)
    save_model(qm, path)
    return qm
