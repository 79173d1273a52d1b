"""Binary model file.

::

    "MGBM" | u8 version | u32 config length | config text (UTF-8)
    u16 cell count, then per cell (grid descending, block size descending):
        u8 n | u8 m | u8 space (0 spectral, 1 spatial) | u16 k | u16 dim
        spectral only: u8 stage count, per stage
            u16 in_side | u16 in_channels | u16 kept count
            f32 kernels (4*in_channels)^2 row-major | f32 energies | u16 kept indices
        f32 centroids k*dim | f32 look-up table k*(2^m)^2*C | u8 Huffman code lengths * k

All integers and floats are little-endian.  The stream's model id is the
first 8 bytes of the SHA-256 of this file.
"""

from __future__ import annotations

import struct

import numpy as np

from .config import CodecConfig, loads
from .entropy import HuffmanTable
from .errors import FormatError
from .saab import SaabStage, SaabTransform
from .vq import Codebook

MAGIC = b"MGBM"
VERSION = 1


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def dump_model(model) -> bytes:
    cfg: CodecConfig = model.config
    text = cfg.dumps().encode("utf-8")
    out = [MAGIC, struct.pack("<BI", VERSION, len(text)), text]
    cells = sorted(model.codebooks, key=lambda c: (-c[0], -c[1]))
    out.append(struct.pack("<H", len(cells)))
    for (n, m) in cells:
        cb: Codebook = model.codebooks[(n, m)]
        spectral = cb.saab is not None
        out.append(struct.pack("<BBBHH", n, m, 0 if spectral else 1, cb.k, cb.dim))
        if spectral:
            out.append(struct.pack("<B", len(cb.saab.stages)))
            for st in cb.saab.stages:
                out.append(struct.pack("<HHH", st.in_side, st.in_channels, len(st.kept)))
                out.append(_f32(st.kernels))
                out.append(_f32(st.energies))
                out.append(np.asarray(st.kept, dtype="<u2").tobytes())
        out.append(_f32(cb.centroids))
        out.append(_f32(cb.lut))
        lengths = model.huffman[(n, m)].lengths
        if len(lengths) != cb.k or max(lengths) > 255:
            raise FormatError(f"Huffman table for C_{n},{m} cannot be stored")
        out.append(bytes(lengths))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated model file")
        b = self.data[self.pos : self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def f32(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)


def load_model(data: bytes):
    r = _Reader(bytes(data))
    if r.take(4) != MAGIC:
        raise FormatError("not a model file (bad magic)")
    version, clen = r.unpack("<BI")
    if version != VERSION:
        raise FormatError(f"unsupported model version {version}")
    config = loads(r.take(clen).decode("utf-8"))
    (ncells,) = r.unpack("<H")
    codebooks, huffman = {}, {}
    C = config.channels
    for _ in range(ncells):
        n, m, space, k, dim = r.unpack("<BBBHH")
        saab = None
        if space == 0:
            (nst,) = r.unpack("<B")
            stages = []
            for _ in range(nst):
                in_side, in_ch, nkept = r.unpack("<HHH")
                d = 4 * in_ch
                kernels = r.f32(d * d).reshape(d, d)
                energies = r.f32(d)
                kept = np.frombuffer(r.take(2 * nkept), dtype="<u2").astype(np.int64)
                stages.append(SaabStage(in_side, in_ch, kernels, kept, energies))
            saab = SaabTransform(block_side=1 << m, channels=C, stages=tuple(stages))
        elif space != 1:
            raise FormatError(f"unknown codebook space tag {space}")
        centroids = r.f32(k * dim).reshape(k, dim)
        s = 1 << m
        lut = r.f32(k * s * s * C).reshape(k, s, s, C)
        lengths = tuple(r.take(k))
        codebooks[(n, m)] = Codebook(n=n, m=m, channels=C, centroids=centroids, lut=lut, saab=saab)
        huffman[(n, m)] = HuffmanTable(lengths)
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after model data")
    missing = set(config.cells) - set(codebooks)
    if missing:
        raise FormatError(f"model lacks codebooks for {sorted(missing)}")
    return config, codebooks, huffman
