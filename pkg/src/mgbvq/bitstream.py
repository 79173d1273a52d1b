"""Progressive container: header, raw DC samples, then one section per grid.

Layout (all integers little-endian)::

    header   "MGBV" | u8 version | u8 N | u8 n_dc | u8 channels | 8-byte model id
    DC       4^n_dc * channels raw u8 samples, row-major, channel-interleaved
    section  u32 body length | body
    body     u8 grid | u16 CRC-16 of the rest | quad-tree bits | one Huffman
             payload per level, coarsest block size first; the quad-tree and
             every payload are zero-padded to a byte boundary

Sections appear in ascending grid order, so any prefix ending on a section
boundary is itself a valid (coarser) stream.
"""

from __future__ import annotations

import binascii
import struct
from dataclasses import dataclass, field

import numpy as np

from .entropy import BitReader, BitWriter, huffman_read, huffman_write
from .errors import CorruptStreamError, FormatError, InvalidInputError, ModelMismatchError
from .pyramid import lanczos_upsample, upsample_to
from .ratecontrol import read_quadtree, serialize_quadtree
from .vq import GridCode, decode_grid

MAGIC = b"MGBV"
VERSION = 1
_HEADER = struct.Struct("<4sBBBB8s")
HEADER_SIZE = _HEADER.size
SECTION_FRAMING_BITS = 8 * (4 + 1 + 2)


@dataclass(frozen=True)
class StreamHeader:
    N: int
    n_dc: int
    channels: int
    model_id: bytes
    version: int = VERSION

    def pack(self) -> bytes:
        if not (self.n_dc < self.N <= 14):
            raise InvalidInputError("header needs n_dc < N <= 14")
        return _HEADER.pack(MAGIC, self.version, self.N, self.n_dc, self.channels, self.model_id)

    @classmethod
    def unpack(cls, data: bytes) -> "StreamHeader":
        if len(data) < HEADER_SIZE:
            raise FormatError("stream shorter than its header")
        magic, version, N, n_dc, channels, model_id = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported stream version {version}")
        if not (2 <= n_dc < N <= 14) or channels not in (1, 3):
            raise FormatError("inconsistent stream header")
        return cls(N=N, n_dc=n_dc, channels=channels, model_id=model_id, version=version)


@dataclass
class GridSection:
    n: int
    qt_bytes: bytes
    qt_bits: int
    payloads: list[bytes] = field(default_factory=list)

    def body(self) -> bytes:
        rest = self.qt_bytes + b"".join(self.payloads)
        return struct.pack("<BH", self.n, binascii.crc_hqx(rest, 0)) + rest

    def to_bytes(self) -> bytes:
        body = self.body()
        return struct.pack("<I", len(body)) + body


def build_section(code: GridCode, tables: dict) -> GridSection:
    w = BitWriter()
    w.write_bits(serialize_quadtree(code.qt))
    payloads = []
    for L, idx in enumerate(code.indices):
        pw = BitWriter()
        huffman_write(tables[(code.n, code.n - L)], idx, pw)
        payloads.append(pw.getvalue())
    return GridSection(n=code.n, qt_bytes=w.getvalue(), qt_bits=w.nbits, payloads=payloads)


def pack_dc(dc_q: np.ndarray) -> bytes:
    return np.asarray(dc_q, dtype=np.uint8).tobytes()


def write_stream(header: StreamHeader, dc_bytes: bytes, sections) -> bytes:
    want = header.channels * 4**header.n_dc
    if len(dc_bytes) != want:
        raise InvalidInputError(f"DC section must hold {want} bytes, got {len(dc_bytes)}")
    grids = [s.n for s in sections]
    if grids != list(range(header.n_dc + 1, header.n_dc + 1 + len(grids))) or (grids and grids[-1] > header.N):
        raise InvalidInputError(f"sections must cover consecutive grids from G_{header.n_dc + 1}, got {grids}")
    return header.pack() + bytes(dc_bytes) + b"".join(s.to_bytes() for s in sections)


@dataclass
class ParsedSection:
    n: int
    code: GridCode
    framing_bits: int
    qt_bits: int
    qt_pad_bits: int
    level_bits: list[int]  # padded payload bits per level


@dataclass
class ParsedStream:
    header: StreamHeader
    dc: np.ndarray  # (side, side, C) uint8
    sections: list[ParsedSection]
    nbytes: int


def _parse_section(body: bytes, n_expected: int, model) -> ParsedSection:
    if len(body) < 3:
        raise CorruptStreamError("section body too short", grid=n_expected)
    n, crc = struct.unpack_from("<BH", body)
    if n != n_expected:
        raise CorruptStreamError(f"expected grid {n_expected}, found {n}", grid=n_expected)
    rest = body[3:]
    if binascii.crc_hqx(rest, 0) != crc:
        raise CorruptStreamError("checksum mismatch", grid=n)
    cfg = model.config
    m_min = cfg.m_min(n)
    depth = n - m_min + 1
    reader = BitReader(rest)
    try:
        qt = read_quadtree(reader, 1 << n, depth)
    except CorruptStreamError as exc:
        raise CorruptStreamError(f"quad-tree: {exc}", grid=n) from None
    qt_bits = reader.pos
    qt_pad = -qt_bits % 8
    if any(reader.read_flags(qt_pad)):
        raise CorruptStreamError("non-zero quad-tree padding", grid=n)
    counts = [1] + [int(l.sum()) for l in qt.levels[1:]]
    indices, level_bits = [], []
    for L, count in enumerate(counts):
        start = reader.pos
        try:
            idx = huffman_read(model.huffman[(n, n - L)], reader, count)
        except CorruptStreamError as exc:
            raise CorruptStreamError(f"level {L}: {exc}", grid=n) from None
        pad = -(reader.pos - start) % 8
        if reader.remaining < pad or any(reader.read_flags(pad)):
            raise CorruptStreamError(f"level {L}: bad payload padding", grid=n)
        indices.append(np.array(idx, dtype=np.int64))
        level_bits.append(reader.pos - start)
    if reader.remaining:
        raise CorruptStreamError(f"{reader.remaining // 8} trailing bytes", grid=n)
    code = GridCode(n=n, m_min=m_min, qt=qt, indices=indices)
    return ParsedSection(n, code, SECTION_FRAMING_BITS, qt_bits, qt_pad, level_bits)


def parse_stream(data: bytes, model, max_grid: int | None = None) -> ParsedStream:
    data = bytes(data)
    header = StreamHeader.unpack(data)
    cfg = model.config
    if header.model_id != model.model_id:
        raise ModelMismatchError("stream was written with a different model")
    if (header.N, header.n_dc, header.channels) != (cfg.N, cfg.n_dc, cfg.channels):
        raise ModelMismatchError("stream geometry does not match the model")
    side = 1 << header.n_dc
    dc_len = side * side * header.channels
    pos = HEADER_SIZE
    if len(data) < pos + dc_len:
        raise CorruptStreamError("truncated DC section", grid=header.n_dc)
    dc = np.frombuffer(data, dtype=np.uint8, count=dc_len, offset=pos).reshape(side, side, header.channels)
    pos += dc_len
    last = header.N if max_grid is None else max_grid
    if not (header.n_dc <= last <= header.N):
        raise InvalidInputError(f"max_grid must lie in [{header.n_dc}, {header.N}]")
    sections = []
    n = header.n_dc + 1
    while pos < len(data):
        if n > header.N:
            raise CorruptStreamError("data after the finest grid section", grid=header.N)
        if len(data) - pos < 4:
            raise CorruptStreamError("truncated section length", grid=n)
        (blen,) = struct.unpack_from("<I", data, pos)
        if len(data) - pos - 4 < blen:
            raise CorruptStreamError("truncated section", grid=n)
        if n <= last:
            sections.append(_parse_section(data[pos + 4 : pos + 4 + blen], n, model))
        pos += 4 + blen
        n += 1
    return ParsedStream(header=header, dc=dc, sections=sections, nbytes=len(data))


def synthesize(dc_q: np.ndarray, recons) -> list[np.ndarray]:
    """Per-grid images: ``I_n = U(I_{n-1}) + recon_n`` starting from the stored DC."""
    cur = np.asarray(dc_q, dtype=np.float64)
    out = [cur]
    for r in recons:
        cur = lanczos_upsample(cur) + r
        out.append(cur)
    return out


def read_stream(data: bytes, model, max_grid: int | None = None) -> np.ndarray:
    """Decode up to ``max_grid`` and return the full-resolution (unclamped) image."""
    ps = parse_stream(data, model, max_grid)
    recons = []
    for sec in ps.sections:
        suite = model.suite(sec.n)
        try:
            recons.append(decode_grid(sec.code, suite))
        except CorruptStreamError:
            raise
        except Exception as exc:  # malformed content must never escape as a crash
            raise CorruptStreamError(str(exc), grid=sec.n) from exc
    img = synthesize(ps.dc, recons)[-1]
    return upsample_to(img, 1 << ps.header.N)


@dataclass
class BitAllocation:
    N: int
    n_dc: int
    header_bits: int
    bits: dict[tuple[str, int], int]  # (row, grid) -> bits; rows are "QT", "DC" or "C_m"

    @property
    def pixels(self) -> int:
        return 4**self.N

    @property
    def payload_bits(self) -> int:
        return sum(self.bits.values())

    @property
    def total_bpp(self) -> float:
        return self.payload_bits / self.pixels

    def bpp(self, row: str, n: int) -> float | None:
        b = self.bits.get((row, n))
        return None if b is None else b / self.pixels

    def grid_bits(self, n: int) -> int:
        return sum(v for (r, g), v in self.bits.items() if g == n)

    def rows(self) -> list[str]:
        ms = sorted({int(r[2:]) for (r, _) in self.bits if r.startswith("C_")}, reverse=True)
        return ["QT", "DC"] + [f"C_{m}" for m in ms]

    def format_table(self) -> str:
        grids = list(range(self.N, self.n_dc - 1, -1))
        head = ["".ljust(8)] + [f"G_{n}".rjust(10) for n in grids]
        lines = ["".join(head)]
        for row in self.rows():
            label = row if not row.startswith("C_") else f"C_*,{row[2:]}"
            cells = [label.ljust(8)]
            for n in grids:
                v = self.bpp(row, n)
                cells.append(("-" if v is None else f"{v:.3g}" if v < 1e-3 else f"{v:.4f}").rjust(10))
            lines.append("".join(cells))
        lines.append(f"total payload: {self.payload_bits} bits = {self.total_bpp:.6f} bpp "
                     f"(header {self.header_bits} bits not included)")
        return "\n".join(lines)


def bit_accounting(data: bytes, model) -> BitAllocation:
    ps = parse_stream(data, model)
    h = ps.header
    bits = {("DC", h.n_dc): 8 * ps.dc.size}
    for sec in ps.sections:
        bits[("QT", sec.n)] = sec.framing_bits + sec.qt_bits + sec.qt_pad_bits
        for L, b in enumerate(sec.level_bits):
            bits[(f"C_{sec.n - L}", sec.n)] = b
    alloc = BitAllocation(N=h.N, n_dc=h.n_dc, header_bits=8 * HEADER_SIZE, bits=bits)
    assert alloc.payload_bits == 8 * (ps.nbytes - HEADER_SIZE)
    return alloc
