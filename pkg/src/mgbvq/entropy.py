"""Canonical Huffman coding of codeword indices.

Tables are fully described by their code lengths, which is what the model
file stores.  Bits are packed MSB-first.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .errors import CorruptStreamError, InvalidInputError


class BitWriter:
    def __init__(self):
        self._chunks: list[str] = []
        self.nbits = 0

    def write(self, value: int, length: int):
        if length:
            self._chunks.append(format(value, f"0{length}b"))
            self.nbits += length

    def write_bits(self, bits):
        s = "".join("1" if b else "0" for b in bits)
        self._chunks.append(s)
        self.nbits += len(s)

    def getvalue(self) -> bytes:
        """Packed bytes, zero-padded to a byte boundary."""
        s = "".join(self._chunks)
        if not s:
            return b""
        s += "0" * (-len(s) % 8)
        return int(s, 2).to_bytes(len(s) // 8, "big")


class BitReader:
    def __init__(self, data: bytes):
        self.bits = np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8)).tolist()
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.bits) - self.pos

    def read(self, length: int) -> int:
        if self.pos + length > len(self.bits):
            raise CorruptStreamError("bit stream exhausted")
        v = 0
        for b in self.bits[self.pos : self.pos + length]:
            v = (v << 1) | b
        self.pos += length
        return v

    def read_flags(self, count: int) -> list[int]:
        if self.pos + count > len(self.bits):
            raise CorruptStreamError("bit stream exhausted")
        out = self.bits[self.pos : self.pos + count]
        self.pos += count
        return out


def huffman_lengths(freqs) -> list[int]:
    """Code lengths of an optimal prefix code for ``freqs`` (used as given, no smoothing).

    Merge ties are broken by lower total count, then lower smallest symbol.
    """
    n = len(freqs)
    if n == 1:
        return [1]
    heap = [(int(f), s, s) for s, f in enumerate(freqs)]
    heapq.heapify(heap)
    parent = list(range(n))
    children: dict[int, tuple[int, int]] = {}
    next_id = n
    while len(heap) > 1:
        fa, sa, a = heapq.heappop(heap)
        fb, sb, b = heapq.heappop(heap)
        children[next_id] = (a, b)
        heapq.heappush(heap, (fa + fb, min(sa, sb), next_id))
        next_id += 1
    lengths = [0] * n
    stack = [(heap[0][2], 0)]
    while stack:
        node, depth = stack.pop()
        if node < n:
            lengths[node] = depth
        else:
            a, b = children[node]
            stack.append((a, depth + 1))
            stack.append((b, depth + 1))
    return lengths


@dataclass(frozen=True)
class HuffmanTable:
    lengths: tuple[int, ...]

    def __post_init__(self):
        if not self.lengths:
            raise InvalidInputError("empty alphabet")
        if any(l < 1 for l in self.lengths):
            raise InvalidInputError("every symbol needs a code length >= 1")
        if len(self.lengths) > 1 and sum(2.0 ** -l for l in self.lengths) > 1.0 + 1e-12:
            raise InvalidInputError("code lengths violate the Kraft inequality")
        codes = [0] * len(self.lengths)
        order = sorted(range(len(self.lengths)), key=lambda s: (self.lengths[s], s))
        code = 0
        prev = self.lengths[order[0]]
        max_len = max(self.lengths)
        first = [0] * (max_len + 2)
        count = [0] * (max_len + 2)
        offset = [0] * (max_len + 2)
        for i, s in enumerate(order):
            l = self.lengths[s]
            code <<= l - prev
            prev = l
            if count[l] == 0:
                first[l] = code
                offset[l] = i
            count[l] += 1
            codes[s] = code
            code += 1
        object.__setattr__(self, "codes", tuple(codes))
        object.__setattr__(self, "_decode", (first, count, offset, [order[i] for i in range(len(order))], max_len))

    @property
    def alphabet_size(self) -> int:
        return len(self.lengths)

    def cost(self, symbols) -> int:
        lengths = np.asarray(self.lengths)
        return int(lengths[np.asarray(symbols, dtype=np.int64)].sum()) if len(symbols) else 0


def build_huffman(freqs) -> HuffmanTable:
    """Canonical Huffman table for ``freqs`` after add-one smoothing."""
    freqs = [int(f) for f in freqs]
    if not freqs:
        raise InvalidInputError("empty alphabet")
    if any(f < 0 for f in freqs):
        raise InvalidInputError("frequencies must be non-negative")
    return HuffmanTable(tuple(huffman_lengths([f + 1 for f in freqs])))


def huffman_write(t: HuffmanTable, symbols, writer: BitWriter):
    codes, lengths = t.codes, t.lengths
    n = t.alphabet_size
    for s in symbols:
        s = int(s)
        if not 0 <= s < n:
            raise InvalidInputError(f"symbol {s} outside alphabet of size {n}")
        writer.write(codes[s], lengths[s])


def huffman_encode(t: HuffmanTable, symbols) -> bytes:
    w = BitWriter()
    huffman_write(t, symbols, w)
    return w.getvalue()


def huffman_read(t: HuffmanTable, reader: BitReader, count: int) -> list[int]:
    first, cnt, offset, order, max_len = t._decode
    bits = reader.bits
    pos = reader.pos
    end = len(bits)
    out = []
    for _ in range(count):
        code = 0
        length = 0
        while True:
            if pos >= end:
                raise CorruptStreamError("bits exhausted before all symbols were decoded")
            code = (code << 1) | bits[pos]
            pos += 1
            length += 1
            if length > max_len:
                raise CorruptStreamError("invalid Huffman code")
            k = code - first[length]
            if cnt[length] and 0 <= k < cnt[length]:
                out.append(order[offset[length] + k])
                break
    reader.pos = pos
    return out


def huffman_decode(t: HuffmanTable, data: bytes, count: int) -> list[int]:
    return huffman_read(t, BitReader(data), count)
