import heapq
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mgbvq.entropy import (
    BitReader,
    BitWriter,
    HuffmanTable,
    build_huffman,
    huffman_decode,
    huffman_encode,
    huffman_lengths,
)
from mgbvq.errors import CorruptStreamError, InvalidInputError


def optimal_cost(freqs):
    """Minimum total code length: the sum of all merge weights in any Huffman tree."""
    h = list(freqs)
    heapq.heapify(h)
    total = 0
    while len(h) > 1:
        a, b = heapq.heappop(h), heapq.heappop(h)
        total += a + b
        heapq.heappush(h, a + b)
    return total


@given(st.lists(st.integers(1, 10_000), min_size=2, max_size=60))
def test_lengths_are_optimal(freqs):
    lengths = huffman_lengths(freqs)
    assert sum(f * l for f, l in zip(freqs, lengths)) == optimal_cost(freqs)
    assert math.isclose(sum(2.0 ** -l for l in lengths), 1.0)


@given(st.lists(st.integers(0, 500), min_size=1, max_size=40), st.data())
def test_round_trip(freqs, data):
    t = build_huffman(freqs)
    syms = data.draw(st.lists(st.integers(0, len(freqs) - 1), max_size=200))
    enc = huffman_encode(t, syms)
    assert len(enc) == -(-t.cost(syms) // 8)
    assert huffman_decode(t, enc, len(syms)) == syms


@given(st.lists(st.integers(1, 30), min_size=2, max_size=30))
def test_canonical_codes_are_prefix_free(freqs):
    t = build_huffman(freqs)
    words = [format(c, f"0{l}b") for c, l in zip(t.codes, t.lengths)]
    for i, a in enumerate(words):
        for j, b in enumerate(words):
            if i != j:
                assert not b.startswith(a)
    # canonical: shorter codes sort first, equal lengths by symbol
    order = sorted(range(len(words)), key=lambda s: (t.lengths[s], s))
    vals = [int(words[s].ljust(max(t.lengths), "0"), 2) for s in order]
    assert vals == sorted(vals)


def test_mean_length_within_one_bit_of_entropy():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(2, 64))
        counts = rng.integers(0, 1000, k)
        t = build_huffman(counts)
        p = (counts + 1) / (counts + 1).sum()
        H = -np.sum(p * np.log2(p))
        mean = float(np.sum(p * np.array(t.lengths)))
        assert H - 1e-9 <= mean <= H + 1


def test_single_symbol_alphabet():
    t = build_huffman([5])
    assert t.lengths == (1,)
    assert huffman_decode(t, huffman_encode(t, [0, 0, 0]), 3) == [0, 0, 0]
    with pytest.raises(CorruptStreamError):
        huffman_decode(t, b"\xff", 1)


def test_smoothing_gives_unseen_symbols_a_code():
    t = build_huffman([1000, 0, 0, 0])
    assert all(l >= 1 for l in t.lengths)
    assert t.lengths[0] == 1


def test_tie_breaking_is_deterministic():
    assert huffman_lengths([1, 1, 1, 1]) == [2, 2, 2, 2]
    assert huffman_lengths([3, 1, 1, 1]) == huffman_lengths([3, 1, 1, 1])
    assert huffman_lengths([1, 1, 2]) == [2, 2, 1]


def test_truncated_payload():
    t = build_huffman([1, 1, 1, 1, 1, 1, 1, 1])
    data = huffman_encode(t, [3] * 5)
    with pytest.raises(CorruptStreamError):
        huffman_decode(t, data[:1], 5)


def test_table_validation():
    with pytest.raises(InvalidInputError):
        HuffmanTable((1, 1, 1))
    with pytest.raises(InvalidInputError):
        HuffmanTable(())
    with pytest.raises(InvalidInputError):
        build_huffman([1, -1])
    with pytest.raises(InvalidInputError):
        huffman_encode(build_huffman([1, 1]), [2])


def test_bit_io():
    w = BitWriter()
    w.write(0b101, 3)
    w.write_bits([1, 1, 0, 0, 1, 0, 1])
    assert w.nbits == 10
    assert w.getvalue() == bytes([0b10111001, 0b01000000])
    r = BitReader(w.getvalue())
    assert r.read(3) == 5
    assert r.read_flags(7) == [1, 1, 0, 0, 1, 0, 1]
    assert r.remaining == 6
    with pytest.raises(CorruptStreamError):
        r.read(7)
    assert BitWriter().getvalue() == b""
