"""Codebook training, nearest-codeword search and quad-tree grid coding.

A grid ``G_n`` is coded with a suite of codebooks ``C_{n,n} .. C_{n,m_min}``.
Level 0 quantizes the whole ``2^n`` AC image with ``C_{n,n}``.  Level ``L``
looks at the four quadrants of every block that was split at level
``L - 1``; a quadrant whose current residual MSE reaches the threshold is
quantized with ``C_{n,n-L}`` and becomes a split candidate itself, the rest
are terminated.  Blocks, flags and indices are always visited in the
quad-tree's level order (Morton order at each level).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, CorruptStreamError, InvalidInputError, TrainingError
from .ratecontrol import QuadTree
from .saab import SaabTransform, saab_forward, saab_inverse

SPECTRAL = "spectral"
SPATIAL = "spatial"


# ---------------------------------------------------------------- k-means


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    history: list[float]
    iterations: int


def _sq_dists_fast(x, c, x_sq):
    d = x_sq[:, None] - 2.0 * (x @ c.T) + np.einsum("ij,ij->i", c, c)[None, :]
    return np.maximum(d, 0.0)


def _row_sq(x, c):
    d = x - c
    return np.einsum("ij,ij->i", d, d)


def _kmeans_pp(x, k, rng, x_sq):
    n = len(x)
    centers = [int(rng.integers(n))]
    closest = _sq_dists_fast(x, x[centers], x_sq)[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            raise TrainingError("degenerate samples: fewer distinct points than codewords")
        r = rng.random() * total
        i = int(np.searchsorted(np.cumsum(closest), r, side="right"))
        i = min(i, n - 1)
        while closest[i] <= 0:
            i = (i + 1) % n
        centers.append(i)
        closest = np.minimum(closest, _row_sq(x, x[i][None, :]))
    return x[centers].copy()


def kmeans(samples, k: int, max_iters: int = 100, seed: int = 0) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    ``history`` holds the total squared distortion after every assignment;
    it never increases.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError("samples must be a 2-D array")
    n = len(x)
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if n < k:
        raise TrainingError(f"{n} samples is fewer than k={k}")
    if k > 1 and len(np.unique(x, axis=0)) < k:
        raise TrainingError(f"degenerate samples: fewer than k={k} distinct points")
    rng = np.random.default_rng(seed)
    x_sq = np.einsum("ij,ij->i", x, x)
    c = _kmeans_pp(x, k, rng, x_sq) if k > 1 else x.mean(axis=0, keepdims=True)
    labels = np.argmin(_sq_dists_fast(x, c, x_sq), axis=1)
    dist = _row_sq(x, c[labels])
    history = [float(dist.sum())]
    it = 0
    for it in range(1, max_iters + 1):
        counts = np.bincount(labels, minlength=k)
        new_c = np.zeros_like(c)
        np.add.at(new_c, labels, x)
        nonempty = counts > 0
        new_c[nonempty] /= counts[nonempty, None]
        new_c[~nonempty] = c[~nonempty]
        if not nonempty.all():
            new_dist = _row_sq(x, new_c[labels])
            for j in np.flatnonzero(~nonempty):
                far = int(np.argmax(new_dist))
                new_c[j] = x[far]
                new_dist[far] = 0.0
        # keep the old label unless the new candidate is exactly closer
        cand = np.argmin(_sq_dists_fast(x, new_c, x_sq), axis=1)
        d_old = _row_sq(x, new_c[labels])
        d_new = _row_sq(x, new_c[cand])
        new_labels = np.where(d_new < d_old, cand, labels)
        total = float(np.minimum(d_new, d_old).sum())
        if total > history[-1]:
            break
        changed = not np.array_equal(new_labels, labels)
        c, labels = new_c, new_labels
        history.append(total)
        if not changed:
            break
    return KMeansResult(centroids=c, labels=labels, history=history, iterations=it)


# --------------------------------------------------------------- codebooks


@dataclass
class Codebook:
    n: int
    m: int
    channels: int
    centroids: np.ndarray  # float32 (k, dim)
    lut: np.ndarray  # float32 (k, s, s, C)
    saab: SaabTransform | None = None
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def space(self) -> str:
        return SPECTRAL if self.saab is not None else SPATIAL

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def side(self) -> int:
        return 1 << self.m

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def to_space(self, blocks: np.ndarray) -> np.ndarray:
        """Map ``(B, s, s, C)`` spatial blocks to this codebook's search space."""
        if self.saab is not None:
            return saab_forward(self.saab, blocks)
        return blocks.reshape(len(blocks), -1)


def make_codebook(n, m, channels, centroids, saab=None) -> Codebook:
    """Freeze centroids to float32 and precompute the spatial look-up table."""
    if m > n:
        raise InvalidInputError(f"block exponent {m} exceeds grid {n}")
    c32 = np.asarray(centroids, dtype=np.float32)
    s = 1 << m
    if saab is not None:
        lut = saab_inverse(saab, c32.astype(np.float64))
    elif c32.shape[1] == s * s * channels:
        lut = c32.astype(np.float64).reshape(len(c32), s, s, channels)
    else:
        # plain vector codebook (no block geometry)
        lut = c32.astype(np.float64)
    return Codebook(n=n, m=m, channels=channels, centroids=c32, lut=lut.astype(np.float32), saab=saab)


def train_codebook(
    samples,
    k: int,
    *,
    n: int = 0,
    m: int = 0,
    channels: int = 1,
    saab: SaabTransform | None = None,
    max_iters: int = 100,
    seed: int = 0,
    include_zero: bool = False,
) -> Codebook:
    """Train a codebook on vectors already in the codebook's space.

    With ``include_zero`` only ``k - 1`` centroids are learned and the zero
    codeword is appended as the last entry.
    """
    x = np.asarray(samples, dtype=np.float64)
    learn = k - 1 if include_zero else k
    cents = np.zeros((0, x.shape[1]))
    hist: list[float] = []
    if learn >= 1:
        res = kmeans(x, learn, max_iters=max_iters, seed=seed)
        cents, hist = res.centroids, res.history
    if include_zero:
        cents = np.vstack([cents, np.zeros((1, x.shape[1]))])
    cb = make_codebook(n, m, channels, cents, saab)
    cb.history = hist
    return cb


def nearest(cb_centroids: np.ndarray, vecs: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Exact nearest centroid per row; ties go to the lowest index."""
    c = cb_centroids.astype(np.float64)
    out = np.empty(len(vecs), dtype=np.int64)
    for i in range(0, len(vecs), chunk):
        out[i : i + chunk] = np.argmin(cdist(vecs[i : i + chunk], c, "sqeuclidean"), axis=1)
    return out


def quantize(cb: Codebook, vec) -> tuple[int, np.ndarray]:
    v = np.asarray(vec, dtype=np.float64).ravel()
    if v.shape[0] != cb.dim:
        raise InvalidInputError(f"vector dimension {v.shape[0]} does not match codebook dimension {cb.dim}")
    idx = int(nearest(cb.centroids, v[None, :])[0])
    return idx, cb.lut[idx].astype(np.float64)


# ------------------------------------------------------------ grid coding


@dataclass
class GridCode:
    n: int
    m_min: int
    qt: QuadTree
    indices: list[np.ndarray]  # one int array per level, level order
    recon: np.ndarray | None = None
    residual: np.ndarray | None = None

    @property
    def depth(self) -> int:
        return self.n - self.m_min + 1


def morton_order(b: int) -> np.ndarray:
    """Raster positions of a ``b x b`` block grid listed in Z order (TL, TR, BL, BR)."""
    idx = np.arange(b * b)
    r = np.zeros_like(idx)
    c = np.zeros_like(idx)
    bit = 0
    v = idx.copy()
    while (1 << bit) < b:
        c |= (v & 1) << bit
        r |= ((v >> 1) & 1) << bit
        v >>= 2
        bit += 1
    return r * b + c


def _blocks(x: np.ndarray, s: int) -> np.ndarray:
    """(B, S, S, C) -> (B, S/s, S/s, s, s, C) view-copy of non-overlapping blocks."""
    B, S, _, C = x.shape
    b = S // s
    return x.reshape(B, b, s, b, s, C).transpose(0, 1, 3, 2, 4, 5)


def _add_blocks(x: np.ndarray, s: int, mask: np.ndarray, values: np.ndarray):
    """In place: add ``values`` to the masked ``s``-blocks of ``x`` (row-major mask order)."""
    B, S, _, C = x.shape
    b = S // s
    view = x.reshape(B, b, s, b, s, C)
    bi, ri, ci = np.nonzero(mask)
    view[bi, ri, :, ci, :, :] += values


def _thresholds(msethresh, n: int, m_min: int) -> dict[int, float]:
    if isinstance(msethresh, dict):
        return {m: float(msethresh[m]) for m in range(m_min, n + 1)}
    return {m: float(msethresh) for m in range(m_min, n + 1)}


@dataclass
class _BatchResult:
    flags: list[np.ndarray]  # per level (B, b, b) bool, flag of each block position
    parents: list[np.ndarray]  # per level (B, b, b) bool, block has a flag entry
    indices: list[np.ndarray]  # per level (B, b, b) int, -1 when not coded
    recon: np.ndarray
    residual: np.ndarray


def encode_levels(
    targets: np.ndarray,
    n: int,
    m_min: int,
    suite: dict[int, Codebook] | Callable[[int, np.ndarray], Codebook],
    msethresh,
) -> _BatchResult:
    """Quad-tree VQ of a ``(B, 2^n, 2^n, C)`` stack of coding targets.

    ``suite`` is either a mapping ``m -> Codebook`` or a callable invoked as
    ``suite(m, coded_blocks, all_blocks)`` right before level ``m`` is
    quantized, which lets training fit each codebook on the exact blocks the
    encoder will see (``all_blocks`` is every current residual block at that
    size, terminated or not).
    """
    B, S, _, C = targets.shape
    if S != 1 << n:
        raise InvalidInputError(f"grid G_{n} needs side {1 << n}, got {S}")
    th = _thresholds(msethresh, n, m_min)
    residual = targets.astype(np.float64).copy()
    recon = np.zeros_like(residual)
    flags_all, parents_all, idx_all = [], [], []
    split = None
    for L in range(n - m_min + 1):
        m = n - L
        s = 1 << m
        b = 1 << L
        blk = _blocks(residual, s)
        block_mse = np.mean(blk * blk, axis=(3, 4, 5))
        if L == 0:
            has_entry = np.ones((B, 1, 1), dtype=bool)
            coded = has_entry
        else:
            has_entry = split.repeat(2, axis=1).repeat(2, axis=2)
            coded = has_entry & (block_mse >= th[m])
        idx = np.full((B, b, b), -1, dtype=np.int64)
        if callable(suite):
            cb = suite(m, blk[coded], blk.reshape(-1, s, s, C))
        else:
            cb = suite.get(m)
        if coded.any():
            sel = blk[coded]
            if cb is None:
                raise ConfigError(f"no codebook C_{n},{m}")
            if cb.m != m or cb.side != s:
                raise ConfigError(f"codebook for C_{n},{m} has block side {cb.side}")
            codes = nearest(cb.centroids, cb.to_space(sel))
            idx[coded] = codes
            lut = cb.lut.astype(np.float64)[codes]
            _add_blocks(recon, s, coded, lut)
            _add_blocks(residual, s, coded, -lut)
            blk = _blocks(residual, s)
            block_mse = np.mean(blk * blk, axis=(3, 4, 5))
        if L == 0:
            flag = block_mse >= th[m]
        else:
            flag = coded
        flags_all.append(flag)
        parents_all.append(has_entry)
        idx_all.append(idx)
        # level-0 flag decides whether quadrants are examined; deeper flags mark coded blocks
        split = flag if L < n - m_min else None
        if L == 0 and n == m_min:
            flags_all[0] = np.zeros_like(flag)
    return _BatchResult(flags_all, parents_all, idx_all, recon, targets - recon)


def _to_gridcode(res: _BatchResult, i: int, n: int, m_min: int) -> GridCode:
    levels, indices = [], []
    for L, (flag, par, idx) in enumerate(zip(res.flags, res.parents, res.indices)):
        b = 1 << L
        order = morton_order(b)
        f = flag[i].ravel()[order]
        p = par[i].ravel()[order]
        levels.append(f[p].astype(np.uint8))
        ix = idx[i].ravel()[order]
        indices.append(ix[ix >= 0])
    return GridCode(
        n=n,
        m_min=m_min,
        qt=QuadTree(levels, 1 << n),
        indices=indices,
        recon=res.recon[i],
        residual=res.residual[i],
    )


def encode_grid(ac, suite: dict[int, Codebook], msethresh=70.0, m_min: int | None = None) -> GridCode:
    ac = np.asarray(ac, dtype=np.float64)
    n = int(ac.shape[0]).bit_length() - 1
    if ac.ndim != 3 or ac.shape[0] != ac.shape[1] or ac.shape[0] != 1 << n:
        raise InvalidInputError(f"AC image must be 2^n x 2^n x C, got {ac.shape}")
    if m_min is None:
        m_min = min(suite)
    for m in range(m_min, n + 1):
        if m not in suite:
            raise ConfigError(f"missing codebook C_{n},{m}")
    res = encode_levels(ac[None], n, m_min, suite, msethresh)
    code = _to_gridcode(res, 0, n, m_min)
    # the reported reconstruction is the decoder's, by construction identical
    code.recon = decode_grid(code, suite)
    code.residual = ac - code.recon
    return code


def code_positions(qt: QuadTree) -> list[list[tuple[int, int]]]:
    """Block coordinates ``(row, col)`` of every coded block, per level, in stream order."""
    out = [[(0, 0)]]
    split = [(0, 0)] if qt.levels[0][0] else []
    for L in range(1, qt.depth):
        flags = qt.levels[L]
        coded = []
        for j, (r, c) in enumerate(split):
            for q, (dr, dc) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
                if flags[4 * j + q]:
                    coded.append((2 * r + dr, 2 * c + dc))
        out.append(coded)
        split = coded
    return out


def decode_grid(code: GridCode, suite: dict[int, Codebook]) -> np.ndarray:
    n = code.n
    positions = code_positions(code.qt)
    if len(code.indices) != len(positions):
        raise CorruptStreamError("level count does not match the quad-tree", grid=n)
    top = suite.get(n)
    if top is None:
        raise ConfigError(f"missing codebook C_{n},{n}")
    C = top.channels
    S = 1 << n
    recon = np.zeros((1, S, S, C))
    for L, (pos, idx) in enumerate(zip(positions, code.indices)):
        m = n - L
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) != len(pos):
            raise CorruptStreamError(f"level {L}: {len(idx)} indices for {len(pos)} coded blocks", grid=n)
        if not len(pos):
            continue
        cb = suite.get(m)
        if cb is None:
            raise ConfigError(f"missing codebook C_{n},{m}")
        if idx.min() < 0 or idx.max() >= cb.k:
            raise CorruptStreamError(f"level {L}: codeword index out of range", grid=n)
        b = 1 << L
        mask = np.zeros((1, b, b), dtype=bool)
        rows = np.array([p[0] for p in pos])
        cols = np.array([p[1] for p in pos])
        mask[0, rows, cols] = True
        # _add_blocks consumes values in row-major mask order
        order = np.lexsort((cols, rows))
        _add_blocks(recon, 1 << m, mask, cb.lut.astype(np.float64)[idx[order]])
    return recon[0]
