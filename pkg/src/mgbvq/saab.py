"""Cascaded channel-wise Saab transforms (bias-free DC kernel + PCA per 2x2 stage).

A transform for ``2^m x 2^m x C`` blocks is a cascade of ``m`` stages.  Each
stage groups non-overlapping 2x2 spatial patches of its input, projects the
``4 * C_in`` patch vector onto an orthonormal basis (one constant DC kernel
followed by principal components of the DC-removed patches) and keeps only
the highest-energy output channels.  The last stage sees a single patch per
block, so the output is a ``K``-vector.

Because every stage is a partial isometry, the composite map ``W`` has
orthonormal rows: ``inverse(forward(x))`` is the orthogonal projection of
``x`` onto the retained subspace and ``forward(inverse(v)) == v``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, TrainingError

log = logging.getLogger(__name__)

MIN_SAMPLES_PER_COMPONENT = 10
RANK_TOL = 1e-10


@dataclass(frozen=True)
class SaabStage:
    in_side: int
    in_channels: int
    kernels: np.ndarray  # (4*in_channels, 4*in_channels) float32, orthonormal rows
    kept: np.ndarray  # retained row indices, energy order
    energies: np.ndarray  # per kernel row

    @property
    def out_channels(self) -> int:
        return len(self.kept)

    @property
    def kept_kernels(self) -> np.ndarray:
        return self.kernels[self.kept].astype(np.float64)


@dataclass(frozen=True)
class SaabTransform:
    block_side: int
    channels: int
    stages: tuple[SaabStage, ...]
    notes: tuple[str, ...] = field(default=(), compare=False)

    @property
    def K(self) -> int:
        return self.stages[-1].out_channels

    @property
    def input_dim(self) -> int:
        return self.block_side * self.block_side * self.channels


def default_keep_schedule(m: int, channels: int, K: int) -> list[int]:
    """Geometric per-stage channel budget from ``3C`` at stage 0 to ``K`` at the last stage."""
    if m < 1:
        raise InvalidInputError("block exponent must be >= 1")
    if K > 4**m * channels or K < 1:
        raise InvalidInputError(f"K={K} not attainable for {2**m}x{2**m}x{channels} blocks")
    if m == 1:
        return [K]
    start = 3 * channels
    keeps = []
    prev_cap = 4 * channels
    for j in range(m):
        v = start * (K / start) ** (j / (m - 1))
        k = max(1, min(int(round(v)), prev_cap))
        keeps.append(k)
        prev_cap = 4 * k
    keeps[-1] = K
    # widen earlier stages where the next one could not otherwise be reached
    for j in range(m - 2, -1, -1):
        keeps[j] = max(keeps[j], -(-keeps[j + 1] // 4))
    return keeps


def dihedral(blocks: np.ndarray, variant: int) -> np.ndarray:
    """One of the 8 rotations/reflections of a ``(B, s, s, C)`` block stack."""
    out = np.rot90(blocks, k=variant % 4, axes=(1, 2))
    if variant >= 4:
        out = out[:, :, ::-1]
    return out


def _to_patches(x: np.ndarray) -> np.ndarray:
    """(B, s, s, c) -> (B, s/2, s/2, 4c); patch vector order is (dy, dx, channel)."""
    b, s, _, c = x.shape
    h = s // 2
    return x.reshape(b, h, 2, h, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, h, h, 4 * c)


def _from_patches(p: np.ndarray, c: int) -> np.ndarray:
    b, h, _, _ = p.shape
    return p.reshape(b, h, h, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, 2 * h, 2 * h, c)


def _apply_stages(stages, x: np.ndarray) -> np.ndarray:
    for st in stages:
        x = _to_patches(x) @ st.kept_kernels.T
    return x


def _complement_basis(dim: int) -> np.ndarray:
    """Orthonormal (dim, dim-1) basis of the space orthogonal to the constant vector."""
    dc = np.full((dim, 1), 1.0 / math.sqrt(dim))
    # Householder reflection mapping e_0 to dc; its other columns span the complement
    v = dc[:, 0].copy()
    v[0] -= 1.0
    nv = v @ v
    if nv < 1e-30:
        return np.eye(dim)[:, 1:]
    H = np.eye(dim) - 2.0 * np.outer(v, v) / nv
    return H[:, 1:]


def _fix_signs(rows: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(len(rows)), idx])
    signs[signs == 0] = 1.0
    return rows * signs[:, None]


def _fit_stage(second_moment: np.ndarray, keep: int, in_side: int, in_channels: int, notes: list) -> SaabStage:
    dim = second_moment.shape[0]
    dc = np.full(dim, 1.0 / math.sqrt(dim))
    Q = _complement_basis(dim)
    evals, evecs = np.linalg.eigh(Q.T @ second_moment @ Q)
    order = np.argsort(-evals, kind="stable")
    ac = _fix_signs((Q @ evecs[:, order]).T)
    kernels = np.vstack([dc[None, :], ac])
    kernels32 = kernels.astype(np.float32)
    k64 = kernels32.astype(np.float64)
    energies = np.einsum("ij,jk,ik->i", k64, second_moment, k64)
    total = max(float(energies.sum()), 0.0)
    # responses below round-off of the float32 kernels count as exactly zero
    energies[energies <= RANK_TOL * total] = 0.0
    rank_order = np.lexsort((np.arange(dim), -energies))
    rank = int(np.count_nonzero(energies))
    if rank < keep:
        new_keep = max(1, rank)
        msg = f"stage at side {in_side}: covariance rank {rank} < keep {keep}, keeping {new_keep}"
        log.warning(msg)
        notes.append(msg)
        keep = new_keep
    return SaabStage(
        in_side=in_side,
        in_channels=in_channels,
        kernels=kernels32,
        kept=rank_order[:keep].astype(np.int64),
        energies=energies.astype(np.float32),
    )


def fit_saab(
    blocks,
    K: int,
    per_stage_keep=None,
    seed: int = 0,
    augment: int = 1,
    max_patches: int = 1 << 18,
    chunk: int = 64,
) -> SaabTransform:
    """Learn a Saab cascade from ``(B, s, s, C)`` sample blocks.

    ``augment`` (1, 2, 4 or 8) adds dihedral copies of every block; the
    sample-count requirement counts augmented blocks.  Early stages, which
    see many patches per block, estimate their second moments from a seeded
    subset of blocks capped at ``max_patches`` patches.
    """
    blocks = np.asarray(blocks)
    if blocks.ndim != 4 or blocks.shape[1] != blocks.shape[2]:
        raise InvalidInputError(f"expected (B, s, s, C) blocks, got {blocks.shape}")
    nb, side, _, channels = blocks.shape
    m = int(side).bit_length() - 1
    if side != 1 << m or m < 1:
        raise InvalidInputError(f"block side must be a power of two >= 2, got {side}")
    if augment not in (1, 2, 4, 8):
        raise InvalidInputError("augment must be 1, 2, 4 or 8")
    keeps = list(per_stage_keep) if per_stage_keep is not None else default_keep_schedule(m, channels, K)
    if len(keeps) != m or keeps[-1] != K:
        raise InvalidInputError(f"per-stage keep {keeps} must have {m} entries ending in K={K}")
    prev = channels
    for k in keeps:
        if k < 1 or k > 4 * prev:
            raise InvalidInputError(f"infeasible per-stage keep schedule {keeps}")
        prev = k
    n_samples = nb * augment
    if n_samples < MIN_SAMPLES_PER_COMPONENT * K:
        raise TrainingError(
            f"{n_samples} samples is too few for K={K} (need {MIN_SAMPLES_PER_COMPONENT * K})"
        )

    rng = np.random.default_rng(seed)
    pairs = np.array([(b, v) for v in range(augment) for b in range(nb)], dtype=np.int64)
    stages: list[SaabStage] = []
    notes: list[str] = []
    cin = channels
    for j in range(m):
        in_side = side >> j
        per_block = (in_side // 2) ** 2
        use = pairs
        need = -(-max_patches // per_block)
        if len(pairs) > need:
            pick = np.sort(rng.choice(len(pairs), size=need, replace=False))
            use = pairs[pick]
        dim = 4 * cin
        acc = np.zeros((dim, dim))
        count = 0
        for v in range(augment):
            sel = use[use[:, 1] == v, 0]
            for i in range(0, len(sel), chunk):
                x = dihedral(blocks[sel[i : i + chunk]].astype(np.float64), v)
                p = _to_patches(_apply_stages(stages, x)).reshape(-1, dim)
                acc += p.T @ p
                count += len(p)
        st = _fit_stage(acc / count, min(keeps[j], dim), in_side, cin, notes)
        stages.append(st)
        cin = st.out_channels
    return SaabTransform(block_side=side, channels=channels, stages=tuple(stages), notes=tuple(notes))


def _check_block(t: SaabTransform, block: np.ndarray) -> np.ndarray:
    block = np.asarray(block, dtype=np.float64)
    want = (t.block_side, t.block_side, t.channels)
    if block.shape[-3:] != want or block.ndim not in (3, 4):
        raise InvalidInputError(f"block shape {block.shape} does not match transform {want}")
    return block


def saab_forward(t: SaabTransform, block) -> np.ndarray:
    """Spectral vector(s) for one ``(s, s, C)`` block or a ``(B, s, s, C)`` stack."""
    block = _check_block(t, block)
    single = block.ndim == 3
    x = block[None] if single else block
    out = _apply_stages(t.stages, x).reshape(len(x), -1)
    return out[0] if single else out


def saab_inverse(t: SaabTransform, spec) -> np.ndarray:
    spec = np.asarray(spec, dtype=np.float64)
    single = spec.ndim == 1
    v = spec[None] if single else spec
    if v.ndim != 2 or v.shape[1] != t.K:
        raise InvalidInputError(f"spectral length {spec.shape[-1]} does not match K={t.K}")
    x = v.reshape(len(v), 1, 1, t.K)
    for st in reversed(t.stages):
        x = _from_patches(x @ st.kept_kernels, st.in_channels)
    return x[0] if single else x
