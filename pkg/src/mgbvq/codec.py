"""Training and the end-to-end encode/decode pipelines.

Grids are coded coarse to fine.  The DC image is stored as rounded 8-bit
samples and its rounding error, like every grid's quantization error, is
upsampled and added to the next grid's AC layer before that grid is coded::

    target_n = AC_n + U(R_{n-1}),    R_n = target_n - recon_n

so the decoder's image at grid ``n`` is exactly ``I_n - R_n`` and the final
distortion is the energy of ``R_N``.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import modelfile
from .bitstream import (
    StreamHeader,
    build_section,
    pack_dc,
    read_stream,
    synthesize,
    write_stream,
)
from .config import CodecConfig
from .entropy import HuffmanTable, build_huffman
from .errors import InvalidInputError, TrainingError
from .pyramid import as_image, forward_decompose, grid_index, lanczos_downsample, lanczos_upsample
from .saab import MIN_SAMPLES_PER_COMPONENT, dihedral, fit_saab, saab_forward
from .vq import Codebook, encode_grid, encode_levels, make_codebook, train_codebook

log = logging.getLogger(__name__)

# residual magnitudes below this are resampling round-off, not image content
NEGLIGIBLE = 1e-6


@dataclass
class Model:
    config: CodecConfig
    codebooks: dict[tuple[int, int], Codebook]
    huffman: dict[tuple[int, int], HuffmanTable]
    notes: list[str] = field(default_factory=list)
    _bytes: bytes | None = field(default=None, repr=False)

    def suite(self, n: int) -> dict[int, Codebook]:
        return {m: cb for (g, m), cb in self.codebooks.items() if g == n}

    def to_bytes(self) -> bytes:
        if self._bytes is None:
            self._bytes = modelfile.dump_model(self)
        return self._bytes

    @property
    def model_id(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()[:8]

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Model":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Model":
        config, codebooks, huffman = modelfile.load_model(data)
        return cls(config=config, codebooks=codebooks, huffman=huffman, _bytes=bytes(data))


def quantize_dc(dc: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(dc), 0, 255).astype(np.uint8)


def fit_to_grid(img, N: int) -> np.ndarray:
    """Lanczos-downsample a power-of-two image until it reaches side ``2^N``."""
    img = as_image(img)
    if grid_index(img) < N:
        raise InvalidInputError(f"image side {img.shape[0]} is below the model's {1 << N}")
    while grid_index(img) > N:
        img = lanczos_downsample(img)
    return img


# ----------------------------------------------------------------- training


def _cell_seed(seed: int, n: int, m: int) -> int:
    return (seed * 1_000_003 + n * 1009 + m * 17) % (2**32)


def _augment_factor(count: int, need: int, want: int) -> int:
    for f in (1, 2, 4, 8):
        if count * f >= max(need, want):
            return f
    return 8


class _CellTrainer:
    """Fits ``C_{n,m}`` on the blocks the closed-loop encoder hands it."""

    def __init__(self, config: CodecConfig, n: int, failures: list):
        self.config = config
        self.n = n
        self.failures = failures
        self.books: dict[int, Codebook] = {}

    def __call__(self, m: int, blocks: np.ndarray, all_blocks: np.ndarray) -> Codebook:
        cfg = self.config
        n = self.n
        k, K = cfg.cells[(n, m)]
        seed = _cell_seed(cfg.seed, n, m)
        t0 = time.perf_counter()
        need = max(MIN_SAMPLES_PER_COMPONENT * (K or 0), k)
        if 8 * len(blocks) < need:
            # too few blocks pass the threshold on this corpus: learn from every residual block instead
            log.info("C_%d,%d: %d coded blocks, training on all %d residual blocks", n, m, len(blocks), len(all_blocks))
            blocks = all_blocks
        try:
            cb = self._fit(blocks, n, m, k, K, seed)
        except TrainingError as exc:
            self.failures.append(((n, m), str(exc)))
            log.warning("C_%d,%d: %s", n, m, exc)
            # placeholder so the pass can continue and report every bad cell at once
            cb = _zero_spatial_book(n, m, cfg.channels)
        log.info("C_%d,%d: %d blocks, k=%d, K=%s, %.1fs", n, m, len(blocks), k, K, time.perf_counter() - t0)
        self.books[m] = cb
        return cb

    def _fit(self, blocks, n, m, k, K, seed) -> Codebook:
        cfg = self.config
        count = len(blocks)
        need = max(MIN_SAMPLES_PER_COMPONENT * (K or 0), k)
        if count == 0 or float(np.max(np.abs(blocks))) < NEGLIGIBLE:
            raise TrainingError("training blocks carry no signal (zero-variance residuals)")
        f = _augment_factor(count, need, 20 * k)
        if count * f < need:
            raise TrainingError(f"{count} training blocks (x{f} augmented) is too few, need {need}")
        saab = None
        if K is not None:
            keep = cfg.keep.get((n, m))
            saab = fit_saab(blocks, K, per_stage_keep=keep, seed=seed, augment=f)
        # choose (block, variant) pairs for k-means, capped at max_train_samples
        pairs = np.array([(b, v) for v in range(f) for b in range(count)], dtype=np.int64)
        if len(pairs) > cfg.max_train_samples:
            rng = np.random.default_rng(seed + 1)
            pairs = pairs[np.sort(rng.choice(len(pairs), cfg.max_train_samples, replace=False))]
        vecs = []
        for v in range(f):
            sel = pairs[pairs[:, 1] == v, 0]
            for i in range(0, len(sel), 256):
                x = dihedral(blocks[sel[i : i + 256]], v)
                vecs.append(saab_forward(saab, x) if saab is not None else x.reshape(len(x), -1))
        vecs = np.concatenate(vecs)
        cb = train_codebook(
            vecs, k, n=n, m=m, channels=cfg.channels, saab=saab,
            max_iters=cfg.kmeans_iters, seed=seed, include_zero=True,
        )
        return cb


def _zero_spatial_book(n, m, channels) -> Codebook:
    s = 1 << m
    return make_codebook(n, m, channels, np.zeros((1, s * s * channels)), None)


def _prepare_corpus(corpus, config: CodecConfig) -> np.ndarray:
    imgs = []
    for i, img in enumerate(corpus):
        img = fit_to_grid(img, config.N)
        if img.shape[2] != config.channels:
            raise InvalidInputError(f"corpus image {i} has {img.shape[2]} channels, config wants {config.channels}")
        imgs.append(img)
    if not imgs:
        raise TrainingError("empty training corpus")
    return imgs


def train_model(corpus, config: CodecConfig) -> Model:
    """Closed-loop training: each grid's codebooks are fitted on real encoder residuals.

    Grid by grid, level by level, the training corpus is encoded with the
    codebooks fitted so far; a codebook is trained on exactly the blocks the
    encoder is about to quantize with it.  Index statistics from the same
    pass (taken with the final codebooks) feed the Huffman tables.
    """
    imgs = _prepare_corpus(corpus, config)
    B = len(imgs)
    log.info("training on %d images, grids G_%d..G_%d", B, config.n_dc + 1, config.N)
    acs: dict[int, list[np.ndarray]] = {n: [] for n in config.grids}
    dcs = []
    for img in imgs:
        pyr = forward_decompose(img, config.n_dc)
        dcs.append(pyr.dc)
        for n in config.grids:
            acs[n].append(pyr.ac_layers[n])
    del imgs
    dc = np.stack(dcs)
    err = dc - quantize_dc(dc).astype(np.float64)

    failures: list = []
    codebooks: dict[tuple[int, int], Codebook] = {}
    huffman: dict[tuple[int, int], HuffmanTable] = {}
    for n in config.grids:
        target = np.stack(acs.pop(n))
        if config.feedback:
            for i in range(B):
                target[i] += lanczos_upsample(err[i])
        trainer = _CellTrainer(config, n, failures)
        res = encode_levels(target, n, config.m_min(n), trainer, config.thresholds(n))
        for m in range(config.m_min(n), n + 1):
            codebooks[(n, m)] = trainer.books[m]
            idx = res.indices[n - m]
            counts = np.bincount(idx[idx >= 0], minlength=trainer.books[m].k)
            huffman[(n, m)] = build_huffman(counts)
        err = res.residual
        del target, res
    if failures:
        detail = "; ".join(f"C_{n},{m}: {msg}" for (n, m), msg in failures)
        raise TrainingError(f"degenerate or under-sampled codebooks: {detail}")
    notes = [f"C_{n},{m}: {note}" for (n, m), cb in sorted(codebooks.items()) if cb.saab for note in cb.saab.notes]
    return Model(config=config, codebooks=codebooks, huffman=huffman, notes=notes)


# ----------------------------------------------------------------- coding


@dataclass
class EncodeResult:
    stream: bytes
    recon: np.ndarray  # unclamped full-resolution reconstruction
    grid_recons: list[np.ndarray]  # decoder image per grid n_dc..N
    residual: np.ndarray  # R_N
    codes: list = field(default_factory=list)


def encode_full(model: Model, img, msethresh: float | None = None, feedback: bool | None = None) -> EncodeResult:
    cfg = model.config
    img = as_image(img)
    if img.shape[0] != 1 << cfg.N:
        raise InvalidInputError(f"image side {img.shape[0]} does not match the model's {1 << cfg.N}")
    if img.shape[2] != cfg.channels:
        raise InvalidInputError(f"image has {img.shape[2]} channels, model expects {cfg.channels}")
    if feedback is None:
        feedback = cfg.feedback
    pyr = forward_decompose(img, cfg.n_dc)
    dc_q = quantize_dc(pyr.dc)
    err = pyr.dc - dc_q
    sections, recons, codes = [], [], []
    for n in cfg.grids:
        target = pyr.ac_layers[n] + lanczos_upsample(err) if feedback else pyr.ac_layers[n]
        code = encode_grid(target, model.suite(n), cfg.thresholds(n, msethresh), m_min=cfg.m_min(n))
        err = code.residual
        recons.append(code.recon)
        codes.append(code)
        sections.append(build_section(code, model.huffman))
    header = StreamHeader(N=cfg.N, n_dc=cfg.n_dc, channels=cfg.channels, model_id=model.model_id)
    stream = write_stream(header, pack_dc(dc_q), sections)
    grid_imgs = synthesize(dc_q, recons)
    return EncodeResult(stream=stream, recon=grid_imgs[-1], grid_recons=grid_imgs, residual=err, codes=codes)


def encode(model: Model, img, msethresh: float | None = None) -> bytes:
    return encode_full(model, img, msethresh).stream


def to_pixels(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def decode(model: Model, data: bytes, max_grid: int | None = None, clamp: bool = True) -> np.ndarray:
    img = read_stream(data, model, max_grid)
    return to_pixels(img) if clamp else img
