"""Codec configuration and its flat ``key = value`` text format.

Codebook cells are written ``C_n_m = codewords,components`` where a
component count of ``-`` selects spatial (untransformed) VQ.  Per-cell
thresholds are ``MSETH_n_m = value``; ``MSETH`` sets the default.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ConfigError
from .ratecontrol import DEFAULT_MSETH

_CELL = re.compile(r"^C_(\d+)_(\d+)$")
_TH = re.compile(r"^MSETH_(\d+)_(\d+)$")
_KEEP = re.compile(r"^KEEP_(\d+)_(\d+)$")

# (codewords, components) per (grid, block exponent); None components = spatial VQ
TABLE_I_256 = {
    (8, 8): (64, 150), (8, 7): (128, 150), (8, 6): (512, 150), (8, 5): (512, 50),
    (8, 4): (512, 30), (8, 3): (64, None),
    (7, 7): (64, 150), (7, 6): (128, 150), (7, 5): (512, 50), (7, 4): (512, 30),
    (7, 3): (512, 20), (7, 2): (128, None),
    (6, 6): (64, 100), (6, 5): (128, 40), (6, 4): (512, 20), (6, 3): (512, 12), (6, 2): (512, None),
    (5, 5): (64, 40), (5, 4): (128, 20), (5, 3): (512, 12), (5, 2): (512, None),
    (4, 4): (64, 20), (4, 3): (32, 12), (4, 2): (64, None),
    (3, 3): (64, 12), (3, 2): (32, None),
}

# codeword counts swept at C_{8,3} to produce the five RD points
C83_SWEEP = (8, 16, 32, 64, 128)


@dataclass
class CodecConfig:
    N: int
    n_dc: int = 2
    channels: int = 3
    cells: dict[tuple[int, int], tuple[int, int | None]] = field(default_factory=dict)
    msethresh: float = DEFAULT_MSETH
    msethresh_cells: dict[tuple[int, int], float] = field(default_factory=dict)
    keep: dict[tuple[int, int], tuple[int, ...]] = field(default_factory=dict)
    seed: int = 0
    kmeans_iters: int = 100
    max_train_samples: int = 20000
    feedback: bool = True
    name: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (2 <= self.n_dc < self.N <= 14):
            raise ConfigError(f"need 2 <= n_dc < N <= 14, got n_dc={self.n_dc}, N={self.N}")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        for (n, m), (k, K) in self.cells.items():
            if not (self.n_dc < n <= self.N):
                raise ConfigError(f"cell C_{n}_{m} lies outside grids {self.n_dc + 1}..{self.N}")
            if not (1 <= m <= n):
                raise ConfigError(f"cell C_{n}_{m}: block exponent must satisfy 1 <= m <= n")
            if k < 1 or k > 65535:
                raise ConfigError(f"cell C_{n}_{m}: codeword count {k} out of range")
            if K is not None and not (1 <= K <= 4**m * self.channels):
                raise ConfigError(f"cell C_{n}_{m}: component count {K} out of range")
        for n in self.grids:
            ms = sorted(m for (g, m) in self.cells if g == n)
            if not ms:
                raise ConfigError(f"grid G_{n} has no codebooks")
            if ms[-1] != n or ms != list(range(ms[0], n + 1)):
                raise ConfigError(f"grid G_{n} needs contiguous cells C_{n}_{n} down to its smallest block")

    @property
    def grids(self) -> range:
        return range(self.n_dc + 1, self.N + 1)

    def m_min(self, n: int) -> int:
        return min(m for (g, m) in self.cells if g == n)

    def threshold(self, n: int, m: int) -> float:
        return self.msethresh_cells.get((n, m), self.msethresh)

    def thresholds(self, n: int, override: float | None = None) -> dict[int, float]:
        if override is not None:
            return {m: float(override) for m in range(self.m_min(n), n + 1)}
        return {m: self.threshold(n, m) for m in range(self.m_min(n), n + 1)}

    def dumps(self) -> str:
        lines = [
            f"name = {self.name}",
            f"N = {self.N}",
            f"n_dc = {self.n_dc}",
            f"channels = {self.channels}",
            f"MSETH = {self.msethresh!r}",
            f"seed = {self.seed}",
            f"kmeans_iters = {self.kmeans_iters}",
            f"max_train_samples = {self.max_train_samples}",
            f"feedback = {'true' if self.feedback else 'false'}",
        ]
        for (n, m) in sorted(self.cells, key=lambda c: (-c[0], -c[1])):
            k, K = self.cells[(n, m)]
            lines.append(f"C_{n}_{m} = {k},{'-' if K is None else K}")
        for (n, m), v in sorted(self.msethresh_cells.items()):
            lines.append(f"MSETH_{n}_{m} = {v!r}")
        for (n, m), ks in sorted(self.keep.items()):
            lines.append(f"KEEP_{n}_{m} = {','.join(map(str, ks))}")
        return "\n".join(lines) + "\n"


def _parse_bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def loads(text: str) -> CodecConfig:
    kw: dict = {"cells": {}, "msethresh_cells": {}, "keep": {}}
    scalars = {
        "N": int, "n_dc": int, "channels": int, "seed": int, "kmeans_iters": int,
        "max_train_samples": int, "MSETH": float, "feedback": _parse_bool, "name": str,
    }
    rename = {"MSETH": "msethresh"}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in scalars:
                kw[rename.get(key, key)] = scalars[key](value)
            elif mt := _CELL.match(key):
                k_s, K_s = (s.strip() for s in value.split(","))
                kw["cells"][(int(mt[1]), int(mt[2]))] = (int(k_s), None if K_s == "-" else int(K_s))
            elif mt := _TH.match(key):
                kw["msethresh_cells"][(int(mt[1]), int(mt[2]))] = float(value)
            elif mt := _KEEP.match(key):
                kw["keep"][(int(mt[1]), int(mt[2]))] = tuple(int(v) for v in value.split(","))
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from exc
    if "N" not in kw:
        raise ConfigError("config must set N")
    return CodecConfig(**kw)


def load(path) -> CodecConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def table_i_256(c83_codewords: int = 64, **overrides) -> CodecConfig:
    """The 256x256 parameter grid; only the C_{8,3} codeword count varies between RD points."""
    cells = dict(TABLE_I_256)
    cells[(8, 3)] = (c83_codewords, None)
    overrides.setdefault("name", f"table1-256-c83x{c83_codewords}")
    return CodecConfig(N=8, n_dc=2, channels=3, cells=cells, **overrides)


def table_i_512(c83_codewords: int = 64, **overrides) -> CodecConfig:
    """512x512 profile: the 256 grid plus a G_9 that leads with C_{9,9} and then copies G_8's cells."""
    cells = dict(TABLE_I_256)
    cells[(8, 3)] = (c83_codewords, None)
    cells[(9, 9)] = TABLE_I_256[(8, 8)]
    for m in range(3, 9):
        cells[(9, m)] = cells[(8, m)]
    overrides.setdefault("name", f"table1-512-c83x{c83_codewords}")
    return CodecConfig(N=9, n_dc=2, channels=3, cells=cells, **overrides)


def small_config(N: int = 6, channels: int = 3, **overrides) -> CodecConfig:
    """Compact profile for tests and quick experiments on small images."""
    cells = {}
    for n in range(3, N + 1):
        for m in range(2, n + 1):
            if m == 2:
                cells[(n, m)] = (16, None)
            else:
                cells[(n, m)] = (8 if m == n else 16, min(8, 4**m * channels))
    overrides.setdefault("name", f"small-{1 << N}" + ("-gray" if channels == 1 else ""))
    return CodecConfig(N=N, n_dc=2, channels=channels, cells=cells, **overrides)
