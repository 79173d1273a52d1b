"""Rate-distortion benchmarking: per-image rows, aggregates, CSV and bitE diagnostics."""

from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bitstream import HEADER_SIZE, bit_accounting
from .codec import Model, decode, encode, fit_to_grid
from .ratecontrol import bit_efficiency, psnr_from_mse

CSV_COLUMNS = ("image_id", "config_id", "bpp", "psnr", "encode_ms", "decode_ms")

# published per-(row, grid) bpp for the reference 256x256 encode; None marks "-"
REFERENCE_ALLOCATION_256 = {
    "QT": (4.0e-3, 4.8e-3, 1.3e-3, 3.2e-4, 7.6e-5, 1.5e-5, None),
    "DC": (None, None, None, None, None, None, 2.4e-4),
    "C_8": (1.5e-5, None, None, None, None, None, None),
    "C_7": (9.1e-5, 1.5e-5, None, None, None, None, None),
    "C_6": (7.6e-4, 1.5e-4, 1.5e-5, None, None, None, None),
    "C_5": (5.1e-3, 1.2e-3, 1.6e-5, 7.6e-5, None, None, None),
    "C_4": (0.0213, 7.2e-3, 1.7e-3, 3.1e-4, 6.1e-5, None, None),
    "C_3": (0.0246, 0.029, 8.2e-3, 2.1e-3, 3.2e-4, 7.6e-5, None),
    "C_2": (None, 0.073, 0.0322, 8.6e-3, 1.5e-3, 3.2e-4, None),
}
REFERENCE_GRIDS_256 = (8, 7, 6, 5, 4, 3, 2)
REFERENCE_POINT_256 = (26.19, 0.2286)  # dB, bpp


def reference_total() -> float:
    return sum(v for row in REFERENCE_ALLOCATION_256.values() for v in row if v is not None)


@dataclass(frozen=True)
class BenchRow:
    image_id: str
    config_id: str
    bpp: float
    psnr: float
    encode_ms: float
    decode_ms: float


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)

    def sorted_rows(self) -> list[BenchRow]:
        return sorted(self.rows, key=lambda r: (r.image_id, r.config_id))

    def means(self) -> dict[str, dict[str, float]]:
        out = {}
        for cid in sorted({r.config_id for r in self.rows}):
            sel = [r for r in self.rows if r.config_id == cid]
            out[cid] = {
                "bpp": float(np.mean([r.bpp for r in sel])),
                "psnr": float(np.mean([r.psnr for r in sel])),
                "encode_ms": float(np.mean([r.encode_ms for r in sel])),
                "decode_ms": float(np.mean([r.decode_ms for r in sel])),
                "images": len(sel),
            }
        return out

    def to_csv(self, timings: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.sorted_rows():
            enc, dec = (f"{r.encode_ms:.1f}", f"{r.decode_ms:.1f}") if timings else ("", "")
            w.writerow((r.image_id, r.config_id, f"{r.bpp:.6f}", f"{r.psnr:.4f}", enc, dec))
        return buf.getvalue()

    def summary(self) -> str:
        lines = []
        for cid, m in self.means().items():
            lines.append(f"{cid}: {m['images']} images, mean {m['bpp']:.4f} bpp, {m['psnr']:.2f} dB, "
                         f"encode {m['encode_ms']:.0f} ms, decode {m['decode_ms']:.0f} ms")
        return "\n".join(lines)


def stream_bpp(stream: bytes, N: int) -> float:
    """Payload bits per pixel; the fixed container header is not counted."""
    return 8 * (len(stream) - HEADER_SIZE) / 4**N


def psnr(reference, decoded) -> float:
    err = np.asarray(reference, dtype=np.float64) - np.asarray(decoded, dtype=np.float64)
    return psnr_from_mse(float(np.mean(err**2)))


def config_ids(models) -> list[str]:
    """Config names, suffixed with the model id where two models share a name."""
    names = [m.config.name or m.model_id.hex() for m in models]
    return [f"{nm}@{m.model_id.hex()[:8]}" if names.count(nm) > 1 else nm for nm, m in zip(names, models)]


def bench_one(model: Model, image_id: str, img, config_id: str | None = None) -> BenchRow:
    img = fit_to_grid(img, model.config.N)
    t0 = time.perf_counter()
    stream = encode(model, img)
    t1 = time.perf_counter()
    out = decode(model, stream)
    t2 = time.perf_counter()
    return BenchRow(
        image_id=image_id,
        config_id=config_id or model.config.name or model.model_id.hex(),
        bpp=stream_bpp(stream, model.config.N),
        psnr=psnr(img, out),
        encode_ms=1e3 * (t1 - t0),
        decode_ms=1e3 * (t2 - t1),
    )


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("MGBVQ_THREADS", "1") or 1)
    return max(1, threads)


def run_bench(models, images, threads: int | None = None) -> BenchReport:
    """``images`` is a list of ``(image_id, pixels)``; every model codes every image."""
    models = list(models)
    jobs = [(m, iid, img, cid) for m, cid in zip(models, config_ids(models)) for iid, img in images]
    n = resolve_threads(threads)
    if n == 1:
        rows = [bench_one(*j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(lambda j: bench_one(*j), jobs))
    return BenchReport(rows=rows)


@dataclass(frozen=True)
class GridEfficiency:
    n: int
    delta_mse: float
    delta_bpp: float
    bite: float


def bite_diagnostics(model: Model, stream: bytes, img) -> list[GridEfficiency]:
    """MSE drop per extra bit for each grid section, from a ``max_grid`` sweep."""
    cfg = model.config
    img = np.asarray(img, dtype=np.float64)
    alloc = bit_accounting(stream, model)

    def err(n):
        rec = decode(model, stream, max_grid=n, clamp=False)
        return float(np.mean((rec - img) ** 2))

    prev = err(cfg.n_dc)
    out = []
    for n in cfg.grids:
        cur = err(n)
        dbpp = alloc.grid_bits(n) / alloc.pixels
        out.append(GridEfficiency(n, prev - cur, dbpp, bit_efficiency(prev - cur, dbpp)))
        prev = cur
    return out


def format_bite(rows: list[GridEfficiency]) -> str:
    lines = ["grid      dMSE      dbpp        bitE"]
    for r in rows:
        lines.append(f"G_{r.n:<4}{r.delta_mse:9.2f}{r.delta_bpp:10.4f}{r.bite:12.1f}")
    return "\n".join(lines)

