"""``mgbvq`` command line: train, encode, decode, stats, bench, profile."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import bench
from .bitstream import bit_accounting
from .codec import Model, decode, encode_full, fit_to_grid, to_pixels, train_model
from .config import CodecConfig, load, small_config, table_i_256, table_i_512
from .errors import ConfigError, MGBVQError
from .imageio import center_crop_pow2, list_images, read_image, write_image

log = logging.getLogger("mgbvq")

PROFILES = {
    "table1-256": table_i_256,
    "table1-512": table_i_512,
    "small-64": lambda **kw: small_config(N=6, **kw),
}


def load_config(spec: str, seed: int | None = None) -> CodecConfig:
    """``spec`` is a config file path or a built-in profile name."""
    overrides = {} if seed is None else {"seed": seed}
    if spec in PROFILES:
        return PROFILES[spec](**overrides)
    if not os.path.exists(spec):
        raise ConfigError(f"{spec}: no such config file or profile ({', '.join(PROFILES)})")
    cfg = load(spec)
    if seed is not None:
        cfg.seed = seed
    return cfg


def load_input(path: str, N: int) -> np.ndarray:
    """Read, center-crop to a power-of-two square and bring down to side ``2^N``."""
    img = center_crop_pow2(read_image(path), name=path)
    if img.shape[0] > 1 << N:
        log.warning("%s: downsampling %d -> %d with the codec's Lanczos filter", path, img.shape[0], 1 << N)
    return fit_to_grid(img, N)


def _corpus(directory: str, N: int):
    paths = list_images(directory)
    if not paths:
        raise MGBVQError(f"{directory}: no images found")
    for p in paths:
        yield load_input(p, N)


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    model = train_model(list(_corpus(args.corpus, cfg.N)), cfg)
    model.save(args.model)
    for note in model.notes:
        log.info("%s", note)
    print(f"model {model.model_id.hex()} -> {args.model} ({len(model.to_bytes())} bytes)")
    return 0


def cmd_encode(args) -> int:
    model = Model.load(args.model)
    img = load_input(args.input, model.config.N)
    res = encode_full(model, img)
    with open(args.output, "wb") as fh:
        fh.write(res.stream)
    bpp = bench.stream_bpp(res.stream, model.config.N)
    print(f"{args.output}: {len(res.stream)} bytes, {bpp:.4f} bpp, PSNR {bench.psnr(img, to_pixels(res.recon)):.2f} dB")
    return 0


def cmd_decode(args) -> int:
    model = Model.load(args.model)
    with open(args.input, "rb") as fh:
        data = fh.read()
    write_image(args.output, decode(model, data, args.max_grid))
    return 0


def cmd_stats(args) -> int:
    model = Model.load(args.model)
    with open(args.input, "rb") as fh:
        alloc = bit_accounting(fh.read(), model)
    print(alloc.format_table())
    return 0


def cmd_bench(args) -> int:
    models = [Model.load(p) for p in args.model]
    N = {m.config.N for m in models}
    if len(N) != 1:
        raise ConfigError("all benchmarked models must share one resolution")
    N = N.pop()
    images = [(os.path.basename(p), load_input(p, N)) for p in list_images(args.test_dir)]
    if not images:
        raise MGBVQError(f"{args.test_dir}: no images found")
    report = bench.run_bench(models, images, args.threads)
    text = report.to_csv(timings=not args.no_timings)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(report.summary(), file=sys.stderr)
    return 0


def cmd_profile(args) -> int:
    sys.stdout.write(load_config(args.name, args.seed).dumps())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgbvq", description="Multi-grid vector quantization image codec.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a directory of images")
    t.add_argument("corpus")
    t.add_argument("--config", required=True, help=f"config file or profile ({', '.join(PROFILES)})")
    t.add_argument("--model", required=True, help="output model file")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="compress an image")
    e.add_argument("input")
    e.add_argument("output")
    e.add_argument("--model", required=True)
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="reconstruct an image, optionally from the first grids only")
    d.add_argument("input")
    d.add_argument("output", help=".ppm/.pgm written natively, other extensions via Pillow")
    d.add_argument("--model", required=True)
    d.add_argument("--max-grid", type=int)
    d.set_defaults(func=cmd_decode)

    s = sub.add_parser("stats", help="per-grid, per-block-size bit allocation of a stream")
    s.add_argument("input")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_stats)

    b = sub.add_parser("bench", help="rate-distortion rows for every model x image")
    b.add_argument("test_dir")
    b.add_argument("--model", required=True, action="append", help="repeat for several configs")
    b.add_argument("--csv", help="write CSV here instead of stdout")
    b.add_argument("--threads", type=int, help="worker threads (default $MGBVQ_THREADS or 1)")
    b.add_argument("--no-timings", action="store_true", help="leave timing columns empty for reproducible CSVs")
    b.set_defaults(func=cmd_bench)

    pr = sub.add_parser("profile", help="print a built-in config in file form")
    pr.add_argument("name", choices=sorted(PROFILES))
    pr.add_argument("--seed", type=int)
    pr.set_defaults(func=cmd_profile)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (MGBVQError, OSError) as exc:
        print(f"mgbvq: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
