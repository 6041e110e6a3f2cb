"""Command-line front end.

Exit codes: 0 ok, 2 invalid arguments, 3 input or container errors, 4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .container import (
    ContainerError,
    SECTION_NAMES,
    compress_model,
    decompress,
    disassemble,
)
from .hyperprior import PlaneRangeError
from .rangecoder import CorruptStreamError
from .scene import (
    AnchorCorruptionError,
    AnchorFormatError,
    AnchorValidationError,
    SyntheticSpec,
    gen_synthetic_scene,
    load_anchor_set,
    radius_covering,
    save_anchor_set,
)
from .trainer import USRO, VISRO, TrainConfig, TrainingDivergedError, fit

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DIVERGED = 4

RD_COLUMNS = [
    "lambda_r", "total_bytes", "plane_bytes", "attr_bytes", "pos_bytes", "weights_bytes", "mask_bytes",
    "attr_mse", "train_s", "decode_s", "seed",
]
HIST_BINS = 32
_INPUT_ERRORS = (OSError, AnchorFormatError, AnchorCorruptionError, AnchorValidationError)
_DIVERGENCE = (TrainingDivergedError, PlaneRangeError, FloatingPointError)


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _non_negative_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _lambda_list(text):
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("need positive lambdas")
    return values


def _triple(text):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("need three comma-separated values")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anchorcodec", description="Learned entropy coding of anchor attributes")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compress", help="train an entropy model and write a .c3p container")
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--lambda-r", type=_positive_float, default=0.01)
    c.add_argument("--steps", type=_non_negative_int, default=2000)
    c.add_argument("--seed", type=_non_negative_int, default=0)
    c.add_argument("--sampling", choices=[USRO, VISRO], default=USRO)
    c.add_argument("--ardo-t", type=int, default=4)

    d = sub.add_parser("decompress", help="decode a .c3p container to an ANCH file")
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.add_argument("--parallel-planes", action="store_true")

    i = sub.add_parser("inspect", help="print container sections and header fields")
    i.add_argument("--input", required=True)
    i.add_argument("--kv", action="store_true", help="also print key=value lines")

    r = sub.add_parser("rd-sweep", help="compress at several lambda_r and write one CSV row per point")
    r.add_argument("--input", required=True)
    r.add_argument("--lambdas", type=_lambda_list, default=[0.002, 0.005, 0.01, 0.02, 0.04])
    r.add_argument("--out", required=True)
    r.add_argument("--steps", type=_non_negative_int, default=2000)
    r.add_argument("--seed", type=_non_negative_int, default=0)

    g = sub.add_parser("gen-synthetic", help="write a seeded synthetic anchor set")
    g.add_argument("--out", required=True)
    g.add_argument("--n-anchors", type=int, default=5000)
    g.add_argument("--clusters", type=int, default=12)
    g.add_argument("--spread", type=float, default=0.35)
    g.add_argument("--anisotropy", type=_triple, default=(10.0, 5.0, 1.0))
    vis = g.add_mutually_exclusive_group()
    vis.add_argument("--visibility-radius", type=float, default=math.inf)
    vis.add_argument("--visible-fraction", type=float, default=None)
    g.add_argument("--views", type=int, default=64)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--seed", type=_non_negative_int, default=0)
    return p


def _mb(n: int) -> str:
    return f"{n:>10d}"


def visibility_weighted_mse(original, reconstructed, visibility) -> float:
    """Attribute MSE (in the model's normalized space) weighted by each anchor's view count."""
    err = np.mean((original - reconstructed) ** 2, axis=1)
    w = np.asarray(visibility, dtype=np.float64)
    if w.sum() <= 0:
        return float(err.mean())
    return float((err * w).sum() / w.sum())


def _byte_split(sizes: dict[str, int]) -> dict[str, int]:
    planes = sum(v for k, v in sizes.items() if k.startswith("plane"))
    return {
        "plane_bytes": planes,
        "attr_bytes": sizes.get("attributes", 0),
        "pos_bytes": sizes.get("positions", 0),
        "weights_bytes": sizes.get("weights", 0),
        "mask_bytes": sizes.get("mask", 0),
    }


def cmd_compress(args) -> int:
    try:
        anchors = load_anchor_set(args.input)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        config = TrainConfig(lambda_r=args.lambda_r, steps=args.steps, seed=args.seed,
                             sampling_mode=args.sampling, ardo_interval=args.ardo_t)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    log_path = str(args.output) + ".log.csv"
    try:
        model = fit(anchors, config, log_path=log_path)
        data, report = compress_model(model, anchors)
    except _DIVERGENCE as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OverflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    Path(args.output).write_bytes(data)
    last = model.history[-1] if model.history else None
    if last is not None:
        print(f"step {last.step}: distortion={last.distortion:.6g} attr_bits={last.attr_bits:.6g} "
              f"plane_bits={last.plane_bits:.6g} total={last.total:.6g}")
    print(f"wrote {args.output}: {report.total_bytes} bytes (attributes {report.sizes['attributes']}, "
          f"planes {_byte_split(report.sizes)['plane_bytes']}), log {log_path}")
    return EXIT_OK


def cmd_decompress(args) -> int:
    try:
        data = Path(args.input).read_bytes()
        anchors, report = decompress(data, parallel_planes=args.parallel_planes)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ContainerError, CorruptStreamError, ValueError) as exc:
        section = getattr(exc, "section", None) or "unknown"
        print(f"error: corrupt container (section {section}): {exc}", file=sys.stderr)
        return EXIT_INPUT
    save_anchor_set(anchors, args.output)
    times = report.section_seconds
    print(f"decoded {len(anchors)} anchors; plane decode {times['planes']:.3f}s, "
          f"attribute decode {times['attributes']:.3f}s")
    for name, sec in times.items():
        print(f"  {name:<12s}{sec:.4f}s")
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        data = Path(args.input).read_bytes()
        c = disassemble(data)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ContainerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    h = c.header
    sizes = c.size_report()
    print(f"N={h.n_anchors} K={h.k} B={h.base_resolution} ch={h.channels} mask={'yes' if h.has_mask else 'no'}")
    print(f"lambda_r={h.lambda_r:.6g} lambda_tri={h.lambda_tri:.6g} T={h.ardo_t} sampling={h.sampling} "
          f"steps={h.steps} seed={h.seed}")
    print(f"{'section':<14s}{'bytes':>10s}")
    for name, n in sizes.items():
        print(f"{name:<14s}{_mb(n)}")
    print(f"{'total':<14s}{_mb(len(data))}")
    if args.kv:
        print(f"n_anchors={h.n_anchors}")
        print(f"base_resolution={h.base_resolution}")
        print(f"channels={h.channels}")
        for name, n in sizes.items():
            print(f"bytes.{name}={n}")
        print(f"bytes.total={len(data)}")
    return EXIT_OK


def rd_point(anchors, lam: float, steps: int, seed: int) -> tuple[dict, np.ndarray]:
    """One sweep point: the CSV row and the per-anchor bit estimates."""
    config = TrainConfig(lambda_r=lam, steps=steps, seed=seed)
    t = time.perf_counter()
    model = fit(anchors, config)
    train_s = time.perf_counter() - t
    data, report = compress_model(model, anchors)
    t = time.perf_counter()
    decoded, _ = decompress(data)
    decode_s = time.perf_counter() - t
    mse = visibility_weighted_mse(
        model.norm.apply(anchors.attributes()), model.norm.apply(decoded.attributes()), anchors.visibility
    )
    row = {"lambda_r": lam, "total_bytes": len(data), **_byte_split(report.sizes), "attr_mse": mse,
           "train_s": train_s, "decode_s": decode_s, "seed": seed}
    return row, report.anchor_bits


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def cmd_rd_sweep(args) -> int:
    try:
        anchors = load_anchor_set(args.input)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out)
    hist_path = out.with_suffix(".hist.csv")
    ok = 0
    with open(out, "w", newline="") as fh, open(hist_path, "w", newline="") as hh:
        w = csv.writer(fh)
        w.writerow(RD_COLUMNS)
        hw = csv.writer(hh)
        hw.writerow(["lambda_r", "bin_lo", "bin_hi", "count"])
        for lam in args.lambdas:
            try:
                row, bits = rd_point(anchors, lam, args.steps, args.seed)
            except (*_DIVERGENCE, ValueError) as exc:
                print(f"lambda_r={lam}: failed: {exc}", file=sys.stderr)
                w.writerow([_fmt(lam)] + ["nan"] * (len(RD_COLUMNS) - 2) + [args.seed])
                continue
            ok += 1
            w.writerow([_fmt(row[c]) for c in RD_COLUMNS])
            counts, edges = np.histogram(bits, bins=HIST_BINS, range=(0.0, max(float(bits.max()), 1.0)))
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                hw.writerow([_fmt(lam), f"{lo:.6g}", f"{hi:.6g}", int(c)])
            print(f"lambda_r={lam}: {row['total_bytes']} bytes, attr_mse={row['attr_mse']:.6g}")
    print(f"wrote {out} and {hist_path}")
    return EXIT_OK if ok else EXIT_DIVERGED


def cmd_gen_synthetic(args) -> int:
    try:
        spec = SyntheticSpec(n_anchors=args.n_anchors, n_clusters=args.clusters, cluster_spread=args.spread,
                             anisotropy=args.anisotropy, seed=args.seed, n_views=args.views,
                             noise_level=args.noise)
        if args.visible_fraction is not None:
            if not 0 <= args.visible_fraction <= 1:
                raise ValueError("--visible-fraction must be in [0, 1]")
            radius = radius_covering(spec, args.visible_fraction)
        else:
            radius = args.visibility_radius
        spec = replace(spec, visibility_radius=radius)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    anchors = gen_synthetic_scene(spec)
    try:
        save_anchor_set(anchors, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"wrote {args.out}: {len(anchors)} anchors, {int(np.count_nonzero(anchors.visibility))} visible")
    return EXIT_OK


COMMANDS = {
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "inspect": cmd_inspect,
    "rd-sweep": cmd_rd_sweep,
    "gen-synthetic": cmd_gen_synthetic,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "build_parser", "SECTION_NAMES"]
