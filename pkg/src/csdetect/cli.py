"""Command-line driver.

Every subcommand reads an optional JSON config (``--config``), applies the
flag overrides and writes self-describing artifacts under ``--out``.
Exit status: 0 success, 2 configuration/usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from csdetect import io
from csdetect.core import CSDetectError, PointSource, SceneTruth, UnknownMethod, derive_seed
from csdetect.evaluation import MethodContext, compare_methods, normalized_measurements, parse_method, run_method
from csdetect.frontend import frontend_pipeline
from csdetect.masks import best_scored, generate_mask, score_candidates
from csdetect.scene import generate_sequence
from csdetect.sensing import MeasurementOperator
from csdetect.solvers import demean_measurements, ist_solve, ncg_solve

log = logging.getLogger("csdetect")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

SUBCOMMANDS = ("gen-scene", "gen-mask", "select-mask", "measure", "reconstruct", "detect", "roc", "compare", "bench")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--frames", type=int, help="number of frames")
    common.add_argument("--block", type=int, help="square mask block size (sampling ratio 1/block^2)")
    common.add_argument("--method", action="append", dest="methods", help="method, optionally name@block; repeatable")
    common.add_argument("--out", help="output directory")
    common.add_argument("--input", help="input file (frames, measurements) where the subcommand takes one")
    common.add_argument("--mask", help="mask file to use instead of generating one")
    common.add_argument("--truth", help="truth JSON matching --input frames")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="csdetect", description="Compressive-sensing point target detection experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "gen-scene": "simulate a frame sequence with ground truth",
        "gen-mask": "draw a OnePerBlock mask",
        "select-mask": "score candidate masks on the calibration frame and keep the best",
        "measure": "take partial-Fourier measurements of frames",
        "reconstruct": "reconstruct images from measurements",
        "detect": "run the detection front end on frames",
        "roc": "ROC of one method",
        "compare": "ROC and timing of several methods",
        "bench": "wall-clock timing of several methods",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return p


# ---------------------------------------------------------------------------
# helpers

def _config(args) -> io.RunConfig:
    cfg = io.load_config(args.config) if args.config else io.default_config()
    return io.override_config(cfg, seed=args.seed, frames=args.frames, block=args.block, methods=args.methods,
                              out=args.out)


def _outdir(cfg: io.RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _truth_to_json(t: SceneTruth) -> dict:
    def src(s: PointSource):
        return {"row": s.row, "col": s.col, "amplitude": s.amplitude, "subpixel": list(s.subpixel)}

    return {"shape": list(t.shape), "target": src(t.target), "clutter": [src(c) for c in t.clutter]}


def _truth_from_json(d: dict) -> SceneTruth:
    def src(s):
        return PointSource(s["row"], s["col"], s["amplitude"], tuple(s["subpixel"]))

    return SceneTruth(src(d["target"]), tuple(src(c) for c in d["clutter"]), tuple(d["shape"]))


def _frames(cfg: io.RunConfig, args) -> List[Tuple[np.ndarray, Optional[SceneTruth]]]:
    if args.input:
        imgs = io.read_frames(args.input).astype(np.float64)
        truths = [None] * len(imgs)
        if args.truth:
            truths = [_truth_from_json(d) for d in json.loads(Path(args.truth).read_text())]
            if len(truths) != len(imgs):
                raise io.ConfigError("truth file does not match the frame count")
        return list(zip(imgs, truths))
    return list(generate_sequence(cfg.scene, cfg.frames, cfg.jitter))


def _require_truth(frames):
    if any(t is None for _, t in frames):
        raise io.ConfigError("this subcommand needs ground truth (pass --truth with --input)")
    return frames


def _mask_seed(cfg: io.RunConfig) -> int:
    return derive_seed(cfg.seed, f"mask:{cfg.mask.block}")


def _mask(cfg: io.RunConfig, args, shape):
    if args.mask:
        return io.read_mask(args.mask)
    h, w = shape
    b = cfg.mask.block
    return generate_mask(w, h, b, b, cfg.mask.kind, _mask_seed(cfg))


def _context(cfg: io.RunConfig, args) -> MethodContext:
    masks = {}
    if args.mask:
        m = io.read_mask(args.mask)
        if m.block_w != m.block_h:
            raise io.ConfigError("mask blocks must be square for method comparison")
        masks[m.block_w] = m
    return MethodContext(cfg.frontend, cfg.solver, cfg.greedy, masks, cfg.noise_sigma, cfg.seed, cfg.prefilter)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_scene(cfg, args) -> None:
    out = _outdir(cfg)
    seq = generate_sequence(cfg.scene, cfg.frames, cfg.jitter)
    io.write_frames(out / "frames.cssk", [img for img, _ in seq])
    (out / "truth.json").write_text(json.dumps([_truth_to_json(t) for _, t in seq], indent=1) + "\n")
    io.write_pgm(out / "frame0.pgm", seq[0][0])


def cmd_gen_mask(cfg, args) -> None:
    out = _outdir(cfg)
    s = cfg.scene
    mask = generate_mask(s.width, s.height, cfg.mask.block, cfg.mask.block, cfg.mask.kind, _mask_seed(cfg))
    io.write_mask(out / f"mask_b{cfg.mask.block}.csmk", mask)
    io.write_pgm(out / f"mask_b{cfg.mask.block}.pgm", np.fft.fftshift(mask.open.astype(float)))


def cmd_select_mask(cfg, args) -> None:
    out = _outdir(cfg)
    frames = _frames(cfg, args)
    calib, truth = frames[0]
    seeds = [derive_seed(cfg.seed, f"mask-candidate:{i}") for i in range(cfg.mask.candidates)]
    kw = dict(block=(cfg.mask.block, cfg.mask.block), kind=cfg.mask.kind, prefilter=cfg.prefilter)
    if cfg.mask.metric == "fa_count":
        if truth is None:
            raise io.ConfigError("fa_count selection needs ground truth")
        kw.update(truth=truth, frontend_params=cfg.frontend, match_radius=cfg.eval.match_radius)
    scored = score_candidates(seeds, cfg.mask.metric, calib, **kw)
    best, _ = best_scored(scored, cfg.mask.metric)
    io.write_mask(out / "mask_best.csmk", best)
    with open(out / "mask_scores.csv", "w") as fh:
        fh.write("seed,metric,value,selected\n")
        for m, s in scored:
            fh.write(f"{m.seed},{cfg.mask.metric},{getattr(s, cfg.mask.metric)!r},{int(m.seed == best.seed)}\n")


def cmd_measure(cfg, args) -> None:
    out = _outdir(cfg) / "measurements"
    out.mkdir(exist_ok=True)
    frames = _frames(cfg, args)
    op = MeasurementOperator(_mask(cfg, args, frames[0][0].shape))
    io.write_mask(out / "mask.csmk", op.mask)
    for i, (img, _) in enumerate(frames):
        meas = op.forward(img, cfg.noise_sigma, derive_seed(cfg.seed, f"meas:{i}"))
        io.write_measurements(out / f"frame{i:05d}.csms", meas, img.shape)


def _reconstruct_one(meas, op, method: str, cfg):
    if method == "cs-zerofill":
        return op.zero_fill_reconstruct(meas), None
    if cfg.prefilter:
        meas = demean_measurements(meas, op, cfg.frontend.demean_len)
    meas = normalized_measurements(meas, op)
    if method == "cs-ncg-tv":
        res = ncg_solve(meas, op, cfg.frontend, cfg.solver)
    elif method == "cs-ist":
        res = ist_solve(meas, op, cfg.solver)
    else:
        raise io.ConfigError(f"reconstruct supports cs-zerofill, cs-ncg-tv, cs-ist, not {method}")
    return res.x, res


def cmd_reconstruct(cfg, args) -> None:
    if not args.input or not args.mask:
        raise io.ConfigError("reconstruct needs --input (measurement file or directory) and --mask")
    out = _outdir(cfg)
    method = parse_method((cfg.eval.methods or ("cs-zerofill",))[0], cfg.mask.block)[0]
    if method == "conventional":
        method = "cs-zerofill"
    src = Path(args.input)
    files = sorted(src.glob("*.csms")) if src.is_dir() else [src]
    op = MeasurementOperator(io.read_mask(args.mask))
    recons = []
    for k, f in enumerate(files):
        meas, shape = io.read_measurements(f)
        x, res = _reconstruct_one(meas, op, method, cfg)
        recons.append(x)
        if res is not None:
            io.write_trace_csv(out / f"trace{k:05d}.csv", res.trace, res.grad_norms)
    io.write_frames(out / "recon.cssk", recons)
    io.write_pgm(out / "recon0.pgm", recons[0])


def cmd_detect(cfg, args) -> None:
    out = _outdir(cfg)
    frames = _frames(cfg, args)
    per_frame = [frontend_pipeline(img, cfg.frontend)[1] for img, _ in frames]
    io.write_exceedances_csv(out / "exceedances.csv", per_frame)


def _compare(cfg, args, methods):
    frames = _require_truth(_frames(cfg, args))
    return compare_methods(frames, methods, cfg.eval, _context(cfg, args), default_block=cfg.mask.block)


def cmd_roc(cfg, args) -> None:
    out = _outdir(cfg)
    reports = _compare(cfg, args, cfg.eval.methods[:1])
    io.write_roc_csv(out / "roc.csv", {k: r.roc for k, r in reports.items()})


def _timing(reports) -> dict:
    return {k: {"seconds": r.seconds, "per_frame_seconds": r.per_frame_seconds} for k, r in reports.items()}


def cmd_compare(cfg, args) -> None:
    out = _outdir(cfg)
    reports = _compare(cfg, args, cfg.eval.methods)
    io.write_roc_csv(out / "roc.csv", {k: r.roc for k, r in reports.items()})
    # wall-clock numbers live apart from the ROC so the CSV stays reproducible
    (out / "timing.json").write_text(json.dumps(_timing(reports), indent=1) + "\n")


def cmd_bench(cfg, args) -> None:
    out = _outdir(cfg)
    frames = _frames(cfg, args)
    ctx = _context(cfg, args)
    timing = {}
    for spec in cfg.eval.methods:
        name, block = parse_method(spec, cfg.mask.block)
        t0 = time.perf_counter()
        for i, (img, _) in enumerate(frames):
            run_method(name, block, img, ctx, i)
        elapsed = time.perf_counter() - t0
        timing[spec] = {"seconds": elapsed, "per_frame_seconds": elapsed / len(frames), "frames": len(frames)}
    (out / "bench.json").write_text(json.dumps(timing, indent=1) + "\n")
    for spec, t in timing.items():
        print(f"{spec}: {t['seconds']:.3f} s ({t['per_frame_seconds']:.4f} s/frame)")


HANDLERS = {
    "gen-scene": cmd_gen_scene,
    "gen-mask": cmd_gen_mask,
    "select-mask": cmd_select_mask,
    "measure": cmd_measure,
    "reconstruct": cmd_reconstruct,
    "detect": cmd_detect,
    "roc": cmd_roc,
    "compare": cmd_compare,
    "bench": cmd_bench,
}


def run_subcommand(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
    except io.ConfigError as exc:
        print(f"csdetect: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        HANDLERS[args.command](cfg, args)
    except (io.ConfigError, UnknownMethod) as exc:
        print(f"csdetect: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CSDetectError, OSError, ValueError) as exc:
        print(f"csdetect: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run_subcommand())


if __name__ == "__main__":
    main()
