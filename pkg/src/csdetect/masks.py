"""Random sampling masks and the two ways of picking the best one."""

from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from csdetect.core import (
    BlockNotDivisible,
    EmptyCandidates,
    Mask,
    MaskKind,
    SceneTruth,
    ValidationError,
    as_image,
)
from csdetect.evaluation import NOT_DETECTED, xcds_above_target
from csdetect.frontend import FrontendParams, frontend_pipeline
from csdetect.sensing import MeasurementOperator
from csdetect.solvers import demean_measurements

#: fa_count of a mask whose reconstruction loses the target entirely
FA_SENTINEL = sys.maxsize


@dataclass(frozen=True)
class MaskScore:
    mask_seed: int
    fa_count: Optional[int] = None
    recon_mse: Optional[float] = None


def generate_mask(
    width: int,
    height: int,
    block_w: int,
    block_h: int,
    kind: MaskKind = MaskKind.ONE_PER_BLOCK,
    seed: int = 0,
) -> Mask:
    """Draw a random binary mask.

    ``ONE_PER_BLOCK`` opens exactly one uniformly chosen position in every
    ``block_h x block_w`` tile. ``BERNOULLI`` opens each position
    independently with probability ``1/(block_w*block_h)``; if that leaves
    nothing open a single random position is opened.
    """
    kind = MaskKind(kind)
    if block_w < 1 or block_h < 1:
        raise ValidationError("block sizes must be >= 1")
    rng = np.random.default_rng(seed)
    if kind is MaskKind.ONE_PER_BLOCK:
        if width % block_w or height % block_h:
            raise BlockNotDivisible(f"{block_h}x{block_w} blocks do not tile {height}x{width}")
        th, tw = height // block_h, width // block_w
        pick = rng.integers(0, block_w * block_h, size=(th, tw))
        tiles = np.zeros((th, tw, block_h * block_w), dtype=bool)
        np.put_along_axis(tiles, pick[..., None], True, axis=2)
        bits = tiles.reshape(th, tw, block_h, block_w).transpose(0, 2, 1, 3).reshape(height, width)
    else:
        bits = rng.random((height, width)) < 1.0 / (block_w * block_h)
        if not bits.any():
            bits.flat[rng.integers(bits.size)] = True
    return Mask(bits, block_w, block_h, kind, seed)


def score_mask_fa(
    mask: Mask,
    calib_frame,
    truth: SceneTruth,
    frontend_params: FrontendParams,
    match_radius: int = 1,
    prefilter: bool = True,
) -> MaskScore:
    """Count exceedances in the zero-fill reconstruction that outscore the target.

    With ``prefilter`` the Fourier samples are demeaned first, as the CS
    detection methods do. Returns ``FA_SENTINEL`` as the count when the
    target is not detected.
    """
    op = MeasurementOperator(mask)
    meas = op.forward(calib_frame)
    if prefilter:
        meas = demean_measurements(meas, op, frontend_params.demean_len)
    recon = op.zero_fill_reconstruct(meas)
    _, xcds = frontend_pipeline(recon, frontend_params)
    count = xcds_above_target(xcds, truth, match_radius)
    return MaskScore(mask.seed, fa_count=FA_SENTINEL if count is NOT_DETECTED else count)


def score_mask_mse(mask: Mask, calib_frame) -> MaskScore:
    """Mean squared error of the amplitude-compensated zero-fill reconstruction."""
    frame = as_image(calib_frame)
    op = MeasurementOperator(mask)
    recon = op.zero_fill_reconstruct(op.forward(frame)) / mask.open_fraction
    return MaskScore(mask.seed, recon_mse=float(np.mean((recon - frame) ** 2)))


def score_candidates(
    candidates: Sequence[int],
    metric: str,
    calib_frame,
    *,
    block: Tuple[int, int] = (4, 4),
    kind: MaskKind = MaskKind.ONE_PER_BLOCK,
    truth: Optional[SceneTruth] = None,
    frontend_params: Optional[FrontendParams] = None,
    match_radius: int = 1,
    prefilter: bool = True,
) -> List[Tuple[Mask, MaskScore]]:
    """Generate and score one mask per candidate seed."""
    frame = as_image(calib_frame)
    h, w = frame.shape
    bw, bh = block
    out = []
    for seed in candidates:
        mask = generate_mask(w, h, bw, bh, kind, seed)
        if metric == "fa_count":
            if truth is None or frontend_params is None:
                raise ValidationError("fa_count scoring needs truth and frontend_params")
            score = score_mask_fa(mask, frame, truth, frontend_params, match_radius, prefilter)
        elif metric == "recon_mse":
            score = score_mask_mse(mask, frame)
        else:
            raise ValidationError(f"unknown mask metric {metric!r}")
        out.append((mask, score))
    return out


def best_scored(scored: Sequence[Tuple[Mask, MaskScore]], metric: str) -> Tuple[Mask, MaskScore]:
    """Argmin of ``metric`` over already scored candidates; ties go to the lower seed."""
    if len(scored) == 0:
        raise EmptyCandidates("no candidate seeds")
    return min(scored, key=lambda ms: (getattr(ms[1], metric), ms[1].mask_seed))


def select_best_mask(
    candidates: Sequence[int],
    metric: str,
    calib_frame,
    **kwargs,
) -> Tuple[Mask, MaskScore]:
    """Return the candidate minimizing ``metric`` ("fa_count" or "recon_mse").

    Ties go to the lower seed. Keyword arguments are passed to
    :func:`score_candidates`.
    """
    if len(candidates) == 0:
        raise EmptyCandidates("no candidate seeds")
    return best_scored(score_candidates(candidates, metric, calib_frame, **kwargs), metric)
