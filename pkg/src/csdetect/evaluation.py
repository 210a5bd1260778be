"""Detection scoring: exceedances above target, ROC sweeps and method comparison."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from csdetect.core import (
    Exceedance,
    Mask,
    MaskKind,
    SceneTruth,
    UnknownMethod,
    ValidationError,
    derive_seed,
)
from csdetect.frontend import FrontendParams, frontend_pipeline
from csdetect.sensing import MeasurementOperator
from csdetect.solvers import (
    GreedyParams,
    SolverParams,
    demean_measurements,
    greedy_detect,
    ist_solve,
    ncg_solve,
)

log = logging.getLogger(__name__)

#: returned by :func:`xcds_above_target` when no exceedance matches the target
NOT_DETECTED = None

METHODS = ("conventional", "cs-zerofill", "cs-greedy", "cs-ncg-tv", "cs-ist")


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    detections: int
    frames: int
    false_alarms: int


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation settings.

    ``thresholds=None`` builds a shared grid of ``n_thresholds`` values
    spaced geometrically between the 50th and 100th percentile of all
    observed exceedance scores.
    """

    match_radius: int = 1
    thresholds: Optional[Tuple[float, ...]] = None
    n_thresholds: int = 64
    methods: Tuple[str, ...] = ("conventional",)

    def __post_init__(self):
        if self.match_radius < 0:
            raise ValidationError("match_radius must be >= 0")
        if self.thresholds is not None:
            t = np.asarray(self.thresholds, dtype=float)
            if t.size == 0 or np.any(np.diff(t) >= 0):
                raise ValidationError("thresholds must be strictly descending")
            object.__setattr__(self, "thresholds", tuple(float(v) for v in t))
        if self.n_thresholds < 2:
            raise ValidationError("n_thresholds must be >= 2")


def matches_target(xcd: Exceedance, truth: SceneTruth, match_radius: int) -> bool:
    """Chebyshev distance to the target pixel within ``match_radius``."""
    t = truth.target
    return max(abs(xcd.row - t.row), abs(xcd.col - t.col)) <= match_radius


def xcds_above_target(xcds: Sequence[Exceedance], truth: SceneTruth, match_radius: int = 1):
    """Number of exceedances scoring strictly above the best target match.

    Returns ``NOT_DETECTED`` (None) when nothing lies within
    ``match_radius`` of the target.
    """
    hits = [x.score for x in xcds if matches_target(x, truth, match_radius)]
    if not hits:
        return NOT_DETECTED
    best = max(hits)
    return sum(1 for x in xcds if x.score > best)


def target_rank(xcds: Sequence[Exceedance], truth: SceneTruth, match_radius: int = 1):
    """Index of the first target match in list order (None if absent).

    For score-sorted lists this equals :func:`xcds_above_target` up to ties;
    for greedy detection lists it counts detections made before the target.
    """
    for i, x in enumerate(xcds):
        if matches_target(x, truth, match_radius):
            return i
    return NOT_DETECTED


def threshold_grid(score_lists: Sequence[Sequence[Exceedance]], n: int = 64) -> Tuple[float, ...]:
    scores = np.array([x.score for xs in score_lists for x in xs], dtype=float)
    if scores.size == 0:
        return (1.0, 0.5)
    hi = float(np.max(scores))
    lo = float(np.percentile(scores, 50))
    if hi <= 0:
        return tuple(np.linspace(hi, hi - 1.0, n))
    lo = min(max(lo, 1e-3 * hi), hi * (1 - 1e-9))
    return tuple(float(v) for v in np.geomspace(hi, lo, n))


def roc_from_exceedances(
    per_frame: Sequence[Sequence[Exceedance]],
    truths: Sequence[SceneTruth],
    thresholds: Sequence[float],
    match_radius: int = 1,
) -> List[RocPoint]:
    """Sweep thresholds over precomputed exceedance lists.

    At each threshold a frame counts as a detection if any exceedance at or
    above it matches the target; all other exceedances at or above it are
    false alarms. Both are summed over frames.
    """
    if len(per_frame) != len(truths) or not per_frame:
        raise ValidationError("need one exceedance list per truth and at least one frame")
    best_hit = np.full(len(per_frame), -np.inf)
    fa_scores = []
    for i, (xcds, truth) in enumerate(zip(per_frame, truths)):
        for x in xcds:
            if matches_target(x, truth, match_radius):
                best_hit[i] = max(best_hit[i], x.score)
            else:
                fa_scores.append(x.score)
    fa_sorted = np.sort(np.asarray(fa_scores, dtype=float))
    points = []
    for thr in thresholds:
        det = int(np.count_nonzero(best_hit >= thr))
        fa = int(fa_sorted.size - np.searchsorted(fa_sorted, thr, side="left"))
        points.append(RocPoint(float(thr), det, len(per_frame), fa))
    return points


def roc_curve(
    frames: Sequence[Tuple[np.ndarray, SceneTruth]],
    pipeline: Callable[[np.ndarray], Sequence[Exceedance]],
    config: EvalConfig,
) -> List[RocPoint]:
    """Run ``pipeline`` on every frame and sweep the configured thresholds."""
    if not frames:
        raise ValidationError("need at least one frame")
    per_frame = [pipeline(img) for img, _ in frames]
    truths = [t for _, t in frames]
    thresholds = config.thresholds or threshold_grid(per_frame, config.n_thresholds)
    return roc_from_exceedances(per_frame, truths, thresholds, config.match_radius)


def detections_at_fa(roc: Sequence[RocPoint], fa_budget: int) -> int:
    """Most detections reached without exceeding ``fa_budget`` false alarms."""
    ok = [p.detections for p in roc if p.false_alarms <= fa_budget]
    return max(ok) if ok else 0


def is_monotone(roc: Sequence[RocPoint]) -> bool:
    """True when both coordinates are non-decreasing as the threshold falls."""
    pts = sorted(roc, key=lambda p: -p.threshold)
    return all(
        b.detections >= a.detections and b.false_alarms >= a.false_alarms for a, b in zip(pts, pts[1:])
    )


# ---------------------------------------------------------------------------
# method comparison

def parse_method(spec: str, default_block: int) -> Tuple[str, int]:
    """Split ``"cs-ncg-tv@2"`` into ``("cs-ncg-tv", 2)``.

    The suffix is the square block size, i.e. the sampling ratio is
    ``1/block**2``. Without a suffix ``default_block`` applies.
    """
    name, _, block = spec.partition("@")
    if name not in METHODS:
        raise UnknownMethod(f"unknown method {spec!r}; choose from {', '.join(METHODS)}")
    if name == "conventional":
        return name, 1
    try:
        b = int(block) if block else int(default_block)
    except ValueError:
        raise UnknownMethod(f"bad block suffix in {spec!r}") from None
    if b < 1:
        raise UnknownMethod(f"bad block suffix in {spec!r}")
    return name, b


@dataclass
class MethodContext:
    """Everything a detection method needs besides the frame itself.

    ``masks`` maps block size to a fixed mask; missing entries are drawn on
    demand as ``OnePerBlock`` masks seeded from ``seed``. ``prefilter``
    demeans the Fourier samples before the reconstruction-based CS methods
    (the greedy method has its own switch in :class:`GreedyParams`).
    """

    frontend: Optional[FrontendParams] = None
    solver: Optional[SolverParams] = None
    greedy: Optional[GreedyParams] = None
    masks: Dict[int, Mask] = field(default_factory=dict)
    noise_sigma: float = 0.0
    seed: int = 0
    prefilter: bool = True

    def __post_init__(self):
        self.frontend = self.frontend or FrontendParams()
        self.solver = self.solver or SolverParams()
        self.greedy = self.greedy or GreedyParams()

    def mask_for(self, shape: Tuple[int, int], block: int) -> Mask:
        from csdetect.masks import generate_mask  # masks imports this module

        mask = self.masks.get(block)
        if mask is None or mask.shape != tuple(shape):
            h, w = shape
            mask = generate_mask(w, h, block, block, MaskKind.ONE_PER_BLOCK, derive_seed(self.seed, f"mask:{block}"))
            self.masks[block] = mask
        return mask


def normalized_measurements(meas, op):
    """Scale measurements so the zero-fill image peaks at 1 in magnitude."""
    peak = float(np.max(np.abs(op.zero_fill_reconstruct(meas))))
    if peak == 0:
        return meas
    return meas.with_values(meas.values / peak)


def run_method(name: str, block: int, img: np.ndarray, ctx: MethodContext, frame_index: int = 0) -> List[Exceedance]:
    """All exceedances (every local maximum) of one method on one frame."""
    if name == "conventional":
        return frontend_pipeline(img, ctx.frontend, threshold=-np.inf)[1]
    op = MeasurementOperator(ctx.mask_for(img.shape, block))
    meas = op.forward(img, ctx.noise_sigma, derive_seed(ctx.seed, f"meas:{frame_index}"))
    if name == "cs-greedy":
        return greedy_detect(meas, op, ctx.frontend, ctx.greedy).detections
    if ctx.prefilter:
        meas = demean_measurements(meas, op, ctx.frontend.demean_len)
    if name == "cs-zerofill":
        recon = op.zero_fill_reconstruct(meas)
    elif name == "cs-ncg-tv":
        recon = ncg_solve(normalized_measurements(meas, op), op, ctx.frontend, ctx.solver).x
    elif name == "cs-ist":
        recon = ist_solve(normalized_measurements(meas, op), op, ctx.solver).x
    else:
        raise UnknownMethod(name)
    return frontend_pipeline(recon, ctx.frontend, threshold=-np.inf)[1]


@dataclass
class MethodReport:
    method: str
    roc: List[RocPoint]
    seconds: float
    per_frame_seconds: float
    exceedances: List[List[Exceedance]] = field(repr=False, default_factory=list)


def compare_methods(
    frames: Sequence[Tuple[np.ndarray, SceneTruth]],
    methods: Sequence[str],
    config: EvalConfig = EvalConfig(),
    ctx: Optional[MethodContext] = None,
    default_block: int = 2,
) -> Dict[str, MethodReport]:
    """Run every method on every frame; build ROCs on a shared threshold grid.

    Wall-clock time is measured per method. Everything except the timing
    fields is a deterministic function of the inputs and ``ctx.seed``.
    """
    if not methods:
        raise UnknownMethod("no methods given")
    if not frames:
        raise ValidationError("need at least one frame")
    ctx = ctx or MethodContext()
    parsed = [(m, *parse_method(m, default_block)) for m in methods]
    truths = [t for _, t in frames]
    raw = {}
    for label, name, block in parsed:
        t0 = time.perf_counter()
        per_frame = [run_method(name, block, img, ctx, i) for i, (img, _) in enumerate(frames)]
        elapsed = time.perf_counter() - t0
        raw[label] = (per_frame, elapsed)
        log.info("%s: %d frames in %.2f s", label, len(frames), elapsed)
    thresholds = config.thresholds or threshold_grid(
        [xs for per_frame, _ in raw.values() for xs in per_frame], config.n_thresholds
    )
    return {
        label: MethodReport(
            label,
            roc_from_exceedances(per_frame, truths, thresholds, config.match_radius),
            elapsed,
            elapsed / len(frames),
            per_frame,
        )
        for label, (per_frame, elapsed) in raw.items()
    }
