"""Recovery and detection from partial-Fourier measurements.

Three routes from ``y = M F x + n`` to detections:

* ``greedy_detect``: CLEAN-style loop that thresholds the background
  normalized zero-fill image, removes the brightest sources from the
  measurements and repeats.
* ``ncg_solve``: nonlinear conjugate gradient on
  ``lambda_sparse*|T(x)|_1 + lambda_tv*TV(x) + 0.5*|y - M F x|^2`` where
  ``T`` is the linear part of the detection front end divided by a frozen
  noise map.
* ``ist_solve``: two-step iterative shrinkage/thresholding (TwIST) on
  ``0.5*|y - M F x|^2 + lambda_sparse*|x|_1``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from csdetect.core import Exceedance, MeasurementSet, ValidationError, as_image, validate_pairing
from csdetect.frontend import (
    FrontendParams,
    demean_transfer,
    frontend_pipeline,
    linear_filter,
    linear_filter_adjoint,
    noise_std_map,
)
from csdetect.scene import PsfModel, render_psf
from csdetect.sensing import MeasurementOperator

log = logging.getLogger(__name__)


class LineSearchFailure(UserWarning):
    """Backtracking ran out of steps; the best iterate so far is returned."""


@dataclass(frozen=True)
class SolverParams:
    lambda_sparse: float = 1e-4
    lambda_tv: float = 1e-4
    epsilon_data: float = 0.0
    smooth_mu: float = 1e-6
    max_iters: int = 100
    grad_tol: float = 1e-8
    alpha0: float = 1.0
    backtrack: float = 0.5
    max_backtracks: int = 20
    armijo_c: float = 1e-4
    restart_every: Optional[int] = None
    # pixel-domain sparsity is the only supported transform
    sparsifier: str = "identity"

    def __post_init__(self):
        for name in ("lambda_sparse", "lambda_tv", "epsilon_data", "grad_tol"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be finite and >= 0")
        if not self.smooth_mu > 0:
            raise ValidationError("smooth_mu must be > 0")
        if self.max_iters < 1 or self.max_backtracks < 1:
            raise ValidationError("max_iters and max_backtracks must be >= 1")
        if not (self.alpha0 > 0 and 0 < self.backtrack < 1):
            raise ValidationError("need alpha0 > 0 and 0 < backtrack < 1")
        if self.sparsifier != "identity":
            raise ValidationError(f"unsupported sparsifier {self.sparsifier!r}")


@dataclass(frozen=True)
class GreedyParams:
    """Settings for the CLEAN-style loop.

    ``stop_threshold=None`` uses the front end's threshold. With
    ``prefilter`` the loop runs on demeaned measurements (see
    :func:`demean_measurements`).
    """

    group_size: int = 5
    max_rounds: int = 20
    stop_threshold: Optional[float] = None
    subtract_psf: PsfModel = field(default_factory=PsfModel)
    prefilter: bool = True

    def __post_init__(self):
        if self.group_size < 1 or self.max_rounds < 1:
            raise ValidationError("group_size and max_rounds must be >= 1")


@dataclass
class SolveResult:
    x: np.ndarray
    trace: List[float]
    grad_norms: List[float]
    line_search_failed: bool = False

    @property
    def iterations(self) -> int:
        return len(self.trace) - 1


@dataclass
class GreedyResult:
    detections: List[Exceedance]
    residual: MeasurementSet
    residual_norms: List[float]
    amplitudes: List[float]


def demean_measurements(meas: MeasurementSet, op: MeasurementOperator, demean_len: int) -> MeasurementSet:
    """Apply the front end's row demeaning directly to Fourier samples.

    Demeaning is linear and shift invariant, so it acts on the spectrum as a
    per-column-frequency gain. Doing it before reconstruction removes the
    row-constant sky/sea background, whose aliasing otherwise dominates a
    zero-fill image.
    """
    validate_pairing(op.shape, op.mask, meas)
    gain = demean_transfer(op.shape[1], demean_len)
    cols = np.nonzero(op.mask.open)[1]
    return meas.with_values(meas.values * gain[cols])


def soft_threshold(v, tau: float):
    """``sign(v) * max(|v| - tau, 0)``, element-wise."""
    if tau < 0:
        raise ValidationError("tau must be >= 0")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


# ---------------------------------------------------------------------------
# smoothed priors

def _smooth_abs(t, mu):
    # sqrt(t^2 + mu^2) - mu: zero at zero, derivative t / sqrt(t^2 + mu^2)
    return np.sqrt(t * t + mu * mu) - mu


def _grad_x(x):
    d = np.zeros_like(x)
    d[:, :-1] = x[:, 1:] - x[:, :-1]
    return d


def _grad_y(x):
    d = np.zeros_like(x)
    d[:-1, :] = x[1:, :] - x[:-1, :]
    return d


def _grad_x_adjoint(g):
    out = np.zeros_like(g)
    out[:, :-1] -= g[:, :-1]
    out[:, 1:] += g[:, :-1]
    return out


def _grad_y_adjoint(g):
    out = np.zeros_like(g)
    out[:-1, :] -= g[:-1, :]
    out[1:, :] += g[:-1, :]
    return out


def total_variation(x, mu: float) -> Tuple[float, np.ndarray]:
    """Smoothed isotropic TV, forward differences with Neumann boundary."""
    dx, dy = _grad_x(x), _grad_y(x)
    mag = np.sqrt(dx * dx + dy * dy + mu * mu)
    value = float(np.sum(mag - mu))
    grad = _grad_x_adjoint(dx / mag) + _grad_y_adjoint(dy / mag)
    return value, grad


def detection_std_map(meas: MeasurementSet, op: MeasurementOperator, frontend_params: FrontendParams) -> np.ndarray:
    """Noise map for the linearized detector, frozen from the zero-fill image.

    The zero-fill image is rescaled by ``1/open_fraction`` so the map lives
    on the same amplitude scale as the solution.
    """
    zf = op.zero_fill_reconstruct(meas) / op.mask.open_fraction
    return noise_std_map(zf, frontend_params)


def objective(
    x,
    meas: MeasurementSet,
    op: MeasurementOperator,
    frontend_params: FrontendParams,
    solver_params: SolverParams,
    std_map: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """Value and exact gradient of the detection-regularized objective.

    ``lambda_sparse * sum|T x|_mu + lambda_tv * TV_mu(x) + 0.5 * |y - M F x|^2``
    with ``T x = linear_filter(x) / std_map`` and ``|t|_mu =
    sqrt(t^2 + mu^2) - mu``.
    """
    x = as_image(x, "x")
    validate_pairing(x.shape, op.mask, meas)
    if std_map is None:
        std_map = detection_std_map(meas, op, frontend_params)
    sp = solver_params
    resid = op.apply(x) - meas.values
    value = 0.5 * float(np.vdot(resid, resid).real)
    grad = op.apply_adjoint(resid)
    if sp.lambda_sparse > 0:
        t = linear_filter(x, frontend_params) / std_map
        value += sp.lambda_sparse * float(np.sum(_smooth_abs(t, sp.smooth_mu)))
        w = t / np.sqrt(t * t + sp.smooth_mu**2)
        grad = grad + sp.lambda_sparse * linear_filter_adjoint(w / std_map, frontend_params)
    if sp.lambda_tv > 0:
        tv, tv_grad = total_variation(x, sp.smooth_mu)
        value += sp.lambda_tv * tv
        grad = grad + sp.lambda_tv * tv_grad
    return value, grad


class _LineModel:
    """Objective restricted to the ray ``x + t d``; no transforms per trial step."""

    def __init__(self, x, d, meas, op, frontend_params, sp, std_map):
        self.sp = sp
        self.ax = op.apply(x) - meas.values
        self.ad = op.apply(d)
        if sp.lambda_sparse > 0:
            self.tx = linear_filter(x, frontend_params) / std_map
            self.td = linear_filter(d, frontend_params) / std_map
        if sp.lambda_tv > 0:
            self.dxx, self.dyx = _grad_x(x), _grad_y(x)
            self.dxd, self.dyd = _grad_x(d), _grad_y(d)

    def __call__(self, t: float) -> float:
        sp = self.sp
        r = self.ax + t * self.ad
        value = 0.5 * float(np.vdot(r, r).real)
        if sp.lambda_sparse > 0:
            value += sp.lambda_sparse * float(np.sum(_smooth_abs(self.tx + t * self.td, sp.smooth_mu)))
        if sp.lambda_tv > 0:
            gx = self.dxx + t * self.dxd
            gy = self.dyx + t * self.dyd
            value += sp.lambda_tv * float(np.sum(np.sqrt(gx * gx + gy * gy + sp.smooth_mu**2) - sp.smooth_mu))
        return value


def ncg_solve(
    meas: MeasurementSet,
    op: MeasurementOperator,
    frontend_params: FrontendParams,
    solver_params: SolverParams = SolverParams(),
    x0: Optional[np.ndarray] = None,
    std_map: Optional[np.ndarray] = None,
) -> SolveResult:
    """Fletcher-Reeves nonlinear CG with Armijo backtracking.

    Starts from the minimum-norm real least-squares image unless ``x0`` is
    given, so the data term begins at its minimum and the priors only have
    to act on the unmeasured part of the spectrum. The search
    direction restarts to steepest descent every ``restart_every``
    iterations (default: image width) and whenever it stops being a descent
    direction. The first trial step of each line search adapts to how many
    backtracks the previous one needed.
    """
    sp = solver_params
    validate_pairing(op.shape, op.mask, meas)
    if std_map is None and sp.lambda_sparse > 0:
        std_map = detection_std_map(meas, op, frontend_params)
    x = op.min_norm_reconstruct(meas) if x0 is None else as_image(x0, "x0").copy()
    restart = sp.restart_every or op.shape[1]

    f, g = objective(x, meas, op, frontend_params, sp, std_map)
    gg = float(np.vdot(g, g))
    trace, gnorms = [f], [math.sqrt(gg)]
    d = -g
    step0 = sp.alpha0
    failed = False
    for k in range(sp.max_iters):
        if math.sqrt(gg) <= sp.grad_tol:
            break
        slope = float(np.vdot(g, d))
        if slope >= 0:
            d, slope = -g, -gg
        line = _LineModel(x, d, meas, op, frontend_params, sp, std_map)
        t = step0
        for n_bt in range(sp.max_backtracks + 1):
            f_new = line(t)
            if f_new <= f + sp.armijo_c * t * slope:
                break
            t *= sp.backtrack
        else:
            failed = True
            warnings.warn(f"line search failed at iteration {k}", LineSearchFailure, stacklevel=2)
            break
        # Lustig-style adaptation of the initial trial step
        if n_bt > 2:
            step0 = t
        elif n_bt == 0:
            step0 = t / sp.backtrack
        x = x + t * d
        f_new, g_new = objective(x, meas, op, frontend_params, sp, std_map)
        gg_new = float(np.vdot(g_new, g_new))
        beta = gg_new / gg if gg > 0 else 0.0
        d = -g_new if (k + 1) % restart == 0 else -g_new + beta * d
        f, g, gg = f_new, g_new, gg_new
        trace.append(f)
        gnorms.append(math.sqrt(gg))
    log.debug("ncg_solve: %d iterations, objective %.6g", len(trace) - 1, f)
    return SolveResult(x, trace, gnorms, failed)


def ist_objective(x, meas: MeasurementSet, op: MeasurementOperator, lambda_sparse: float) -> float:
    r = op.apply(x) - meas.values
    return 0.5 * float(np.vdot(r, r).real) + lambda_sparse * float(np.abs(x).sum())


def ist_solve(
    meas: MeasurementSet,
    op: MeasurementOperator,
    solver_params: SolverParams = SolverParams(),
    x0: Optional[np.ndarray] = None,
) -> SolveResult:
    """Monotone TwIST for ``0.5*|y - M F x|^2 + lambda_sparse*|x|_1``.

    The spectrum of ``(M F)^H (M F)`` lies in ``[xi_1, 1]`` with ``xi_1 = 1``
    for a fully open mask and ``1e-4`` otherwise (the customary TwIST
    setting for ill-conditioned operators). Those bounds fix the two-step
    weights. Any step that would raise the objective is replaced by a
    plain IST step, which cannot, because ``|M F| <= 1``.
    """
    sp = solver_params
    validate_pairing(op.shape, op.mask, meas)
    lam = sp.lambda_sparse
    xi1 = 1.0 if op.mask.open_count == op.mask.open.size else 1e-4
    xin = 1.0
    kappa = xi1 / xin
    rho = (1 - math.sqrt(kappa)) / (1 + math.sqrt(kappa))
    alpha = rho * rho + 1
    beta = 2 * alpha / (xi1 + xin)

    def ist_step(v):
        return soft_threshold(v + op.apply_adjoint(meas.values - op.apply(v)), lam)

    x_prev = np.zeros(op.shape) if x0 is None else as_image(x0, "x0").copy()
    trace = [ist_objective(x_prev, meas, op, lam)]
    x = ist_step(x_prev)
    trace.append(ist_objective(x, meas, op, lam))
    for _ in range(sp.max_iters - 1):
        gamma = ist_step(x)
        x_new = (1 - alpha) * x_prev + (alpha - beta) * x + beta * gamma
        f_new = ist_objective(x_new, meas, op, lam)
        if f_new > trace[-1]:
            x_new = gamma
            f_new = ist_objective(x_new, meas, op, lam)
        step = float(np.max(np.abs(x_new - x)))
        x_prev, x = x, x_new
        trace.append(f_new)
        if step <= sp.grad_tol:
            break
    return SolveResult(x, trace, [], False)


# ---------------------------------------------------------------------------
# greedy CLEAN-style detection

def _parabolic_offset(lo: float, mid: float, hi: float) -> float:
    denom = lo - 2 * mid + hi
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (lo - hi) / denom, -0.5, 0.5))


def _source_model(filtered: np.ndarray, row: int, col: int, psf: PsfModel):
    """Sub-pixel source estimate from the peak of the filtered image.

    Returns the stamped unit-amplitude source image, or None when it would
    not fit in the frame.
    """
    h, w = filtered.shape
    r = psf.kernel_radius
    dy = _parabolic_offset(*filtered[row - 1 : row + 2, col]) if 0 < row < h - 1 else 0.0
    dx = _parabolic_offset(*filtered[row, col - 1 : col + 2]) if 0 < col < w - 1 else 0.0
    pos_r, pos_c = row + dy, col + dx
    base_r, base_c = int(math.floor(pos_r)), int(math.floor(pos_c))
    if not (r <= base_r < h - r and r <= base_c < w - r):
        return None
    unit = np.zeros((h, w))
    unit[base_r - r : base_r + r + 1, base_c - r : base_c + r + 1] = render_psf(psf, (pos_r - base_r, pos_c - base_c))
    return unit


def greedy_detect(
    meas: MeasurementSet,
    op: MeasurementOperator,
    frontend_params: FrontendParams,
    greedy_params: GreedyParams = GreedyParams(),
) -> GreedyResult:
    """Iteratively detect and remove the brightest point sources.

    Each round zero-fills the residual measurements, runs the front end and
    takes the ``group_size`` strongest new exceedances above the stop
    threshold (positions within one pixel of an earlier detection are not
    reported again). For each, a sub-pixel PSF model is fitted at the peak;
    its amplitude is the filtered peak value divided by the filtered
    response of the unit model pushed through the same partial-Fourier
    chain, which undoes the zero-fill amplitude loss. The amplitude is
    clipped to ``[0, 2 a*]``, with ``a*`` the least-squares amplitude in the
    measurement domain, so the residual norm can never grow.

    With ``prefilter`` the residual lives in the demeaned measurement
    domain, and the returned residual is that demeaned residual.
    """
    gp = greedy_params
    validate_pairing(op.shape, op.mask, meas)
    stop = frontend_params.threshold if gp.stop_threshold is None else gp.stop_threshold
    if gp.prefilter:
        gain = demean_transfer(op.shape[1], frontend_params.demean_len)[np.nonzero(op.mask.open)[1]]
    else:
        gain = np.ones(len(meas))
    resid = meas.values * gain
    detections: List[Exceedance] = []
    amplitudes: List[float] = []
    norms = [float(np.linalg.norm(resid))]
    for _ in range(gp.max_rounds):
        recon = op.apply_adjoint(resid)
        _, xcds = frontend_pipeline(recon, frontend_params, threshold=stop)
        fresh = [
            x for x in xcds if all(max(abs(x.row - d.row), abs(x.col - d.col)) > 1 for d in detections)
        ]
        if not fresh:
            break
        filtered = linear_filter(recon, frontend_params)
        for xcd in fresh[: gp.group_size]:
            detections.append(xcd)
            unit = _source_model(filtered, xcd.row, xcd.col, gp.subtract_psf)
            amp = 0.0
            if unit is not None:
                model = op.apply(unit) * gain
                response = linear_filter(op.apply_adjoint(model), frontend_params)[xcd.row, xcd.col]
                a_est = filtered[xcd.row, xcd.col] / response if response > 0 else 0.0
                a_star = float(np.vdot(model, resid).real) / float(np.vdot(model, model).real)
                if a_star > 0:
                    amp = float(np.clip(a_est, 0.0, 2 * a_star))
                    resid = resid - amp * model
            amplitudes.append(amp)
        norms.append(float(np.linalg.norm(resid)))
    return GreedyResult(detections, meas.with_values(resid), norms, amplitudes)
