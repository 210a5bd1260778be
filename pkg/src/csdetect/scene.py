"""Synthetic maritime frames with exact ground truth.

A frame is a row-constant background (linear sky-to-sea ramp plus a
Gaussian horizon band), stationary sea-glint point sources near the
horizon, one sub-pixel target and white Gaussian read noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Tuple

import numpy as np
from scipy.special import erf

from csdetect.core import (
    PointSource,
    SceneTruth,
    SourceOutOfBounds,
    ValidationError,
    check_frame_shape,
    derive_seed,
)


@dataclass(frozen=True)
class PsfModel:
    """Isotropic Gaussian point spread function on a (2r+1)^2 support."""

    kernel_radius: int = 2
    sigma: float = 0.7

    def __post_init__(self):
        if int(self.kernel_radius) != self.kernel_radius or self.kernel_radius < 1:
            raise ValidationError("kernel_radius must be an integer >= 1")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError("psf sigma must be finite and > 0")

    @property
    def size(self) -> int:
        return 2 * self.kernel_radius + 1


def _pixel_weights(radius: int, sigma: float, offset: float) -> np.ndarray:
    # Gaussian mass falling in each unit pixel around the centre (radius + offset)
    edges = np.arange(-radius - 0.5, radius + 1.5) - offset
    cdf = 0.5 * (1.0 + erf(edges / (math.sqrt(2.0) * sigma)))
    return np.diff(cdf)


def psf_factors(psf: PsfModel, subpixel: Tuple[float, float] = (0.0, 0.0)) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column factors of the separable kernel, each summing to one."""
    dy, dx = subpixel
    ky = _pixel_weights(psf.kernel_radius, psf.sigma, dy)
    kx = _pixel_weights(psf.kernel_radius, psf.sigma, dx)
    return ky / ky.sum(), kx / kx.sum()


def render_psf(psf: PsfModel, subpixel: Tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Render the PSF kernel for a source offset by ``subpixel`` = (dy, dx).

    Each entry is the Gaussian mass integrated over the pixel footprint, so
    the kernel stays well defined as sigma goes to zero. The result is
    renormalized to sum to one.
    """
    ky, kx = psf_factors(psf, subpixel)
    kernel = np.outer(ky, kx)
    return kernel / kernel.sum()


@dataclass(frozen=True)
class SceneParams:
    width: int = 640
    height: int = 128
    background_level: float = 10.0
    background_ramp: float = 10.0
    horizon_row: int = 48
    horizon_level: float = 5.0
    horizon_width: float = 2.0
    glint_count: int = 50
    glint_amp_range: Tuple[float, float] = (5.0, 40.0)
    target_amp: float = 20.0
    target_row: int = 44
    target_col: int = 320
    target_subpixel: Tuple[float, float] = (0.0, 0.0)
    read_noise_sigma: float = 1.0
    glint_keep_out: int = 12
    psf: PsfModel = field(default_factory=PsfModel)
    seed: int = 0

    def __post_init__(self):
        check_frame_shape((self.height, self.width))
        reals = (
            self.background_level,
            self.background_ramp,
            self.horizon_level,
            self.horizon_width,
            self.target_amp,
            self.read_noise_sigma,
            *self.glint_amp_range,
            *self.target_subpixel,
        )
        if not all(math.isfinite(v) for v in reals):
            raise ValidationError("scene parameters must be finite")
        if not 0 <= self.horizon_row < self.height:
            raise ValidationError("horizon_row outside frame")
        if self.glint_count < 0:
            raise ValidationError("glint_count must be >= 0")
        lo, hi = self.glint_amp_range
        if not 0 < lo <= hi:
            raise ValidationError("glint_amp_range must satisfy 0 < lo <= hi")
        if self.target_amp <= 0:
            raise ValidationError("target_amp must be > 0")
        if self.read_noise_sigma < 0 or self.horizon_width <= 0:
            raise ValidationError("read_noise_sigma must be >= 0 and horizon_width > 0")
        if not all(0.0 <= v < 1.0 for v in self.target_subpixel):
            raise ValidationError("target_subpixel must lie in [0, 1)")


def background(params: SceneParams) -> np.ndarray:
    """Row-constant background: linear ramp plus horizon band."""
    rows = np.arange(params.height, dtype=np.float64)
    profile = (
        params.background_level
        + params.background_ramp * rows / (params.height - 1)
        + params.horizon_level * np.exp(-0.5 * ((rows - params.horizon_row) / params.horizon_width) ** 2)
    )
    return np.repeat(profile[:, None], params.width, axis=1)


def stamp(image: np.ndarray, source: PointSource, psf: PsfModel) -> None:
    """Add ``source`` convolved with the PSF into ``image`` in place."""
    r = psf.kernel_radius
    h, w = image.shape
    if not (r <= source.row < h - r and r <= source.col < w - r):
        raise SourceOutOfBounds(f"PSF of source at ({source.row}, {source.col}) exceeds frame {image.shape}")
    kernel = render_psf(psf, source.subpixel)
    image[source.row - r : source.row + r + 1, source.col - r : source.col + r + 1] += source.amplitude * kernel


def _layout_glints(params: SceneParams) -> List[PointSource]:
    rng = np.random.default_rng(derive_seed(params.seed, "glints"))
    r = params.psf.kernel_radius
    band = params.height // 8
    row_lo = max(r, params.horizon_row - band)
    row_hi = min(params.height - 1 - r, params.horizon_row + band)
    if row_lo > row_hi:
        raise SourceOutOfBounds("no room for glints near the horizon")
    # clutter stays this many pixels (chebyshev) away from the target
    keep_out = params.glint_keep_out
    lo, hi = params.glint_amp_range
    glints = []
    while len(glints) < params.glint_count:
        row = int(rng.integers(row_lo, row_hi + 1))
        col = int(rng.integers(r, params.width - r))
        amp = float(rng.uniform(lo, hi))
        sub = (float(rng.uniform(0, 1)), float(rng.uniform(0, 1)))
        if max(abs(row - params.target_row), abs(col - params.target_col)) <= keep_out:
            continue
        glints.append(PointSource(row, col, amp, sub))
    return glints


def _render(params: SceneParams, glints: List[PointSource], noise_seed: int) -> Tuple[np.ndarray, SceneTruth]:
    target = PointSource(params.target_row, params.target_col, params.target_amp, tuple(params.target_subpixel))
    image = background(params)
    stamp(image, target, params.psf)
    for g in glints:
        stamp(image, g, params.psf)
    if params.read_noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        image += rng.normal(0.0, params.read_noise_sigma, size=image.shape)
    truth = SceneTruth(target, tuple(glints), (params.height, params.width))
    return image, truth


def generate_scene(params: SceneParams, frame_index: int = 0) -> Tuple[np.ndarray, SceneTruth]:
    """Render one frame and its ground truth.

    Glint layout depends only on ``params.seed``; the read noise stream is
    derived from ``(params.seed, frame_index)``.
    """
    glints = _layout_glints(params)
    return _render(params, glints, derive_seed(params.seed, f"noise:{frame_index}"))


def generate_sequence(
    params: SceneParams, frame_count: int, target_amp_jitter: float = 0.0
) -> List[Tuple[np.ndarray, SceneTruth]]:
    """Render ``frame_count`` frames of a static scene with a fluctuating target.

    The target keeps its pixel and the glints stay put; per frame the target
    amplitude is ``target_amp * (1 + u)`` with ``u ~ U[-jitter, +jitter]``
    and the read noise is redrawn.
    """
    if frame_count < 1:
        raise ValidationError("frame_count must be >= 1")
    if not 0.0 <= target_amp_jitter < 1.0:
        raise ValidationError("target_amp_jitter must lie in [0, 1)")
    glints = _layout_glints(params)
    rng = np.random.default_rng(derive_seed(params.seed, "jitter"))
    frames = []
    for i in range(frame_count):
        u = rng.uniform(-target_amp_jitter, target_amp_jitter) if target_amp_jitter > 0 else 0.0
        frame_params = replace(params, target_amp=params.target_amp * (1.0 + u))
        frames.append(_render(frame_params, glints, derive_seed(params.seed, f"noise:{i}")))
    return frames
