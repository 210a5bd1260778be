"""Single-frame spatial detection front end.

demean -> PSF matched filter -> local variance -> background
normalization -> exceedance thresholding. The first two stages are linear
and zero padded; their adjoints are exposed for the solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from csdetect.core import DimensionMismatch, Exceedance, KernelTooLong, ValidationError, as_image
from csdetect.scene import PsfModel, psf_factors


@dataclass(frozen=True)
class FrontendParams:
    """Front-end settings.

    ``var_floor=None`` selects a per-image floor of ``1e-6`` times the
    global variance of the filtered image.
    """

    demean_len: int = 21
    psf: PsfModel = field(default_factory=PsfModel)
    var_window: int = 11
    var_guard: int = 3
    var_floor: Optional[float] = None
    threshold: float = 5.0

    def __post_init__(self):
        if self.demean_len < 1 or self.demean_len % 2 == 0:
            raise ValidationError("demean_len must be odd")
        if self.var_window % 2 == 0 or self.var_guard % 2 == 0:
            raise ValidationError("variance window and guard must be odd")
        if not self.var_guard < self.var_window:
            raise ValidationError("var_guard must be smaller than var_window")
        if self.var_floor is not None and not self.var_floor > 0:
            raise ValidationError("var_floor must be > 0")

    @property
    def border(self) -> Tuple[int, int]:
        """Rows/columns at each edge where exceedances are suppressed."""
        r = self.psf.kernel_radius
        return r, r + self.demean_len // 2


def demean_kernel(length: int) -> np.ndarray:
    h = np.full(length, -1.0 / length)
    h[length // 2] += 1.0
    return h


def demean(img, demean_len: int = 21) -> np.ndarray:
    """Subtract a running 1-D row mean of ``demean_len`` taps (zero padded)."""
    img = as_image(img)
    if demean_len > img.shape[1]:
        raise KernelTooLong(f"demean_len {demean_len} exceeds image width {img.shape[1]}")
    return ndimage.convolve1d(img, demean_kernel(demean_len), axis=1, mode="constant")


# symmetric kernel: the zero-padded convolution is self-adjoint
demean_adjoint = demean


def demean_transfer(width: int, demean_len: int = 21) -> np.ndarray:
    """Frequency response (over column frequency) of the circular demeaning filter.

    Real and zero at DC, so anything constant along a row is removed
    exactly. Multiplying Fourier samples by it demeans the image before
    any zero-fill aliasing can spread the background around.
    """
    if demean_len > width:
        raise KernelTooLong(f"demean_len {demean_len} exceeds image width {width}")
    taps = np.zeros(width)
    half = demean_len // 2
    taps[np.arange(-half, half + 1) % width] = demean_kernel(demean_len)
    return np.fft.fft(taps).real


def matched_filter(img, psf: PsfModel) -> np.ndarray:
    """Correlate with the centred PSF kernel; same size, zero padded."""
    ky, kx = psf_factors(psf)
    out = ndimage.correlate1d(as_image(img), ky, axis=0, mode="constant")
    return ndimage.correlate1d(out, kx, axis=1, mode="constant")


def matched_filter_adjoint(img, psf: PsfModel) -> np.ndarray:
    ky, kx = psf_factors(psf)
    out = ndimage.convolve1d(as_image(img), ky, axis=0, mode="constant")
    return ndimage.convolve1d(out, kx, axis=1, mode="constant")


def local_variance(img, var_window: int = 11, var_guard: int = 3, var_floor: float = 1e-12) -> np.ndarray:
    """Population variance over a square annulus around every pixel.

    The annulus is the ``var_window``^2 neighbourhood minus the central
    ``var_guard``^2 guard region. Only in-frame pixels are counted, so the
    statistic is not biased by padding at the borders. Clamped below at
    ``var_floor``.
    """
    img = as_image(img)
    if var_window % 2 == 0 or var_guard % 2 == 0 or var_guard >= var_window:
        raise ValidationError("windows must be odd with var_guard < var_window")
    # variance is shift invariant; centring keeps the moment difference well conditioned
    x = img - img.mean()
    ones = np.ones_like(x)

    def annulus_sum(a):
        outer = ndimage.uniform_filter(a, var_window, mode="constant") * var_window**2
        inner = ndimage.uniform_filter(a, var_guard, mode="constant") * var_guard**2
        return outer - inner

    n = np.rint(annulus_sum(ones))
    n = np.maximum(n, 1.0)
    mean = annulus_sum(x) / n
    var = annulus_sum(x * x) / n - mean**2
    return np.maximum(var, var_floor)


def background_normalize(filtered, variance) -> np.ndarray:
    """Divide by the local standard deviation, giving z-score-like values."""
    filtered = as_image(filtered, "filtered")
    variance = as_image(variance, "variance")
    if filtered.shape != variance.shape:
        raise DimensionMismatch(f"{filtered.shape} != {variance.shape}")
    return filtered / np.sqrt(variance)


def _local_max_mask(img: np.ndarray) -> np.ndarray:
    # >= all 8 neighbours and > at least one; edges replicate, so flat regions never qualify
    footprint = np.ones((3, 3), dtype=bool)
    footprint[1, 1] = False
    hi = ndimage.maximum_filter(img, footprint=footprint, mode="nearest")
    lo = ndimage.minimum_filter(img, footprint=footprint, mode="nearest")
    return (img >= hi) & (img > lo)


def threshold_exceedances(norm_img, threshold: float, border: Tuple[int, int] = (0, 0)) -> List[Exceedance]:
    """Local maxima scoring at least ``threshold``.

    Sorted by descending score, ties by ``(row, col)``. Peaks within
    ``border = (rows, cols)`` of the frame edge are dropped.
    """
    norm_img = np.asarray(norm_img, dtype=np.float64)
    keep = _local_max_mask(norm_img) & (norm_img >= threshold)
    br, bc = border
    if br:
        keep[:br] = keep[-br:] = False
    if bc:
        keep[:, :bc] = keep[:, -bc:] = False
    rows, cols = np.nonzero(keep)
    scores = norm_img[rows, cols]
    order = np.lexsort((cols, rows, -scores))
    return [Exceedance(int(rows[i]), int(cols[i]), float(scores[i])) for i in order]


def linear_filter(img, params: FrontendParams) -> np.ndarray:
    """The linear part of the chain: demean then matched filter."""
    return matched_filter(demean(img, params.demean_len), params.psf)


def linear_filter_adjoint(img, params: FrontendParams) -> np.ndarray:
    return demean_adjoint(matched_filter_adjoint(img, params.psf), params.demean_len)


def variance_floor(filtered: np.ndarray, params: FrontendParams) -> float:
    if params.var_floor is not None:
        return params.var_floor
    return max(1e-6 * float(np.var(filtered)), np.finfo(float).tiny)


def noise_std_map(img, params: FrontendParams) -> np.ndarray:
    """Local standard deviation of the linearly filtered image."""
    filtered = linear_filter(img, params)
    var = local_variance(filtered, params.var_window, params.var_guard, variance_floor(filtered, params))
    return np.sqrt(var)


def frontend_pipeline(
    img, params: FrontendParams, threshold: Optional[float] = None
) -> Tuple[np.ndarray, List[Exceedance]]:
    """Run the whole front end on one frame.

    Returns the background-normalized image and its exceedances.
    ``threshold`` overrides ``params.threshold`` (pass ``-np.inf`` to get
    every local maximum, as the ROC sweep does).
    """
    filtered = linear_filter(img, params)
    var = local_variance(filtered, params.var_window, params.var_guard, variance_floor(filtered, params))
    norm = background_normalize(filtered, var)
    thr = params.threshold if threshold is None else threshold
    return norm, threshold_exceedances(norm, thr, params.border)
