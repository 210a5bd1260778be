"""Partial-Fourier measurement operator ``A = M F``.

All transforms are unitary (``norm="ortho"``), so the adjoint of a
fully open operator is its inverse and ``||A|| <= 1`` for any mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from csdetect.core import (
    DimensionMismatch,
    Mask,
    MeasurementSet,
    as_image,
    as_spectrum,
    validate_pairing,
)


def fft2(img) -> np.ndarray:
    """Unitary 2-D DFT of a real image."""
    return np.fft.fft2(as_image(img), norm="ortho")


def ifft2(spec) -> Tuple[np.ndarray, float]:
    """Unitary inverse 2-D DFT.

    Returns:
        (real part, max absolute imaginary residual)
    """
    out = np.fft.ifft2(as_spectrum(spec), norm="ortho")
    return out.real.copy(), float(np.max(np.abs(out.imag)))


@dataclass(frozen=True)
class MeasurementOperator:
    mask: Mask

    @property
    def shape(self):
        return self.mask.shape

    def sample(self, spectrum: np.ndarray) -> np.ndarray:
        # boolean indexing walks positions in row-major order
        return spectrum[self.mask.open]

    def embed(self, values: np.ndarray) -> np.ndarray:
        spec = np.zeros(self.mask.shape, dtype=np.complex128)
        spec[self.mask.open] = values
        return spec

    def apply(self, img: np.ndarray) -> np.ndarray:
        """Noise-free ``M F x`` as a raw complex vector."""
        return self.sample(np.fft.fft2(img, norm="ortho"))

    def apply_adjoint(self, values: np.ndarray) -> np.ndarray:
        """Real part of ``(M F)^H v`` for a raw complex vector."""
        return np.fft.ifft2(self.embed(values), norm="ortho").real

    def forward(self, img, noise_sigma: float = 0.0, seed: Optional[int] = None) -> MeasurementSet:
        """Sample the spectrum of ``img`` at the open positions.

        Complex Gaussian noise with standard deviation ``noise_sigma`` per
        real/imaginary channel is added when ``noise_sigma > 0``.
        """
        img = as_image(img)
        if img.shape != self.mask.shape:
            raise DimensionMismatch(f"image shape {img.shape} != mask shape {self.mask.shape}")
        values = self.apply(img)
        if noise_sigma > 0:
            rng = np.random.default_rng(seed)
            noise = rng.normal(0.0, noise_sigma, size=(2, values.size))
            values = values + noise[0] + 1j * noise[1]
        return MeasurementSet(values, self.mask.mask_id, float(noise_sigma))

    def adjoint(self, meas: MeasurementSet) -> np.ndarray:
        validate_pairing(self.mask.shape, self.mask, meas)
        return self.apply_adjoint(meas.values)

    def hermitian_fill(self, values: np.ndarray) -> np.ndarray:
        """Spectrum holding the samples and their conjugate mirrors.

        A real image has ``X[-k] = conj(X[k])``, so each sample also fixes
        its mirror bin. Where both bins are open the two readings are
        averaged. The inverse transform of the result is the minimum-norm
        real image that best fits the samples.
        """
        spec = self.embed(values)
        h, w = self.mask.shape
        ri, ci = (-np.arange(h)) % h, (-np.arange(w)) % w
        mirrored = np.conj(spec[ri][:, ci])
        open_ = self.mask.open
        open_mirror = open_[ri][:, ci]
        out = np.where(open_, spec, mirrored)
        both = open_ & open_mirror
        out[both] = 0.5 * (spec[both] + mirrored[both])
        out[~(open_ | open_mirror)] = 0.0
        return out

    def min_norm_reconstruct(self, meas: MeasurementSet) -> np.ndarray:
        """Minimum-norm real least-squares solution of ``M F x = y``."""
        validate_pairing(self.mask.shape, self.mask, meas)
        return np.fft.ifft2(self.hermitian_fill(meas.values), norm="ortho").real

    def zero_fill_reconstruct(self, meas: MeasurementSet) -> np.ndarray:
        """Inverse DFT with the unmeasured coefficients set to zero.

        Numerically the adjoint. A point of amplitude ``a`` comes back with
        peak ``a * open_fraction`` surrounded by aliasing.
        """
        return self.adjoint(meas)
