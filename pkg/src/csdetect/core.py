"""Shared data model: masks, measurements, detections and ground truth.

Images and spectra are plain 2-D numpy arrays (``float64`` and
``complex128``); the helpers here validate them. The remaining types are
immutable value objects.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np


class CSDetectError(Exception):
    """Base class for all package errors."""


class ValidationError(CSDetectError, ValueError):
    """A value violates a documented invariant."""


class DimensionMismatch(ValidationError):
    pass


class MaskBindingMismatch(ValidationError):
    """Measurements were produced with a different mask."""


class SourceOutOfBounds(ValidationError):
    pass


class KernelTooLong(ValidationError):
    pass


class BlockNotDivisible(ValidationError):
    pass


class EmptyCandidates(ValidationError):
    pass


class UnknownMethod(CSDetectError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class MaskKind(enum.IntEnum):
    ONE_PER_BLOCK = 0
    BERNOULLI = 1


def as_image(data, name: str = "image") -> np.ndarray:
    """Return ``data`` as a finite 2-D float64 array or raise ValidationError."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def as_spectrum(data, name: str = "spectrum") -> np.ndarray:
    arr = np.asarray(data, dtype=np.complex128)
    if arr.ndim != 2 or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_frame_shape(shape: Tuple[int, int]) -> None:
    """Full-size frames must have even sides of at least 32 pixels."""
    h, w = shape
    if h < 32 or w < 32 or h % 2 or w % 2:
        raise ValidationError(f"frame shape {shape} must have even sides >= 32")


def derive_seed(seed: int, tag) -> int:
    """Derive an independent 64-bit seed from ``seed`` and a tag.

    The derivation is ``sha256(f"{seed}:{tag}")`` truncated to the first
    8 bytes, read little-endian. Every module that needs randomness takes
    its stream from here so a single global seed fixes a whole run.
    """
    digest = hashlib.sha256(f"{int(seed)}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary sampling pattern over the Fourier plane.

    ``open`` is a boolean ``(height, width)`` array; ``block_w`` and
    ``block_h`` give the fat-pixel footprint.
    """

    open: np.ndarray
    block_w: int
    block_h: int
    kind: MaskKind
    seed: int

    def __post_init__(self):
        bits = np.asarray(self.open)
        if bits.ndim != 2:
            raise ValidationError("mask must be 2-D")
        object.__setattr__(self, "open", _readonly(bits.astype(bool)))
        object.__setattr__(self, "kind", MaskKind(self.kind))
        if self.block_w < 1 or self.block_h < 1:
            raise ValidationError("block sizes must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("mask seed must fit in 64 unsigned bits")
        if self.open_count < 1:
            raise ValidationError("mask must have at least one open position")
        if self.kind is MaskKind.ONE_PER_BLOCK:
            h, w = self.shape
            if h % self.block_h or w % self.block_w:
                raise ValidationError("OnePerBlock mask does not tile by its block size")
            tiles = self.open.reshape(h // self.block_h, self.block_h, w // self.block_w, self.block_w)
            if not np.all(tiles.sum(axis=(1, 3)) == 1):
                raise ValidationError("OnePerBlock mask must have exactly one open position per tile")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.open.shape

    @property
    def height(self) -> int:
        return self.open.shape[0]

    @property
    def width(self) -> int:
        return self.open.shape[1]

    @property
    def open_count(self) -> int:
        return int(np.count_nonzero(self.open))

    @property
    def open_fraction(self) -> float:
        return self.open_count / self.open.size

    @property
    def mask_id(self) -> str:
        """Content hash of the bitmap (hex sha256); metadata is not included."""
        h, w = self.shape
        payload = h.to_bytes(4, "little") + w.to_bytes(4, "little") + np.packbits(self.open).tobytes()
        return hashlib.sha256(payload).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return (
            self.shape == other.shape
            and bool(np.array_equal(self.open, other.open))
            and (self.block_w, self.block_h, self.kind, self.seed)
            == (other.block_w, other.block_h, other.kind, other.seed)
        )

    def __hash__(self):
        return hash((self.mask_id, self.block_w, self.block_h, self.kind, self.seed))


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Complex Fourier samples at the open mask positions, row-major order."""

    values: np.ndarray
    mask_id: str
    noise_sigma: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.ndim != 1:
            raise ValidationError("measurement values must be 1-D")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("measurement values contain non-finite entries")
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise ValidationError("noise_sigma must be finite and >= 0")
        object.__setattr__(self, "values", _readonly(vals))

    def __len__(self):
        return self.values.size

    def with_values(self, values) -> "MeasurementSet":
        return MeasurementSet(values, self.mask_id, self.noise_sigma)


@dataclass(frozen=True)
class Exceedance:
    """A candidate detection (xcd): pixel location and normalized score."""

    row: int
    col: int
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValidationError("exceedance score must be finite")


@dataclass(frozen=True)
class PointSource:
    row: int
    col: int
    amplitude: float
    subpixel: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        vals = (self.amplitude, *self.subpixel)
        if not all(np.isfinite(v) for v in vals):
            raise ValidationError("point source values must be finite")
        if self.amplitude <= 0:
            raise ValidationError("point source amplitude must be > 0")
        if not all(0.0 <= v < 1.0 for v in self.subpixel):
            raise ValidationError("sub-pixel offsets must lie in [0, 1)")


@dataclass(frozen=True)
class SceneTruth:
    """Ground truth for one frame: the target plus stationary clutter."""

    target: PointSource
    clutter: Tuple[PointSource, ...] = field(default_factory=tuple)
    shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        object.__setattr__(self, "clutter", tuple(self.clutter))
        if self.shape is not None:
            h, w = self.shape
            for src in (self.target, *self.clutter):
                if not (0 <= src.row < h and 0 <= src.col < w):
                    raise ValidationError(f"source at ({src.row}, {src.col}) outside frame {self.shape}")

    @property
    def sparsity_k(self) -> int:
        return 1 + len(self.clutter)

    @property
    def sources(self) -> Tuple[PointSource, ...]:
        return (self.target, *self.clutter)


def validate_pairing(dims: Sequence[int], mask: Mask, meas: MeasurementSet) -> None:
    """Check that an image/spectrum shape, a mask and measurements belong together.

    Returns None when consistent.

    Raises:
        DimensionMismatch: shapes differ or the value count is wrong.
        MaskBindingMismatch: ``meas`` was produced with another mask.
    """
    dims = tuple(int(d) for d in dims)
    if dims != mask.shape:
        raise DimensionMismatch(f"data shape {dims} != mask shape {mask.shape}")
    if meas.mask_id != mask.mask_id:
        raise MaskBindingMismatch("measurements are bound to a different mask")
    if len(meas) != mask.open_count:
        raise DimensionMismatch(f"{len(meas)} measurements for {mask.open_count} open positions")
