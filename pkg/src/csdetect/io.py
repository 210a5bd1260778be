"""Binary file formats, CSV reports, PGM previews and run configuration.

Binary layouts (all little-endian):

frames (``.cssk``)::

    "CSSK" | version u16 = 1 | dtype u8 = 1 (float32) | reserved u8
    width u32 | height u32 | count u32 | count*height*width float32, row-major

masks (``.csmk``)::

    "CSMK" | version u16 = 1 | width u32 | height u32 | block_w u16
    block_h u16 | kind u8 | seed u64 | ceil(w*h/8) bytes, row-major packbits

measurements (``.csms``)::

    "CSMS" | version u16 = 1 | reserved u16 | count u32 | height u32
    width u32 | noise_sigma f64 | mask_id (32 raw sha256 bytes)
    count complex128 values (re, im interleaved float64)
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import jsonschema
import numpy as np

from csdetect.core import CSDetectError, Exceedance, Mask, MaskKind, MeasurementSet, ValidationError, derive_seed
from csdetect.evaluation import EvalConfig, RocPoint
from csdetect.frontend import FrontendParams
from csdetect.scene import PsfModel, SceneParams
from csdetect.solvers import GreedyParams, SolverParams


class FormatError(CSDetectError):
    """A file does not follow its binary layout."""


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class ConfigError(ValidationError):
    """The run configuration is malformed."""


FRAME_MAGIC = b"CSSK"
MASK_MAGIC = b"CSMK"
MEAS_MAGIC = b"CSMS"
VERSION = 1
DTYPE_FLOAT32 = 1

_FRAME_HEADER = struct.Struct("<4sHBBIII")
_MASK_HEADER = struct.Struct("<4sHIIHHBQ")
_MEAS_HEADER = struct.Struct("<4sHHIIId32s")


def _read_header(buf: bytes, layout: struct.Struct, magic: bytes):
    if len(buf) < 4 or buf[:4] != magic:
        raise BadMagic(f"expected magic {magic!r}, found {buf[:4]!r}")
    if len(buf) < 6:
        raise TruncatedFile("header cut short")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise UnsupportedVersion(f"version {version} (supported: {VERSION})")
    if len(buf) < layout.size:
        raise TruncatedFile("header cut short")
    return layout.unpack_from(buf)


# ---------------------------------------------------------------------------
# frames

def write_frames(path, frames) -> None:
    """Write a stack of equally sized frames as float32."""
    data = np.asarray([np.asarray(f) for f in frames], dtype="<f4")
    if data.ndim != 3 or data.shape[0] == 0:
        raise ValidationError("need at least one 2-D frame, all of the same shape")
    if not np.all(np.isfinite(data)):
        raise ValidationError("frames contain non-finite values")
    n, h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(_FRAME_HEADER.pack(FRAME_MAGIC, VERSION, DTYPE_FLOAT32, 0, w, h, n))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_frames(path) -> np.ndarray:
    """Read a frame file; returns a float32 array of shape ``(count, height, width)``."""
    buf = Path(path).read_bytes()
    _, _, dtype, _, w, h, n = _read_header(buf, _FRAME_HEADER, FRAME_MAGIC)
    if dtype != DTYPE_FLOAT32:
        raise FormatError(f"unsupported dtype code {dtype}")
    need = n * h * w * 4
    body = buf[_FRAME_HEADER.size :]
    if len(body) < need:
        raise TruncatedFile(f"header promises {n} frames of {h}x{w}, only {len(body)} of {need} bytes present")
    return np.frombuffer(body, dtype="<f4", count=n * h * w).reshape(n, h, w).astype(np.float32)


# ---------------------------------------------------------------------------
# masks

def write_mask(path, mask: Mask) -> None:
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(_MASK_HEADER.pack(MASK_MAGIC, VERSION, w, h, mask.block_w, mask.block_h, int(mask.kind), mask.seed))
        fh.write(np.packbits(mask.open).tobytes())


def read_mask(path) -> Mask:
    """Read a mask file; invariants are re-checked (ValidationError on violation)."""
    buf = Path(path).read_bytes()
    _, _, w, h, bw, bh, kind, seed = _read_header(buf, _MASK_HEADER, MASK_MAGIC)
    nbytes = (w * h + 7) // 8
    body = buf[_MASK_HEADER.size :]
    if len(body) < nbytes:
        raise TruncatedFile(f"bitmap needs {nbytes} bytes, found {len(body)}")
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8, count=nbytes), count=w * h).astype(bool)
    try:
        kind = MaskKind(kind)
    except ValueError:
        raise ValidationError(f"unknown mask kind {kind}") from None
    return Mask(bits.reshape(h, w), bw, bh, kind, seed)


# ---------------------------------------------------------------------------
# measurements

def write_measurements(path, meas: MeasurementSet, shape: Tuple[int, int]) -> None:
    h, w = shape
    header = _MEAS_HEADER.pack(MEAS_MAGIC, VERSION, 0, len(meas), h, w, meas.noise_sigma, bytes.fromhex(meas.mask_id))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(meas.values, dtype="<c16").tobytes())


def read_measurements(path) -> Tuple[MeasurementSet, Tuple[int, int]]:
    """Returns the measurement set and the image shape it was taken from."""
    buf = Path(path).read_bytes()
    _, _, _, n, h, w, sigma, mid = _read_header(buf, _MEAS_HEADER, MEAS_MAGIC)
    body = buf[_MEAS_HEADER.size :]
    if len(body) < 16 * n:
        raise TruncatedFile(f"expected {n} complex values")
    values = np.frombuffer(body, dtype="<c16", count=n).astype(np.complex128)
    return MeasurementSet(values, mid.hex(), sigma), (h, w)


# ---------------------------------------------------------------------------
# text reports

ROC_HEADER = ("threshold", "detections", "frames", "false_alarms", "method")


def write_roc_csv(path, rocs: Mapping[str, Sequence[RocPoint]]) -> None:
    """One CSV for all methods; floats are written with ``repr`` so output is byte-stable."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(ROC_HEADER)
        for method, roc in rocs.items():
            for p in roc:
                out.writerow((repr(float(p.threshold)), p.detections, p.frames, p.false_alarms, method))


def read_roc_csv(path) -> Dict[str, List[RocPoint]]:
    rocs: Dict[str, List[RocPoint]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROC_HEADER:
            raise FormatError(f"unexpected ROC header {reader.fieldnames}")
        for row in reader:
            rocs.setdefault(row["method"], []).append(
                RocPoint(float(row["threshold"]), int(row["detections"]), int(row["frames"]), int(row["false_alarms"]))
            )
    return rocs


def write_exceedances_csv(path, per_frame: Sequence[Sequence[Exceedance]]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(("frame", "rank", "row", "col", "score"))
        for i, xcds in enumerate(per_frame):
            for k, x in enumerate(xcds):
                out.writerow((i, k, x.row, x.col, repr(float(x.score))))


def write_trace_csv(path, trace: Sequence[float], grad_norms: Sequence[float] = ()) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(("iter", "objective", "grad_norm"))
        for i, f in enumerate(trace):
            g = repr(float(grad_norms[i])) if i < len(grad_norms) else ""
            out.writerow((i, repr(float(f)), g))


def write_pgm(path, img) -> None:
    """8-bit binary PGM preview, min-max stretched. Diagnostic only."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros(img.shape) if hi <= lo else (img - lo) / (hi - lo) * 255.0
    pixels = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or parts[3] != b"255":
        raise BadMagic("not an 8-bit binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


# ---------------------------------------------------------------------------
# run configuration

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_PSF = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"kernel_radius": _INT, "sigma": _NUM},
}


def _section(props: Dict[str, Any]) -> Dict[str, Any]:
    return {"type": "object", "additionalProperties": False, "properties": props}


CONFIG_SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "csdetect run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "frames": {"type": "integer", "minimum": 1},
        "jitter": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "noise_sigma": {"type": "number", "minimum": 0},
        "out": {"type": "string"},
        "prefilter": {"type": "boolean"},
        "scene": _section({
            "width": _INT, "height": _INT, "background_level": _NUM, "background_ramp": _NUM,
            "horizon_row": _INT, "horizon_level": _NUM, "horizon_width": _NUM, "glint_count": _INT,
            "glint_amp_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
            "target_amp": _NUM, "target_row": _INT, "target_col": _INT,
            "target_subpixel": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
            "read_noise_sigma": _NUM, "glint_keep_out": _INT, "psf": _PSF,
        }),
        "mask": _section({
            "block": {"type": "integer", "minimum": 1},
            "kind": {"enum": ["one_per_block", "bernoulli"]},
            "candidates": {"type": "integer", "minimum": 1},
            "metric": {"enum": ["fa_count", "recon_mse"]},
        }),
        "frontend": _section({
            "demean_len": _INT, "var_window": _INT, "var_guard": _INT,
            "var_floor": {"type": ["number", "null"]}, "threshold": _NUM, "psf": _PSF,
        }),
        "solver": _section({
            "lambda_sparse": _NUM, "lambda_tv": _NUM, "epsilon_data": _NUM, "smooth_mu": _NUM,
            "max_iters": _INT, "grad_tol": _NUM, "alpha0": _NUM, "backtrack": _NUM,
            "max_backtracks": _INT, "armijo_c": _NUM, "restart_every": {"type": ["integer", "null"]},
            "sparsifier": {"enum": ["identity"]},
        }),
        "greedy": _section({
            "group_size": _INT, "max_rounds": _INT, "stop_threshold": {"type": ["number", "null"]},
            "subtract_psf": _PSF, "prefilter": {"type": "boolean"},
        }),
        "eval": _section({
            "match_radius": {"type": "integer", "minimum": 0},
            "n_thresholds": {"type": "integer", "minimum": 2},
            "thresholds": {"type": ["array", "null"], "items": _NUM},
            "methods": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        }),
    },
}


@dataclass(frozen=True)
class MaskConfig:
    block: int = 2
    kind: MaskKind = MaskKind.ONE_PER_BLOCK
    candidates: int = 32
    metric: str = "fa_count"


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs. Every random draw derives from ``seed``."""

    scene: SceneParams = field(default_factory=SceneParams)
    mask: MaskConfig = field(default_factory=MaskConfig)
    frontend: FrontendParams = field(default_factory=FrontendParams)
    solver: SolverParams = field(default_factory=SolverParams)
    greedy: GreedyParams = field(default_factory=GreedyParams)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    frames: int = 10
    jitter: float = 0.5
    noise_sigma: float = 0.0
    prefilter: bool = True
    out: str = "out"


def _with_psf(cls, data: Dict[str, Any], key: str = "psf"):
    data = dict(data)
    if key in data:
        data[key] = PsfModel(**data[key])
    return cls(**data)


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    """Validate against :data:`CONFIG_SCHEMA` and build a :class:`RunConfig`.

    Missing keys take their defaults. Raises :class:`ConfigError`.
    """
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None
    try:
        kw: Dict[str, Any] = {k: data[k] for k in ("seed", "frames", "jitter", "noise_sigma", "prefilter", "out") if k in data}
        scene = dict(data.get("scene", {}))
        for key in ("glint_amp_range", "target_subpixel"):
            if key in scene:
                scene[key] = tuple(scene[key])
        scene["seed"] = derive_scene_seed(data.get("seed", 0))
        kw["scene"] = _with_psf(SceneParams, scene)
        mask = dict(data.get("mask", {}))
        if "kind" in mask:
            mask["kind"] = MaskKind[mask["kind"].upper()]
        kw["mask"] = MaskConfig(**mask)
        kw["frontend"] = _with_psf(FrontendParams, data.get("frontend", {}))
        kw["solver"] = SolverParams(**data.get("solver", {}))
        kw["greedy"] = _with_psf(GreedyParams, data.get("greedy", {}), "subtract_psf")
        ev = dict(data.get("eval", {}))
        for key in ("thresholds", "methods"):
            if ev.get(key) is not None:
                ev[key] = tuple(ev[key])
        kw["eval"] = EvalConfig(**ev)
        return RunConfig(**kw)
    except (ValidationError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def derive_scene_seed(seed: int) -> int:
    return derive_seed(seed, "scene")


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(data)


def override_config(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply command-line overrides; ``None`` values are ignored."""
    kw = {k: v for k, v in overrides.items() if v is not None}
    if "seed" in kw:
        kw["scene"] = replace(cfg.scene, seed=derive_scene_seed(kw["seed"]))
    if "block" in kw:
        kw["mask"] = replace(cfg.mask, block=kw.pop("block"))
    if "methods" in kw:
        kw["eval"] = replace(cfg.eval, methods=tuple(kw.pop("methods")))
    return replace(cfg, **kw)


def default_config() -> RunConfig:
    return config_from_dict({})


def config_to_dict(cfg: RunConfig) -> Dict[str, Any]:
    """Plain-JSON view of a config (the inverse of :func:`config_from_dict` up to the derived scene seed)."""

    def plain(obj):
        if isinstance(obj, MaskKind):
            return obj.name.lower()
        if hasattr(obj, "__dataclass_fields__"):
            return {f.name: plain(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, (tuple, list)):
            return [plain(v) for v in obj]
        return obj

    out = plain(cfg)
    out["scene"].pop("seed")
    return out
