"""Compressive-sensing detection of sub-pixel point targets.

Synthetic maritime scenes, partial-Fourier measurement operators, a
conventional matched-filter detection front end, sparse recovery solvers
and ROC evaluation.
"""

from csdetect.core import (
    CSDetectError,
    DimensionMismatch,
    Exceedance,
    Mask,
    MaskBindingMismatch,
    MaskKind,
    MeasurementSet,
    SceneTruth,
    validate_pairing,
)
from csdetect.scene import PsfModel, SceneParams, generate_scene, generate_sequence, render_psf
from csdetect.sensing import MeasurementOperator, fft2, ifft2
from csdetect.frontend import FrontendParams, frontend_pipeline
from csdetect.masks import generate_mask, select_best_mask
from csdetect.solvers import GreedyParams, SolverParams, greedy_detect, ist_solve, ncg_solve

__version__ = "0.1.0"

__all__ = [
    "CSDetectError",
    "DimensionMismatch",
    "Exceedance",
    "FrontendParams",
    "GreedyParams",
    "Mask",
    "MaskBindingMismatch",
    "MaskKind",
    "MeasurementOperator",
    "MeasurementSet",
    "PsfModel",
    "SceneParams",
    "SceneTruth",
    "SolverParams",
    "fft2",
    "frontend_pipeline",
    "generate_mask",
    "generate_scene",
    "generate_sequence",
    "greedy_detect",
    "ifft2",
    "ist_solve",
    "ncg_solve",
    "render_psf",
    "select_best_mask",
    "validate_pairing",
]
