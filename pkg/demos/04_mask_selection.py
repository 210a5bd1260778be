"""Picking a sampling mask on a calibration frame.

Thirty-two random 1/16 masks are scored on one frame, either by how many
false alarms sit above the target after zero-fill, or by reconstruction
error. The spread shows how much the draw matters.
"""
import numpy as np

from csdetect import FrontendParams, SceneParams, generate_scene
from csdetect.core import derive_seed
from csdetect.masks import FA_SENTINEL, best_scored, score_candidates

img, truth = generate_scene(SceneParams(seed=5, target_amp=40.0))
seeds = [derive_seed(5, f"mask-candidate:{i}") for i in range(32)]

scored = score_candidates(seeds, "fa_count", img, block=(4, 4), truth=truth,
                          frontend_params=FrontendParams(threshold=3.0))
fa = np.array([s.fa_count for _, s in scored])
found = fa[fa != FA_SENTINEL]
mask, best = best_scored(scored, "fa_count")
print(f"fa_count over 32 masks: target lost by {len(fa) - len(found)}; "
      f"otherwise min {found.min()}  median {np.median(found):g}  max {found.max()}")
print(f"chosen seed {best.mask_seed}  id {mask.mask_id[:12]}")

scored = score_candidates(seeds, "recon_mse", img, block=(4, 4))
mse = np.array([s.recon_mse for _, s in scored])
print(f"recon_mse over 32 masks: min {mse.min():.4g}  max {mse.max():.4g}")
