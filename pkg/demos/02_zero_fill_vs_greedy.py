"""Why plain thresholding of a 1/16 zero-fill image is not enough.

With one Fourier sample per 4x4 block every bright glint spreads aliasing
over the whole frame, and the target drowns. The greedy method removes the
brightest sources group by group from the measurements and looks again.
"""
from csdetect import FrontendParams, GreedyParams, SceneParams, generate_scene
from csdetect.evaluation import MethodContext, run_method, target_rank, xcds_above_target

fp = FrontendParams(threshold=3.0)
ctx_kw = dict(frontend=fp, greedy=GreedyParams(group_size=5, stop_threshold=3.0))

print("seed  conventional  zero-fill@1/16  greedy@1/16")
for seed in range(8):
    img, truth = generate_scene(
        SceneParams(seed=seed, read_noise_sigma=0.1, glint_amp_range=(5.0, 300.0), target_amp=16.0))
    ctx = MethodContext(seed=seed, **ctx_kw)
    conv = xcds_above_target(run_method("conventional", 1, img, ctx), truth)
    zf = xcds_above_target(run_method("cs-zerofill", 4, img, ctx), truth)
    gr = target_rank(run_method("cs-greedy", 4, img, ctx), truth)
    show = lambda v: "miss" if v is None else str(v)
    print(f"{seed:4d}  {show(conv):>12}  {show(zf):>14}  {show(gr):>11}")
