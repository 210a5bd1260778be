import numpy as np
import pytest

from csdetect.core import BlockNotDivisible, EmptyCandidates, Mask, MaskKind, PointSource, SceneTruth, ValidationError
from csdetect.frontend import FrontendParams
from csdetect.masks import (
    FA_SENTINEL,
    MaskScore,
    generate_mask,
    score_candidates,
    score_mask_fa,
    score_mask_mse,
    select_best_mask,
)
from csdetect.scene import SceneParams, generate_scene, render_psf


def test_quarter_mask_full_frame_count():
    m = generate_mask(2560, 512, 2, 2, MaskKind.ONE_PER_BLOCK, seed=0)
    assert m.open_count == 327680


def test_sixteenth_mask_full_frame_fraction():
    m = generate_mask(2560, 512, 4, 4, MaskKind.ONE_PER_BLOCK, seed=1)
    assert m.open_fraction == 1 / 16
    tiles = np.asarray(m.open).reshape(128, 4, 640, 4).sum(axis=(1, 3))
    assert np.all(tiles == 1)


@pytest.mark.parametrize("seed", range(10))
def test_one_per_block_count_all_seeds(seed):
    m = generate_mask(64, 32, 8, 4, MaskKind.ONE_PER_BLOCK, seed)
    assert m.open_count == (64 // 8) * (32 // 4)


def test_determinism_and_seed_sensitivity():
    a = generate_mask(64, 64, 4, 4, seed=5)
    b = generate_mask(64, 64, 4, 4, seed=5)
    c = generate_mask(64, 64, 4, 4, seed=6)
    assert a == b and a.mask_id == b.mask_id
    assert a != c


def test_bernoulli_open_fraction():
    m = generate_mask(512, 512, 4, 4, MaskKind.BERNOULLI, seed=2)
    assert abs(m.open_fraction - 1 / 16) < 0.005
    tiny = generate_mask(2, 2, 64, 64, MaskKind.BERNOULLI, seed=0)
    assert tiny.open_count >= 1


def test_block_not_divisible():
    with pytest.raises(BlockNotDivisible):
        generate_mask(30, 32, 4, 4, MaskKind.ONE_PER_BLOCK, 0)


def point_frame(sources, shape=(64, 128)):
    img = np.zeros(shape)
    k = render_psf(SceneParams().psf)
    for r, c, a in sources:
        img[r - 2 : r + 3, c - 2 : c + 3] += a * k
    return img


def test_fa_count_zero_when_target_brightest():
    # noise keeps the normalized score amplitude dependent
    img = point_frame([(30, 60, 100.0), (20, 30, 10.0)]) + np.random.default_rng(0).normal(0, 1.0, (64, 128))
    truth = SceneTruth(PointSource(30, 60, 100.0), (PointSource(20, 30, 10.0),), img.shape)
    full = Mask(np.ones(img.shape, bool), 1, 1, MaskKind.ONE_PER_BLOCK, 0)
    assert score_mask_fa(full, img, truth, FrontendParams(threshold=3.0)).fa_count == 0


def test_fa_count_sentinel_when_target_missing():
    img = point_frame([(20, 30, 10.0)])
    truth = SceneTruth(PointSource(40, 90, 1.0), (), img.shape)
    full = Mask(np.ones(img.shape, bool), 1, 1, MaskKind.ONE_PER_BLOCK, 0)
    assert score_mask_fa(full, img, truth, FrontendParams(threshold=3.0)).fa_count == FA_SENTINEL


def test_fa_count_ten_brighter_glints():
    # well-separated glints far brighter than the target on a noise floor; full mask keeps the order
    glints = [(15, 20 + 22 * i, 200.0 + i) for i in range(10)]
    img = point_frame(glints + [(45, 128, 20.0)], shape=(64, 256))
    img += np.random.default_rng(0).normal(0, 1.0, size=img.shape)
    truth = SceneTruth(PointSource(45, 128, 20.0), tuple(PointSource(r, c, a) for r, c, a in glints), img.shape)
    full = Mask(np.ones(img.shape, bool), 1, 1, MaskKind.ONE_PER_BLOCK, 0)
    assert score_mask_fa(full, img, truth, FrontendParams(threshold=1.0)).fa_count == 10


def test_mse_full_mask_and_zero_image():
    rng = np.random.default_rng(0)
    img = rng.normal(size=(32, 32))
    full = Mask(np.ones((32, 32), bool), 1, 1, MaskKind.ONE_PER_BLOCK, 0)
    assert score_mask_mse(full, img).recon_mse < 1e-12
    assert score_mask_mse(generate_mask(32, 32, 4, 4, seed=3), np.zeros((32, 32))).recon_mse == 0


def test_mse_decreases_with_open_fraction():
    rng = np.random.default_rng(1)
    sixteenth, quarter = [], []
    for seed in range(10):
        img = rng.normal(size=(32, 32))
        sixteenth.append(score_mask_mse(generate_mask(32, 32, 4, 4, seed=seed), img).recon_mse)
        quarter.append(score_mask_mse(generate_mask(32, 32, 2, 2, seed=seed), img).recon_mse)
    assert min(sixteenth) > 0
    assert np.mean(quarter) < np.mean(sixteenth)


def test_select_single_and_empty():
    img = np.random.default_rng(2).normal(size=(32, 32))
    mask, score = select_best_mask([17], "recon_mse", img)
    assert mask.seed == 17 and score.mask_seed == 17
    with pytest.raises(EmptyCandidates):
        select_best_mask([], "recon_mse", img)
    with pytest.raises(ValidationError):
        select_best_mask([1], "nonsense", img)


def test_select_argmin_with_tie_break(monkeypatch):
    import csdetect.masks as masks

    fake = {10: 3, 11: 0, 12: 7, 13: 0}
    monkeypatch.setattr(masks, "score_mask_fa", lambda m, *a, **k: MaskScore(m.seed, fa_count=fake[m.seed]))
    img = np.zeros((32, 32))
    truth = SceneTruth(PointSource(10, 10, 1.0), (), img.shape)
    mask, score = select_best_mask([10, 11, 12], "fa_count", img, truth=truth, frontend_params=FrontendParams())
    assert mask.seed == 11 and score.fa_count == 0
    mask, _ = select_best_mask([13, 12, 11], "fa_count", img, truth=truth, frontend_params=FrontendParams())
    assert mask.seed == 11


def test_select_is_exhaustive_minimum():
    img, truth = generate_scene(SceneParams(width=128, height=64, horizon_row=30, target_row=26, target_col=64,
                                            glint_count=10, target_amp=40.0, seed=3))
    fp = FrontendParams(threshold=3.0)
    seeds = list(range(8))
    scored = score_candidates(seeds, "fa_count", img, truth=truth, frontend_params=fp)
    best, score = select_best_mask(seeds, "fa_count", img, truth=truth, frontend_params=fp)
    assert all(score.fa_count <= s.fa_count for _, s in scored)
    assert best.seed == min(s.mask_seed for _, s in scored if s.fa_count == score.fa_count)
