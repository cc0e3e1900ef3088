import numpy as np
import pytest

from dualdepth.evaluation import (
    CameraRig,
    DepthMap,
    MetricsReport,
    aggregate,
    blend_flipped,
    compute_metrics,
    d1_all,
    disparity_to_depth,
    edge_masks,
    evaluate_predictions,
    evaluate_set,
    post_process,
)
from dualdepth.trainer import SceneSpec, generate_scene_set

import oracles


def gt_map(seed=0, shape=(6, 10)):
    return DepthMap.dense(np.random.default_rng(seed).uniform(2.0, 60.0, size=shape))


def test_disparity_to_depth_examples():
    rig = CameraRig(10.0, 2.0)
    assert disparity_to_depth(np.array([4.0]), rig).depth[0] == 5.0
    d = np.array([3.0, 7.0])
    np.testing.assert_allclose(disparity_to_depth(2 * d, rig).depth, disparity_to_depth(d, rig).depth / 2)
    clamped = disparity_to_depth(np.array([0.001, 0.0]), rig)
    np.testing.assert_array_equal(clamped.depth, [2000.0, 2000.0])
    assert clamped.valid.all()
    assert disparity_to_depth(np.array([0.25]), rig, width=16).depth[0] == 5.0


def test_rig_and_clamp_validation():
    with pytest.raises(ValueError):
        CameraRig(0.0, 1.0)
    with pytest.raises(ValueError):
        CameraRig(1.0, -1.0)
    with pytest.raises(ValueError):
        disparity_to_depth(np.ones(2), CameraRig(1, 1), min_disp_px=0)


def test_metrics_identity():
    g = gt_map()
    r = compute_metrics(g, g)
    assert (r.abs_rel, r.sq_rel, r.rmse, r.rmse_log) == (0.0, 0.0, 0.0, 0.0)
    assert (r.a1, r.a2, r.a3) == (1.0, 1.0, 1.0)


def test_metrics_closed_forms():
    g = gt_map(1)
    r = compute_metrics(DepthMap.dense(1.1 * g.depth), g)
    assert abs(r.abs_rel - 0.1) < 1e-12 and r.a1 == 1.0
    r = compute_metrics(DepthMap.dense(1.3 * g.depth), g)
    assert r.a1 == 0.0 and r.a2 == 1.0


def test_d1_all_threshold_cases():
    assert d1_all(np.full(5, 7.0), np.full(5, 7.0)) == 0.0
    assert d1_all(np.full(5, 14.0), np.full(5, 10.0)) == 100.0
    assert d1_all(np.full(5, 104.0), np.full(5, 100.0)) == 0.0
    with pytest.raises(ValueError):
        d1_all(np.ones(3), np.zeros(3))


def test_d1_all_through_metrics_needs_rig():
    rig = CameraRig(100.0, 1.0)
    g = DepthMap.dense(np.full((2, 2), 10.0))  # 10 px
    p = DepthMap.dense(np.full((2, 2), 100.0 / 14.0))  # 14 px
    assert compute_metrics(p, g, rig).d1_all == 100.0
    assert np.isnan(compute_metrics(p, g).d1_all)


def test_metrics_mask_and_errors():
    depth = np.array([[5.0, 0.0], [90.0, 10.0]])
    g = DepthMap.dense(depth)
    r = compute_metrics(DepthMap.dense(np.full((2, 2), 5.0)), g)
    assert r.pixels == 2
    with pytest.raises(ValueError):
        compute_metrics(g, DepthMap.dense(np.zeros((2, 2))))
    with pytest.raises(ValueError):
        compute_metrics(g, DepthMap.dense(np.ones((3, 3))))


@pytest.mark.parametrize("seed", range(5))
def test_metrics_match_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    g = rng.uniform(0.5, 90.0, size=(5, 7))
    g[rng.uniform(size=g.shape) < 0.2] = 0.0
    p = g * rng.uniform(0.6, 1.6, size=g.shape) + rng.uniform(-1, 1, size=g.shape)
    p = np.abs(p) + 1e-4
    got = compute_metrics(DepthMap.dense(p), DepthMap.dense(g)).to_dict()
    for k, v in oracles.depth_metrics(p, g).items():
        assert abs(got[k] - v) < 1e-10, k


def test_edge_masks_shape():
    wl, wr = edge_masks(100)
    assert wl[0] == 1.0 and wr[-1] == 1.0
    assert np.all(wl[6:] == 0.0) and np.all(wr[:-6] == 0.0)
    np.testing.assert_array_equal(wl, wr[::-1])


def test_post_process_constant_stub():
    img = np.random.default_rng(0).uniform(size=(1, 3, 8, 40))
    out = post_process(lambda x: np.full((x.shape[0], 1, *x.shape[2:]), 0.07), img)
    np.testing.assert_allclose(out, 0.07, rtol=0, atol=1e-15)


def test_post_process_symmetric_input_interior():
    half = np.random.default_rng(1).uniform(size=(1, 1, 4, 20))
    img = np.concatenate([half, half[..., ::-1]], axis=-1)
    stub = lambda x: x.mean(axis=1, keepdims=True) * 0.1  # noqa: E731  symmetric under mirroring
    out = post_process(stub, img)
    np.testing.assert_allclose(out, stub(img), rtol=0, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_blend_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    w = int(rng.integers(5, 60))
    d1, d2 = rng.uniform(size=(1, 1, 3, w)), rng.uniform(size=(1, 1, 3, w))
    np.testing.assert_allclose(blend_flipped(d1, d2), oracles.pp_blend(d1, d2), rtol=0, atol=1e-12)


def test_aggregate_is_uniform_mean():
    a = MetricsReport(0.1, 1, 2, 3, 4, 0.5, 0.6, 0.7, pixels=10)
    b = MetricsReport(0.3, 3, 4, 5, 6, 0.7, 0.8, 0.9, pixels=30)
    m = aggregate([a, b])
    assert m.abs_rel == pytest.approx(0.2) and m.a3 == pytest.approx(0.8) and m.pixels == 40
    with pytest.raises(ValueError):
        aggregate([])


def test_evaluate_set_with_oracle_predictor():
    samples = generate_scene_set(SceneSpec(height=16, width=32, disparity_px=(3.0,)), 2)
    rig = CameraRig(32.0, 0.5)
    perfect = lambda x: np.full((x.shape[0], 1, *x.shape[2:]), 3.0 / 32)  # noqa: E731
    r = evaluate_set(perfect, samples, rig)
    assert r.abs_rel < 1e-12 and r.a1 == 1.0 and r.d1_all == 0.0
    per = evaluate_predictions([np.full((16, 32), 3.3 / 32)] * 2, samples, rig)
    assert per[0].abs_rel == pytest.approx(1 - 3.0 / 3.3)
