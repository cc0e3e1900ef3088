"""Acceptance gate: one PASS/FAIL line per criterion at the frozen tolerances.

Run with ``pytest tests/test_acceptance.py`` (the lines appear in the
terminal summary) or ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import filecmp
import json
import time
from pathlib import Path

import numpy as np
import pytest

from dualdepth import cli
from dualdepth.autodiff import Tensor
from dualdepth.dualnet import DualModel, NetworkConfig
from dualdepth.evaluation import DepthMap, blend_flipped, compute_metrics, d1_all
from dualdepth.gradcheck import SMOOTH_TOL, default_suite, run_suite
from dualdepth.io import (
    decode_checkpoint,
    decode_pfm,
    decode_pnm,
    encode_checkpoint,
    encode_pfm,
    encode_pnm,
)
from dualdepth.objectives import (
    DNM6_COMPONENTS,
    DNM12_COMPONENTS,
    LossBreakdown,
    LossWeights,
    appearance_loss,
    lr_consistency_loss,
    recompose,
    smoothness_loss,
)
from dualdepth.stereo_ops import LEFTWARD, RIGHTWARD, ssim_map, warp_horizontal
from dualdepth.trainer import SceneSpec, TrainConfig, compute_loss, generate_scene_set, lr_at, stack_batch, train

import oracles

RESULTS: list[str] = []

# convergence protocol shared by criteria 5 and 6
SCENES = SceneSpec(profile="constant", disparity_px=(4.0,), texture="smoothed-noise", height=64, width=128)
N_TRAIN, N_HELDOUT = 8, 4
STEPS, WINDOW = 500, 10
DNM6_MEDIAN_PX = 1.5
DNM12_MEDIAN_PX = 1.5 * DNM6_MEDIAN_PX


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title} | {detail}"
    RESULTS.append(line)
    print(line)


def convergence_cfg(kind: str) -> TrainConfig:
    return TrainConfig(
        model_kind=kind,
        epochs=STEPS // 50,
        steps_per_epoch=50,
        batch_size=2,
        phase_boundaries=(STEPS // 50, STEPS // 50),  # lr 1e-4 throughout
        seed=0,
    )


def central_median_error_px(model, samples, view: str) -> float:
    """Median |pred - gt| in pixels over the central 80 % of each image."""
    errs = []
    for s in samples:
        img = s.left if view == "left" else s.right
        d = model.predict_disparity(img[None], view, channel=0)[0, 0]
        _, h, w = img.shape
        ys, xs = slice(h // 10, h - h // 10), slice(w // 10, w - w // 10)
        errs.append(np.abs(d - s.gt_disparity[0])[ys, xs].ravel() * w)
    return float(np.median(np.concatenate(errs)))


def run_convergence(kind: str):
    """Train on the synthetic set; track the objective on a fixed un-augmented batch every WINDOW steps."""
    cfg = convergence_cfg(kind)
    data = generate_scene_set(SCENES, N_TRAIN)
    heldout = generate_scene_set(SceneSpec(**{**SCENES.__dict__, "seed": 1000}), N_HELDOUT)
    model = DualModel.create(cfg.kind, cfg.network)
    left, right = stack_batch(data[:2])
    probe: list[LossBreakdown] = []

    def on_step(rec):
        if rec.step % WINDOW == 0 or rec.step == STEPS - 1:
            tensors = {k: p.as_tensors() for k, p in model.networks().items()}
            probe.append(compute_loss(model, tensors, left, right, cfg).as_floats())

    start = time.perf_counter()
    _, history = train(cfg, data, on_step=on_step, model=model)
    return model, history, probe, data, heldout, time.perf_counter() - start


# 1 ---------------------------------------------------------------------------


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    results = run_suite(default_suite())
    elapsed = time.perf_counter() - start
    worst = max(results, key=lambda r: r.error / r.tol)
    smooth = [r for r in results if r.tol == SMOOTH_TOL]
    names = {r.name for r in results}
    ok = (
        all(r.ok for r in results)
        and all(r.tol <= 1e-4 for r in results)
        and {"total_cost_dnm6", "total_cost_dnm12"} <= names
        and len(smooth) >= 12
        and elapsed < 120
    )
    report(1, "gradient suite", ok,
           f"{len(results)} checks, worst {worst.name} {worst.error:.2e} (tol {worst.tol:.0e}), "
           f"max smooth-op error {max(r.error for r in smooth):.2e}, {elapsed:.1f}s")
    assert ok


# 2 ---------------------------------------------------------------------------


def test_criterion_2_loss_identities():
    rng = np.random.default_rng(0)
    w = LossWeights()
    a = Tensor(rng.uniform(size=(2, 3, 8, 16)))
    const = Tensor(np.full((2, 1, 8, 16), 0.17))
    values = {
        "appearance(a,a)": appearance_loss(a, a, w).item(),
        "smoothness(const)": smoothness_loss(const, a).item(),
        "lr(const,const)": lr_consistency_loss(const, const, LEFTWARD).item(),
        "rl(const,const)": lr_consistency_loss(const, const, RIGHTWARD).item(),
    }
    c6 = recompose(LossBreakdown(6, [dict.fromkeys(DNM6_COMPONENTS, 1.0)] * 4), w)
    c12 = recompose(LossBreakdown(12, [dict.fromkeys(DNM12_COMPONENTS, 1.0)] * 4), w)
    ok = all(abs(v) < 1e-12 for v in values.values()) and abs(c6 - 16.8) < 1e-12 and abs(c12 - 33.6) < 1e-12
    report(2, "loss identities", ok,
           f"max identity residual {max(abs(v) for v in values.values()):.1e}, C6={c6!r}, C12={c12!r}")
    assert ok


# 3 ---------------------------------------------------------------------------


def test_criterion_3_oracle_equivalence():
    rng = np.random.default_rng(3)
    n = 20
    worst = dict.fromkeys(["warp", "ssim", "lr_consistency", "pp_blend", "metrics"], 0.0)
    for _ in range(n):
        h, w = int(rng.integers(2, 6)), int(rng.integers(3, 10))
        src = rng.uniform(size=(1, 2, h, w))
        disp = rng.uniform(-0.3, 0.8, size=(1, 1, h, w))
        for direction, sign in ((LEFTWARD, -1), (RIGHTWARD, 1)):
            got = warp_horizontal(Tensor(src), Tensor(disp), direction).values
            worst["warp"] = max(worst["warp"], np.abs(got - oracles.warp(src, disp, sign)).max())
            d2 = rng.uniform(0, 0.5, size=(1, 1, h, w))
            got = lr_consistency_loss(Tensor(disp), Tensor(d2), direction).item()
            worst["lr_consistency"] = max(worst["lr_consistency"], abs(got - oracles.lr_consistency(disp, d2, sign)))

        a, b = rng.uniform(size=(1, 1, h + 1, w)), rng.uniform(size=(1, 1, h + 1, w))
        worst["ssim"] = max(worst["ssim"], np.abs(ssim_map(Tensor(a), Tensor(b)).values - oracles.ssim(a, b)).max())

        p1, p2 = rng.uniform(size=(1, 1, h, 4 * w)), rng.uniform(size=(1, 1, h, 4 * w))
        worst["pp_blend"] = max(worst["pp_blend"], np.abs(blend_flipped(p1, p2) - oracles.pp_blend(p1, p2)).max())

        g = rng.uniform(0.5, 90.0, size=(h, w))
        g[rng.uniform(size=g.shape) < 0.2] = 0.0
        g[0, 0] = 10.0
        p = np.abs(g * rng.uniform(0.5, 1.7, size=g.shape)) + 1e-3
        got = compute_metrics(DepthMap.dense(p), DepthMap.dense(g)).to_dict()
        ref = oracles.depth_metrics(p, g)
        worst["metrics"] = max(worst["metrics"], max(abs(got[k] - v) for k, v in ref.items()))
    ok = all(v < 1e-10 for v in worst.values())
    report(3, "oracle equivalence", ok, f"{n} instances each; " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


# 4 ---------------------------------------------------------------------------


def test_criterion_4_schedule():
    cfg = TrainConfig(epochs=50)
    expected = [1e-4] * 30 + [0.5e-4] * 10 + [0.25e-4] * 10
    got = [lr_at(cfg, e) for e in range(50)]
    ok = got == expected
    report(4, "learning-rate schedule", ok, f"epochs 0/29/30/39/40/49 -> {[got[e] for e in (0, 29, 30, 39, 40, 49)]}")
    assert ok


# 5 and 6 ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def dnm6_run():
    return run_convergence("dnm6")


@pytest.fixture(scope="module")
def dnm12_run():
    return run_convergence("dnm12")


def decreasing_fraction(probe: list[LossBreakdown]) -> float:
    totals = np.array([b.total for b in probe])
    return float(np.mean(np.diff(totals) < 0))


def test_criterion_5_dnm6_convergence(dnm6_run):
    model, history, probe, data, heldout, elapsed = dnm6_run
    err_train = central_median_error_px(model, data, "left")
    err_held = central_median_error_px(model, heldout, "left")
    frac = decreasing_fraction(probe)
    ok = len(history) >= 500 and err_train < DNM6_MEDIAN_PX and err_held < DNM6_MEDIAN_PX and frac >= 0.9 and elapsed < 1200
    report(5, "DNM6 desk-scale convergence", ok,
           f"{len(history)} steps, median |err| {err_train:.3f} px train / {err_held:.3f} px held-out "
           f"(< {DNM6_MEDIAN_PX}), decreasing {WINDOW}-step windows {frac:.1%} (>= 90%), {elapsed:.0f}s")
    assert ok


def test_criterion_6_dnm12_structure(dnm12_run):
    model, history, probe, data, heldout, elapsed = dnm12_run
    recomposition = max(abs(b.total - recompose(b, LossWeights())) for b in probe)
    err_ll = central_median_error_px(model, heldout, "left")
    err_rr = central_median_error_px(model, heldout, "right")
    n_components = len(probe[0].row())
    ok = (
        len(history) >= 500
        and n_components == 48
        and recomposition < 1e-12
        and err_ll <= DNM12_MEDIAN_PX
        and err_rr <= DNM12_MEDIAN_PX
    )
    report(6, "DNM12 structure and same-view accuracy", ok,
           f"recomposition {recomposition:.1e}, median |err| d_ll {err_ll:.3f} px, d_rr {err_rr:.3f} px "
           f"(<= {DNM12_MEDIAN_PX}), {elapsed:.0f}s")
    assert ok


# 7 ---------------------------------------------------------------------------


def test_criterion_7_metric_closed_forms():
    # 1.3 G must stay under the 80 m cap
    g = DepthMap.dense(np.random.default_rng(7).uniform(1.0, 60.0, size=(20, 30)))
    r11 = compute_metrics(DepthMap.dense(1.1 * g.depth), g)
    r13 = compute_metrics(DepthMap.dense(1.3 * g.depth), g)
    d1 = (
        d1_all(np.full(9, 5.0), np.full(9, 5.0)),
        d1_all(np.full(9, 14.0), np.full(9, 10.0)),
        d1_all(np.full(9, 104.0), np.full(9, 100.0)),
    )
    ok = abs(r11.abs_rel - 0.1) < 1e-12 and r11.a1 == 1 and r13.a1 == 0 and r13.a2 == 1 and d1 == (0.0, 100.0, 0.0)
    report(7, "metric closed forms", ok,
           f"1.1G abs_rel {r11.abs_rel!r} a1 {r11.a1}; 1.3G a1 {r13.a1} a2 {r13.a2}; d1_all cases {d1}")
    assert ok


# 8 ---------------------------------------------------------------------------


def test_criterion_8_determinism(tmp_path):
    data = tmp_path / "scenes"
    assert cli.main(["synth", "--out", str(data), "--count", "4"]) == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model_kind": "dnm12", "epochs": 2, "steps_per_epoch": 5, "phase_boundaries": [1, 2], "seed": 11}))
    runs = [tmp_path / "a", tmp_path / "b"]
    for run in runs:
        assert cli.main(["train", "--config", str(cfg), "--data", str(data), "--out", str(run)]) == 0
    files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*") if p.is_file())
    same = [filecmp.cmp(runs[0] / f, runs[1] / f, shallow=False) for f in files]
    ok = all(same) and Path("loss.csv") in files and sum(f.suffix == ".dnmc" for f in files) == 4
    report(8, "byte-identical training runs", ok, f"{sum(same)}/{len(files)} artifacts identical ({', '.join(map(str, files))})")
    assert ok


# 9 ---------------------------------------------------------------------------


def test_criterion_9_format_round_trips():
    rng = np.random.default_rng(9)
    checks = {}
    for magic, c in ((b"P6", 3), (b"P5", 1)):
        raw = rng.integers(0, 256, size=5 * 7 * c, dtype=np.uint8).tobytes()
        data = magic + b"\n7 5\n255\n" + raw
        checks[magic.decode()] = encode_pnm(decode_pnm(data)) == data
    fmap = rng.normal(size=(6, 9)).astype(np.float32)
    pfm = encode_pfm(fmap)
    checks["PFM"] = np.array_equal(decode_pfm(pfm).astype(np.float32), fmap) and encode_pfm(decode_pfm(pfm)) == pfm
    for kind in (6, 12):
        model = DualModel.create(kind, NetworkConfig(out_channels=1 if kind == 6 else 2, seed=5))
        blob = encode_checkpoint(model)
        back = decode_checkpoint(blob)
        exact = all(
            a.arrays[k].tobytes() == b.arrays[k].tobytes()
            for a, b in zip(model.networks().values(), back.networks().values())
            for k in a.names
        )
        checks[f"DNMC{kind}"] = exact and encode_checkpoint(back) == blob
    ok = all(checks.values())
    report(9, "format round-trips", ok, ", ".join(f"{k} {'ok' if v else 'MISMATCH'}" for k, v in checks.items()))
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
