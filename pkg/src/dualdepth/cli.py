"""Command-line entry point: ``dualdepth {synth,train,infer,eval,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Disparity files hold pixels; in memory disparity is a fraction of width.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from .dualnet import NUM_SCALES
from .evaluation import CameraRig, aggregate, evaluate_predictions, evaluate_set, post_process
from .gradcheck import default_suite, format_table, run_suite
from .io import (
    FormatError,
    load_checkpoint,
    load_image,
    load_pfm,
    load_scene_set,
    save_checkpoint,
    save_pfm,
    save_scene_set,
    write_loss_history,
    write_metrics,
)
from .objectives import DNM6_COMPONENTS, DNM12_COMPONENTS
from .trainer import NumericalError, SceneSpec, TrainConfig, generate_scene_set, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return path


def cmd_synth(args) -> int:
    spec = SceneSpec(
        profile=args.profile,
        disparity_px=tuple(args.disparity),
        texture=args.texture,
        height=args.height,
        width=args.width,
        channels=args.channels,
        seed=args.seed,
    )
    samples = generate_scene_set(spec, args.count)
    rig = CameraRig(args.focal, args.baseline)
    save_scene_set(samples, args.out, rig)
    print(f"wrote {len(samples)} scenes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = TrainConfig.from_json(_require(Path(args.config))) if args.config else TrainConfig()
    overrides = {k: v for k, v in (("epochs", args.epochs), ("steps_per_epoch", args.steps), ("seed", args.seed)) if v is not None}
    if overrides:
        data = cfg.to_dict()
        data.update(overrides)
        if "seed" in overrides and data["network"] is not None:
            data["network"]["seed"] = overrides["seed"]
        if "epochs" in overrides:
            b1, b2 = data["phase_boundaries"]
            data["phase_boundaries"] = [min(b1, data["epochs"]), min(b2, data["epochs"])]
        cfg = TrainConfig.from_dict(data)
    _, samples, _ = load_scene_set(_require(Path(args.data)))
    channels = samples[0].left.shape[0]
    if cfg.network.input_channels != channels:
        cfg.network = dataclasses.replace(cfg.network, input_channels=channels)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    records = []
    try:
        model, _ = train(cfg, samples, checkpoint_dir=out / "checkpoints", on_step=records.append)
    finally:
        # the history up to a failure is still useful
        write_loss_history(out / "loss.csv", records, loss_columns(cfg.kind))
    save_checkpoint(model, out / "model.dnmc")
    final = f", final C={records[-1].breakdown.total:.6f}" if records else ""
    print(f"trained {len(records)} steps{final}; outputs in {out}")
    return EXIT_OK


def loss_columns(kind: int) -> list[str]:
    names = DNM6_COMPONENTS if kind == 6 else DNM12_COMPONENTS
    return [f"s{s + 1}_{n}" for s in range(NUM_SCALES) for n in names]


def _predict_image(model, image: np.ndarray, view: str, channel: int, use_pp: bool) -> np.ndarray:
    predict = model.predictor(view, channel)
    batch = image[None]
    d = post_process(predict, batch) if use_pp else predict(batch)
    return d[0, 0]


def cmd_infer(args) -> int:
    model = load_checkpoint(_require(Path(args.checkpoint)))
    image = load_image(_require(Path(args.image)))
    if image.shape[0] != model.cfg.input_channels:
        raise ValueError(f"checkpoint expects {model.cfg.input_channels} channels, image has {image.shape[0]}")
    disp = _predict_image(model, image, args.view, args.channel, args.pp)
    save_pfm(disp * image.shape[-1], args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ids, samples, rig = load_scene_set(_require(Path(args.data)))
    if rig is None:
        raise ValueError("scene set has no camera rig")
    if args.predictions:
        pred_dir = _require(Path(args.predictions))
        disps = []
        for sid, s in zip(ids, samples):
            d = load_pfm(_require(pred_dir / f"{sid}.disp.pfm"))
            if d.shape != s.left.shape[1:]:
                raise ValueError(f"{sid}.disp.pfm is {d.shape}, expected {s.left.shape[1:]}")
            disps.append(d / s.left.shape[-1])
        report = aggregate(evaluate_predictions(disps, samples, rig))
    else:
        model = load_checkpoint(_require(Path(args.checkpoint)))
        report = evaluate_set(model, samples, rig, use_pp=args.pp, view=args.view, channel=args.channel)
    method = args.method or ("pp" if args.pp else "direct")
    write_metrics(args.out, [(method, report)])
    print(", ".join(f"{k}={v:.6g}" for k, v in report.to_dict().items()))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    start = time.perf_counter()
    results = run_suite(default_suite(seed=args.seed, include_network=not args.skip_network))
    print(format_table(results))
    print(f"{len(results)} checks in {time.perf_counter() - start:.1f}s")
    return EXIT_OK if all(r.ok for r in results) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dualdepth", description="Dual-network unsupervised monocular disparity.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic stereo scene set")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--profile", choices=("constant", "two-plane", "slanted"), default="constant")
    s.add_argument("--disparity", type=float, nargs="+", default=[4.0], help="pixels")
    s.add_argument("--texture", choices=("random-noise", "smoothed-noise", "checkers"), default="smoothed-noise")
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--width", type=int, default=128)
    s.add_argument("--channels", type=int, choices=(1, 3), default=3)
    s.add_argument("--focal", type=float, default=128.0, help="focal length in pixels")
    s.add_argument("--baseline", type=float, default=0.54, help="baseline in meters")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train on a scene set")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="JSON training config")
    t.add_argument("--epochs", type=int)
    t.add_argument("--steps", type=int, help="steps per epoch")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="predict a disparity map for one image")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--out", required=True, help="output .disp.pfm (pixels)")
    i.add_argument("--view", choices=("left", "right"), default="left")
    i.add_argument("--channel", type=int, default=0)
    i.add_argument("--pp", action="store_true", help="flip-and-blend post-processing")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="depth metrics against a scene set's ground truth")
    e.add_argument("--data", required=True)
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--predictions", help="directory of <id>.disp.pfm files")
    e.add_argument("--out", required=True, help="metrics CSV")
    e.add_argument("--method")
    e.add_argument("--view", choices=("left", "right"), default="left")
    e.add_argument("--channel", type=int, default=0)
    e.add_argument("--pp", action="store_true")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="run the finite-difference suite")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--skip-network", action="store_true")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, FormatError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
