"""Command-line entry points: phantom generation, training, rendering,
panorama export, evaluation, and the render service.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .geometry import ProbeSpec, load_poses
from .phantom import (
    SweepSpec,
    TissueMap,
    holdout_split,
    reference_phantom,
    reference_probe,
    reference_sweep,
    simulate_sweep,
)
from .renderer import interpolate_trajectory, render_volume
from .service import DEFAULT_PORT, ModelSnapshot
from .training import TrainConfig, evaluate, seam_metric, train
from .volume_io import read_dataset, write_dataset, write_volume

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="echofield",
        description="Neural ultrasound field engine for wide field-of-view sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    phantom = sub.add_parser("phantom", help="synthetic dataset tools")
    phantom_sub = phantom.add_subparsers(dest="phantom_command", required=True)
    gen = phantom_sub.add_parser("gen", help="generate a tracked sweep dataset")
    gen.add_argument("--config", help="JSON phantom/sweep configuration")
    gen.add_argument("--out", required=True, help="output dataset directory")

    tr = sub.add_parser("train", help="fit the field to a dataset")
    tr.add_argument("--data", required=True, help="dataset directory")
    tr.add_argument("--config", help="JSON training configuration")
    tr.add_argument("--out", required=True, help="output checkpoint directory")
    tr.add_argument("--mode", choices=["mvg", "point"], default=None)
    tr.add_argument("--elev-downsample", type=int, default=None)
    tr.add_argument("--holdout", type=int, default=None,
                    help="withhold this interior volume from training")
    tr.add_argument("--iterations", type=int, default=None)

    rnd = sub.add_parser("render", help="render one B-mode slice to PNG")
    rnd.add_argument("--ckpt", required=True)
    rnd.add_argument("--pose", required=True, help="pose file (first pose is used)")
    rnd.add_argument("--out", required=True, help="output PNG path")
    rnd.add_argument("--opening-angle", type=float, default=None, metavar="DEG")
    rnd.add_argument("--rays", type=int, default=None)
    rnd.add_argument("--samples", type=int, default=None)

    pan = sub.add_parser("panorama", help="render the full-trajectory volume")
    pan.add_argument("--ckpt", required=True)
    pan.add_argument("--out", required=True, help="output volume file")
    pan.add_argument("--planes", type=int, required=True)

    ev = sub.add_parser("eval", help="evaluate a checkpoint against a dataset")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--holdout", type=int, default=None,
                    help="evaluate only this held-out interior volume")

    srv = sub.add_parser("serve", help="run the HTTP render service")
    srv.add_argument("--ckpt", required=True)
    srv.add_argument("--port", type=int, default=DEFAULT_PORT)
    srv.add_argument("--host", default="127.0.0.1",
                     help="bind address (loopback by default)")
    return parser


def _cmd_phantom_gen(args) -> int:
    cfg = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    probe = ProbeSpec.from_dict(cfg["probe"]) if "probe" in cfg else reference_probe()
    tissue = TissueMap.from_dict(cfg["tissue"]) if "tissue" in cfg else reference_phantom()
    if "sweep" in cfg:
        sweep = SweepSpec.from_dict(cfg["sweep"])
    else:
        sweep = reference_sweep()
    dims = tuple(cfg.get("target_dims", [48, 48]))
    spacing = float(cfg.get("spacing_mm", 1.0))
    seed = int(cfg.get("seed", 0))
    dataset = simulate_sweep(tissue, probe, sweep, dims, spacing, seed=seed)
    manifest = write_dataset(dataset, args.out)
    print(json.dumps({"manifest": manifest, "n_volumes": len(dataset)}))
    return 0


def _cmd_train(args) -> int:
    dataset = read_dataset(args.data)
    cfg = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    config = TrainConfig.from_dict(cfg)
    overrides = {}
    if args.mode is not None:
        overrides["sampling_mode"] = args.mode
    if args.elev_downsample is not None:
        overrides["elevational_downsample"] = args.elev_downsample
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if overrides:
        config = TrainConfig.from_dict({**config.to_dict(), **overrides})
    if args.holdout is not None:
        dataset, _ = holdout_split(dataset, args.holdout)
    _, history = train(dataset, config, out_dir=args.out, log_every=100)
    print(json.dumps({
        "checkpoint": os.path.join(args.out, "checkpoint_final.json"),
        "final_loss": history[-1].total,
        "steps": len(history),
    }))
    return 0


def _cmd_render(args) -> int:
    snapshot = ModelSnapshot.load(args.ckpt)
    poses = load_poses(args.pose)
    body = {"pose": poses[0].matrix.reshape(-1).tolist()}
    if args.opening_angle is not None:
        body["opening_angle_deg"] = args.opening_angle
    if args.rays is not None:
        body["n_rays"] = args.rays
    if args.samples is not None:
        body["n_samples"] = args.samples
    png = snapshot.render_request(body)
    with open(args.out, "wb") as f:
        f.write(png)
    print(json.dumps({"out": args.out, "bytes": len(png)}))
    return 0


def _cmd_panorama(args) -> int:
    snapshot = ModelSnapshot.load(args.ckpt)
    poses = interpolate_trajectory(snapshot.poses, args.planes)
    pano = render_volume(snapshot.params, snapshot.probe, poses, snapshot.radii,
                         snapshot.bounds, snapshot.target_dims,
                         snapshot.spacing_mm, snapshot.point_sampling)
    write_volume(pano, args.out, poses=poses)
    print(json.dumps({"out": args.out, "dims": list(pano.dims)}))
    return 0


def panorama_boundary_planes(dataset, n_planes: int) -> list[int]:
    """Panorama plane indices where one training sweep hands over to the next."""
    starts = np.array([poses[0].translation for poses in dataset.slice_poses])
    origin = starts[0]
    offsets = np.linalg.norm(starts - origin, axis=1)
    span = offsets.max() + np.linalg.norm(
        dataset.slice_poses[-1][-1].translation - starts[-1])
    pitch = span / n_planes if span > 0 else 1.0
    planes = []
    for s in offsets[1:]:
        p = int(round(s / pitch))
        if 1 <= p <= n_planes - 1:
            planes.append(p)
    return sorted(set(planes))


def _cmd_eval(args) -> int:
    snapshot = ModelSnapshot.load(args.ckpt)
    dataset = read_dataset(args.data)
    factor = snapshot.manifest.get("train_config", {}).get("elevational_downsample", 1)
    from .training import downsample_elevational

    dataset = downsample_elevational(dataset, factor)
    if args.holdout is not None:
        _, subset = holdout_split(dataset, args.holdout)
    else:
        subset = dataset

    pano = snapshot.panorama()
    boundaries = panorama_boundary_planes(dataset, pano.data.shape[0])
    seam = seam_metric(pano, boundaries) if boundaries else 1.0
    report = evaluate(snapshot.params, subset, snapshot.radii, snapshot.bounds,
                      point_sampling=snapshot.point_sampling)
    doc = report.to_dict()
    doc["seam_ratio"] = seam
    print(json.dumps(doc))
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(args.ckpt, port=args.port, host=args.host)
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "render": _cmd_render,
    "panorama": _cmd_panorama,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage problems and 0 on --help
        return 0 if e.code == 0 else 1
    try:
        if args.command == "phantom":
            return _cmd_phantom_gen(args)
        return _COMMANDS[args.command](args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
