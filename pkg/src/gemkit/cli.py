"""The ``gem`` command line: schedule / sample / control-prep / curate /
metrics / traj / provider-echo.

Exit codes: 0 success, 1 validation error, 2 provider failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from gemkit.control import FeatureMap, IdentityTable, assign_identities, mask_tokens, translate_tokens
from gemkit.control import FlowField
from gemkit.curation import FilterConfig, run_pipeline
from gemkit.errors import ProviderError, ValidationError
from gemkit.gemt import tensor_read, tensor_write
from gemkit.metrics import BoxTrack, KeypointSet, ade, com, depth_metrics, keypoint_ap, LARGE_AREA, OKS_THRESHOLDS
from gemkit.protocol import resolve_provider, serve_stdio, serve_tcp
from gemkit.providers import SyntheticProviderSet
from gemkit.sampler import (
    ConditioningSet,
    ContractionDenoiser,
    PerfectDenoiser,
    ZeroDenoiser,
    autoregressive_sample,
    overlap_sample,
)
from gemkit.schedule import NoiseSchedule, ScheduleConfig, scheduling_matrix
from gemkit.trajectory import bev_trajectory, rot_to_ortho6d, scale_compensate, validate_pose


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are validation errors here
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


# -- schedule -----------------------------------------------------------------


def cmd_schedule_dump(args) -> int:
    cfg = ScheduleConfig(window=args.window, steps=args.steps, stride=args.stride)
    ns = NoiseSchedule.karras(args.steps, args.sigma_min, args.sigma_max, args.rho)
    matrix = scheduling_matrix(args.frames, cfg, ns)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"frame_{i}" for i in range(args.frames)])
        writer.writerows(matrix.tolist())
    print(f"wrote {matrix.shape[0]} rows x {matrix.shape[1]} frames to {args.out}")
    return 0


# -- sample ---------------------------------------------------------------------


def _build_denoiser(spec: dict):
    kind = spec.get("kind", "perfect")
    if kind == "zero":
        return ZeroDenoiser(), None
    target = tensor_read(spec["target"]).astype(np.float64)
    if kind == "perfect":
        return PerfectDenoiser(target), target
    if kind == "contraction":
        return ContractionDenoiser(target, float(spec.get("lam", 0.5))), target
    raise ValidationError(f"unknown denoiser kind {kind!r}")


def cmd_sample_run(args) -> int:
    config = json.loads(Path(args.config).read_text())
    frames = int(config["frames"])
    cfg = ScheduleConfig(
        window=int(config["window"]), steps=int(config["steps"]), stride=config.get("stride")
    )
    ns = NoiseSchedule.karras(
        cfg.steps,
        float(config.get("sigma_min", 0.002)),
        float(config.get("sigma_max", 700.0)),
        float(config.get("rho", 7.0)),
    )
    denoiser, target = _build_denoiser(config.get("denoiser", {}))
    latent_shape = tuple(config.get("latent_shape") or (target.shape[1:] if target is not None else (4, 8, 8)))
    rng = np.random.default_rng(int(config.get("seed", 0)))

    cond_spec = config.get("conditioning") or {}
    reference = tensor_read(cond_spec["reference_frame"]) if cond_spec.get("reference_frame") else None
    trajectory = None
    if cond_spec.get("trajectory"):
        trajectory = np.asarray([row["point"] if isinstance(row, dict) else row for row in _read_jsonl(cond_spec["trajectory"])])
    cond = ConditioningSet(reference_frame=reference, trajectory=trajectory)

    # the wire protocol has no denoise method, so a bridge provider only serves
    # conditioning preparation; the denoiser itself is always the built-in one
    if args.provider and args.provider != "synthetic":
        resolve_provider(args.provider)

    mode = config.get("mode", "autoregressive")
    if mode == "autoregressive":
        video, trace = autoregressive_sample(
            frames, cfg, ns, denoiser, cond=cond, rng=rng, latent_shape=latent_shape
        )
        if args.trace:
            _write_json(
                args.trace,
                {
                    "rows_executed": trace.rows_executed,
                    "forward_passes": trace.forward_passes,
                    "completion_row": trace.completion_row.tolist(),
                    "init_end_row": trace.init_end_row,
                    "autoregressive_end_row": trace.autoregressive_end_row,
                },
            )
    elif mode == "overlap":
        video = overlap_sample(
            frames, cfg.window, int(config.get("overlap", 0)), ns, denoiser,
            cond=cond, rng=rng, latent_shape=latent_shape,
        )
    else:
        raise ValidationError(f"unknown sampling mode {mode!r}")
    tensor_write(video.frames, args.out)
    print(f"wrote {video.num_frames} frames to {args.out}")
    return 0


# -- control-prep -----------------------------------------------------------------


def cmd_control_prep(args) -> int:
    feature_files = sorted(Path(args.features).glob("*.gemt"))
    if not feature_files:
        raise ValidationError(f"no .gemt feature maps under {args.features}")
    rng = np.random.default_rng(args.seed)
    maps = {}
    rows = []
    table = None
    for path in feature_files:
        frame = int(path.stem)
        fm = FeatureMap(tensor_read(path), patch_stride=args.patch_stride)
        if table is None:
            table = IdentityTable.random(args.id_table_size, fm.dim, seed=args.seed)
        tm = assign_identities(mask_tokens(fm, args.max_tokens, rng, frame_index=frame), table, rng)
        maps[frame] = tm
    for path in sorted(Path(args.flows).glob("*.gemt")) if args.flows else []:
        src_s, dst_s = path.stem.split("_")
        src, dst = int(src_s), int(dst_s)
        if src in maps:
            maps[dst] = translate_tokens(maps[src], FlowField(tensor_read(path)), dst)
    for frame in sorted(maps):
        for t in maps[frame].tokens:
            rows.append({"frame": frame, "y": t.y, "x": t.x, "id": t.identity, "vec": [float(v) for v in t.vec]})
    _write_jsonl(args.out, rows)
    print(f"wrote {len(rows)} tokens over {len(maps)} frames to {args.out}")
    return 0


# -- curate -----------------------------------------------------------------


def cmd_curate(args) -> int:
    manifest = _read_jsonl(args.manifest)
    config = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = FilterConfig(**config.get("filters", {}))
    providers = resolve_provider(args.provider, config.get("synthetic"))
    report = run_pipeline(manifest, providers, cfg, load_video=tensor_read)
    _write_json(args.report, report.to_dict())
    for stage in report.stages:
        print(f"{stage.name:>18}: kept {stage.kept:5d}  ({stage.percent:6.2f} %)")
    return 0


# -- metrics -----------------------------------------------------------------


def _load_trajectory(path) -> np.ndarray:
    rows = _read_jsonl(path)
    return np.asarray([row["point"] if isinstance(row, dict) else row for row in rows], dtype=np.float64)


def _load_boxtrack(path) -> BoxTrack:
    boxes = {}
    for row in _read_jsonl(path):
        if row.get("box") is not None:
            boxes[int(row["frame"])] = row["box"]
    return BoxTrack(boxes)


def _load_keypoint_images(path):
    images = []
    for row in _read_jsonl(path):
        images.append(
            [
                KeypointSet(
                    keypoints=np.asarray(p["keypoints"], dtype=np.float64),
                    score=float(p.get("score", 1.0)),
                    area=float(p.get("area", 0.0)),
                )
                for p in row.get("people", [])
            ]
        )
    return images


def cmd_metrics(args) -> int:
    if args.metric == "ade":
        result = {"ade": ade(_load_trajectory(args.pred), _load_trajectory(args.gt))}
    elif args.metric == "com":
        r = com(_load_boxtrack(args.pred), _load_boxtrack(args.gt), norm=args.norm)
        result = {"com": r.value, "frames_used": r.frames_used, "frames_skipped": r.frames_skipped}
    elif args.metric == "depth":
        r = depth_metrics(tensor_read(args.pred), tensor_read(args.gt))
        result = {"abs_rel": r.abs_rel, "delta": r.delta, "valid_pixels": r.valid_pixels}
    elif args.metric == "pose-ap":
        thresholds = OKS_THRESHOLDS if args.thresholds is None else [float(t) for t in args.thresholds.split(",")]
        min_area = LARGE_AREA if args.area == "large" else None
        r = keypoint_ap(_load_keypoint_images(args.pred), _load_keypoint_images(args.gt), thresholds, min_area)
        result = {"ap": r.ap, "per_threshold": {str(k): v for k, v in r.per_threshold.items()}}
    else:
        raise ValidationError(f"unknown metric {args.metric!r}")
    if args.out:
        _write_json(args.out, result)
    print(json.dumps(result))
    return 0


# -- traj -----------------------------------------------------------------


def _load_poses(path):
    rows = _read_jsonl(path)
    poses = []
    for row in rows:
        flat = row["pose"] if isinstance(row, dict) else row
        poses.append(validate_pose(np.asarray(flat, dtype=np.float64).reshape(4, 4)))
    return poses


def cmd_traj_convert(args) -> int:
    poses = _load_poses(args.poses)
    if args.mode == "bev":
        rows = [[float(x), float(z)] for x, z in bev_trajectory(poses)]
    elif args.mode == "ortho6d":
        rows = [[float(v) for v in rot_to_ortho6d(p[:3, :3])] for p in poses]
    else:
        raise ValidationError(f"unknown mode {args.mode!r}")
    _write_jsonl(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_traj_ade(args) -> int:
    pred = _load_trajectory(args.pred)
    gt = _load_trajectory(args.gt)
    result = {}
    if args.scale_compensate:
        s, pred = scale_compensate(pred, gt)
        result["scale"] = s
    result["ade"] = ade(pred, gt)
    if args.out:
        _write_json(args.out, result)
    print(json.dumps(result))
    return 0


# -- provider-echo -----------------------------------------------------------------


def cmd_provider_echo(args) -> int:
    config = json.loads(Path(args.config).read_text()) if args.config else {}
    providers = SyntheticProviderSet.from_config(config)
    if args.listen == "stdio":
        serve_stdio(providers)
    elif args.listen.startswith("tcp:"):
        serve_tcp(providers, int(args.listen.split(":")[1]))
    else:
        raise ValidationError(f"unknown listen spec {args.listen!r}")
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="noise-schedule tools")
    ssub = p.add_subparsers(dest="subcommand", required=True)
    d = ssub.add_parser("dump", help="emit the full scheduling matrix as CSV")
    d.add_argument("--frames", type=int, required=True)
    d.add_argument("--window", type=int, required=True)
    d.add_argument("--stride", type=int, default=None)
    d.add_argument("--steps", type=int, required=True)
    d.add_argument("--sigma-min", type=float, default=0.002)
    d.add_argument("--sigma-max", type=float, default=700.0)
    d.add_argument("--rho", type=float, default=7.0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_schedule_dump)

    p = sub.add_parser("sample", help="run the sampler")
    ssub = p.add_subparsers(dest="subcommand", required=True)
    r = ssub.add_parser("run")
    r.add_argument("--config", required=True)
    r.add_argument("--provider", default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--trace", default=None)
    r.set_defaults(func=cmd_sample_run)

    p = sub.add_parser("control-prep", help="build sparse control tokens")
    p.add_argument("--features", required=True, help="directory of <frame>.gemt feature maps")
    p.add_argument("--flows", default=None, help="directory of <src>_<dst>.gemt flow fields")
    p.add_argument("--M", dest="max_tokens", type=int, default=32)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--patch-stride", type=int, default=16)
    p.add_argument("--id-table-size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_control_prep)

    p = sub.add_parser("curate", help="run the filter cascade over a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--provider", default=None)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("metrics", help="evaluation metrics")
    p.add_argument("metric", choices=["ade", "com", "depth", "pose-ap"])
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--norm", choices=["l2", "l1"], default="l2")
    p.add_argument("--thresholds", default=None, help="comma-separated OKS thresholds")
    p.add_argument("--area", choices=["all", "large"], default="all")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("traj", help="trajectory post-processing")
    ssub = p.add_subparsers(dest="subcommand", required=True)
    c = ssub.add_parser("convert")
    c.add_argument("--poses", required=True)
    c.add_argument("--mode", choices=["bev", "ortho6d"], required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_traj_convert)
    a = ssub.add_parser("ade")
    a.add_argument("--pred", required=True)
    a.add_argument("--gt", required=True)
    a.add_argument("--scale-compensate", action="store_true")
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_traj_ade)

    p = sub.add_parser("provider-echo", help="serve the synthetic providers (self-test)")
    p.add_argument("--listen", default="stdio", help="stdio or tcp:PORT")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_provider_echo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
