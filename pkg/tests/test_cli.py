import csv
import json
import sys

import numpy as np
import pytest

from gemkit.cli import main
from gemkit.gemt import tensor_read, tensor_write
from gemkit.protocol import ProtocolClient, StdioTransport, encode_tensor
from gemkit.schedule import NoiseSchedule, ScheduleConfig, scheduling_matrix


def run_cli(*argv):
    return main(list(argv))


def test_schedule_dump_matches_library(tmp_path):
    out = tmp_path / "matrix.csv"
    assert run_cli(
        "schedule", "dump", "--frames", "5", "--window", "3", "--stride", "2",
        "--steps", "6", "--out", str(out),
    ) == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=np.float64)
    assert header == [f"frame_{i}" for i in range(5)]
    cfg = ScheduleConfig(window=3, steps=6, stride=2)
    ns = NoiseSchedule.karras(6)
    assert np.allclose(data, scheduling_matrix(5, cfg, ns))


def test_schedule_dump_validation_exit_code(tmp_path):
    # window*stride wider than steps
    assert run_cli(
        "schedule", "dump", "--frames", "5", "--window", "10", "--stride", "2",
        "--steps", "4", "--out", str(tmp_path / "m.csv"),
    ) == 1


def test_sample_run_and_trace(tmp_path):
    rng = np.random.default_rng(0)
    target = rng.standard_normal((8, 2, 4, 4)).astype(np.float32)
    target_path = tmp_path / "target.gemt"
    tensor_write(target, target_path)
    config = {
        "frames": 8,
        "window": 4,
        "steps": 8,
        "stride": 2,
        "seed": 3,
        "denoiser": {"kind": "perfect", "target": str(target_path)},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(config))
    out = tmp_path / "frames.gemt"
    trace_path = tmp_path / "trace.json"
    assert run_cli(
        "sample", "run", "--config", str(cfg_path), "--out", str(out), "--trace", str(trace_path)
    ) == 0
    frames = tensor_read(out)
    assert frames.shape == (8, 2, 4, 4)
    assert np.allclose(frames, target, atol=1e-5)
    trace = json.loads(trace_path.read_text())
    assert trace["forward_passes"] == 8 + 7 * 2
    assert trace["init_end_row"] == 8


def test_sample_run_overlap_mode(tmp_path):
    rng = np.random.default_rng(1)
    target = rng.standard_normal((7, 1, 4, 4)).astype(np.float32)
    target_path = tmp_path / "target.gemt"
    tensor_write(target, target_path)
    config = {
        "frames": 7,
        "window": 5,
        "steps": 5,
        "stride": 1,
        "mode": "overlap",
        "overlap": 3,
        "denoiser": {"kind": "perfect", "target": str(target_path)},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(config))
    out = tmp_path / "frames.gemt"
    assert run_cli("sample", "run", "--config", str(cfg_path), "--out", str(out)) == 0
    assert np.allclose(tensor_read(out), target, atol=1e-5)


def test_control_prep_pipeline(tmp_path):
    rng = np.random.default_rng(2)
    feat_dir = tmp_path / "features"
    flow_dir = tmp_path / "flows"
    feat_dir.mkdir()
    flow_dir.mkdir()
    d, h, w, stride = 4, 3, 4, 8
    for frame in (0, 2):
        tensor_write(rng.standard_normal((d, h, w)).astype(np.float32), feat_dir / f"{frame:04d}.gemt")
    tensor_write(np.zeros((2, h * stride, w * stride), dtype=np.float32), flow_dir / "0000_0001.gemt")
    out = tmp_path / "tokens.jsonl"
    assert run_cli(
        "control-prep", "--features", str(feat_dir), "--flows", str(flow_dir),
        "--M", "5", "--seed", "7", "--patch-stride", str(stride), "--out", str(out),
    ) == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    frames = {r["frame"] for r in rows}
    assert frames <= {0, 1, 2}
    by_frame = {}
    for r in rows:
        by_frame.setdefault(r["frame"], []).append(r)
    if 0 in by_frame:  # zero flow: frame 1 mirrors frame 0's cells and ids
        assert 1 in by_frame
        assert {(t["y"], t["x"], t["id"]) for t in by_frame[0]} == {
            (t["y"], t["x"], t["id"]) for t in by_frame[1]
        }
    for rows_f in by_frame.values():
        ids = [t["id"] for t in rows_f]
        assert len(set(ids)) == len(ids)
        assert all(len(t["vec"]) == d for t in rows_f)


def test_metrics_ade_cli(tmp_path):
    pred = tmp_path / "pred.jsonl"
    gt = tmp_path / "gt.jsonl"
    pred.write_text("[0.0, 0.0]\n[3.0, 4.0]\n")
    gt.write_text("[0.0, 0.0]\n[0.0, 0.0]\n")
    out = tmp_path / "r.json"
    assert run_cli("metrics", "ade", "--pred", str(pred), "--gt", str(gt), "--out", str(out)) == 0
    assert json.loads(out.read_text())["ade"] == pytest.approx(2.5)


def test_metrics_com_cli(tmp_path):
    pred = tmp_path / "pred.jsonl"
    gt = tmp_path / "gt.jsonl"
    pred.write_text('{"frame": 0, "box": [0, 0, 2, 2]}\n{"frame": 1, "box": null}\n')
    gt.write_text('{"frame": 0, "box": [3, 4, 5, 6]}\n{"frame": 1, "box": [0, 0, 2, 2]}\n')
    out = tmp_path / "r.json"
    assert run_cli("metrics", "com", "--pred", str(pred), "--gt", str(gt), "--out", str(out)) == 0
    r = json.loads(out.read_text())
    assert r["com"] == pytest.approx(5.0)
    assert r["frames_skipped"] == 1


def test_metrics_depth_cli(tmp_path):
    p, g = tmp_path / "p.gemt", tmp_path / "g.gemt"
    tensor_write(np.full((8, 8), 8.0, dtype=np.float32), p)
    tensor_write(np.full((8, 8), 10.0, dtype=np.float32), g)
    out = tmp_path / "r.json"
    assert run_cli("metrics", "depth", "--pred", str(p), "--gt", str(g), "--out", str(out)) == 0
    r = json.loads(out.read_text())
    assert r["abs_rel"] == pytest.approx(0.2)
    assert r["delta"] == 0.0


def test_metrics_pose_ap_cli(tmp_path):
    rng = np.random.default_rng(3)
    kps = np.column_stack([rng.uniform(10, 90, 17), rng.uniform(10, 90, 17), np.full(17, 2.0)])
    person = {"keypoints": kps.tolist(), "score": 1.0, "area": 6400.0}
    pred = tmp_path / "pred.jsonl"
    gt = tmp_path / "gt.jsonl"
    pred.write_text(json.dumps({"people": [person]}) + "\n")
    gt.write_text(json.dumps({"people": [person]}) + "\n")
    out = tmp_path / "r.json"
    assert run_cli(
        "metrics", "pose-ap", "--pred", str(pred), "--gt", str(gt),
        "--thresholds", "0.5", "--out", str(out),
    ) == 0
    assert json.loads(out.read_text())["ap"] == 1.0


def test_traj_convert_and_ade(tmp_path):
    poses = tmp_path / "poses.jsonl"
    lines = []
    for i in range(3):
        a = np.eye(4)
        a[0, 3] = float(i)
        lines.append(json.dumps(a.reshape(-1).tolist()))
    poses.write_text("\n".join(lines) + "\n")
    traj = tmp_path / "traj.jsonl"
    assert run_cli("traj", "convert", "--poses", str(poses), "--mode", "bev", "--out", str(traj)) == 0
    pts = [json.loads(l) for l in traj.read_text().splitlines()]
    assert pts == [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]

    ortho = tmp_path / "ortho.jsonl"
    assert run_cli("traj", "convert", "--poses", str(poses), "--mode", "ortho6d", "--out", str(ortho)) == 0
    rows = [json.loads(l) for l in ortho.read_text().splitlines()]
    assert rows[0] == [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]

    gt = tmp_path / "gt.jsonl"
    gt.write_text("\n".join(json.dumps([2.0 * x, 2.0 * z]) for x, z in pts) + "\n")
    out = tmp_path / "r.json"
    assert run_cli(
        "traj", "ade", "--pred", str(traj), "--gt", str(gt), "--scale-compensate", "--out", str(out)
    ) == 0
    r = json.loads(out.read_text())
    assert r["scale"] == pytest.approx(2.0)
    assert r["ade"] == pytest.approx(0.0, abs=1e-12)


def test_curate_cli_end_to_end(tmp_path):
    rng = np.random.default_rng(4)
    ys, xs = np.mgrid[0:64, 0:64]
    base = np.clip(0.5 + 0.25 * np.sin(2 * np.pi * xs / 7.0) * np.sin(2 * np.pi * ys / 9.0), 0, 1)
    frames = np.stack([base + rng.normal(0, 1e-4, base.shape) for _ in range(50)]).astype(np.float32)
    video_path = tmp_path / "vid.gemt"
    tensor_write(frames, video_path)
    manifest = tmp_path / "corpus.jsonl"
    manifest.write_text(json.dumps({"video_id": "v0", "path": str(video_path), "fps": 10.0}) + "\n")
    config = tmp_path / "filters.json"
    config.write_text(json.dumps({
        "filters": {"enable_aesthetic": False, "enable_intra": False, "enable_motion": False},
        "synthetic": {"feature_dim": 8},
    }))
    report_path = tmp_path / "report.json"
    assert run_cli(
        "curate", "--manifest", str(manifest), "--config", str(config),
        "--provider", "synthetic", "--report", str(report_path),
    ) == 0
    report = json.loads(report_path.read_text())
    assert report["total"] == 2
    by_name = {s["name"]: s for s in report["stages"]}
    assert by_name["piqe"]["kept"] == 2  # textured frames pass the distortion gate


def test_provider_echo_subprocess_pipelining():
    transport = StdioTransport([sys.executable, "-m", "gemkit.cli", "provider-echo"])
    client = ProtocolClient(transport, timeout=30.0)
    try:
        img = encode_tensor(np.zeros((32, 32), dtype=np.float32))
        id1 = client.submit("aesthetic", {"image": img})
        id2 = client.submit("depth", {"image": img})
        id3 = client.submit("segment", {})
        r3 = client.result(id3)
        r1 = client.result(id1)
        r2 = client.result(id2)
        assert r1["ok"] and r2["ok"]
        assert not r3["ok"] and r3["error"] == "unknown method"
    finally:
        client.close()


def test_unknown_subcommand_exit_one():
    assert run_cli("frobnicate") == 1


def test_control_prep_token_budget_default_is_32():
    from gemkit.cli import build_parser

    args = build_parser().parse_args(["control-prep", "--features", "x", "--out", "y"])
    assert args.max_tokens == 32
    assert args.seed == 7


def test_provider_failure_exit_two(tmp_path):
    manifest = tmp_path / "corpus.jsonl"
    manifest.write_text(json.dumps({"video_id": "v", "path": "nope.gemt", "fps": 10.0}) + "\n")
    # nothing listens on port 1; connecting is a provider failure
    assert run_cli(
        "curate", "--manifest", str(manifest), "--provider", "bridge:tcp:127.0.0.1:1",
        "--report", str(tmp_path / "r.json"),
    ) == 2
