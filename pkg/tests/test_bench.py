import numpy as np

from boneik import bench, model


def tiny_params(tree, seed=0):
    cfg = model.ModelConfig(hidden=8, depth=1, heads=2)
    return model.init_params(cfg, tree.joint_count, np.random.default_rng(seed)), cfg


def test_bench_rows_and_environment(arm, arm_frames):
    params, cfg = tiny_params(arm)
    report = bench.bench_inference(params, cfg, "gat", arm, arm_frames,
                                   batch_sizes=(1, 4), min_duration=0.02)
    assert [r["batch_size"] for r in report.rows] == [1, 4]
    for r in report.rows:
        assert set(r) == {"batch_size", "fps", "wall_time", "iterations"}
        assert r["wall_time"] >= 0.02
        assert r["iterations"] >= 1
        assert r["fps"] == r["batch_size"] * r["iterations"] / r["wall_time"]
        assert r["fps"] > 0.0
    assert report.environment == "threads=1 precision=float32"


def test_bench_mlp_kind(arm, arm_frames):
    cfg = model.ModelConfig(hidden=8, depth=1, heads=2)
    params = model.init_params(cfg, arm.joint_count, np.random.default_rng(1),
                               kind="mlp")
    report = bench.bench_inference(params, cfg, "mlp", arm, arm_frames,
                                   batch_sizes=(2,), min_duration=0.01)
    assert report.rows[0]["batch_size"] == 2


def test_bench_to_csv_layout(arm, arm_frames):
    report = bench.BenchReport(
        rows=[{"batch_size": 1, "fps": 100.0, "wall_time": 0.5,
               "iterations": 50},
              {"batch_size": 8, "fps": 320.5, "wall_time": 0.5,
               "iterations": 20}],
        environment="threads=1 precision=float32")
    assert bench.bench_to_csv(report).splitlines() == [
        "batch_size,fps",
        "1,100.0",
        "8,320.5",
    ]
