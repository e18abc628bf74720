"""Throughput of the pure inference path: forward pass plus analytic
recovery of local rotations, timed across batch sizes.

Input buffers are allocated before the clock starts and reused; one
warmup pass per batch size is excluded from the measurement.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from . import model
from .kinematics import recover_local, recover_world
from .rig import KinematicTree, RestBoneFrames

DEFAULT_BATCHES = (1, 2, 4, 8, 16, 32, 64)


@dataclass(frozen=True)
class BenchReport:
    rows: list
    environment: str


def bench_inference(params, config, kind, tree: KinematicTree,
                    frames: RestBoneFrames, batch_sizes=DEFAULT_BATCHES,
                    min_duration: float = 0.5, threads: int = 1,
                    seed: int = 0) -> BenchReport:
    """Frames per second of positions -> bone rotations -> locals."""
    topo = model.build_topology(tree, config.graph_mode) if kind == "gat" else None
    rng = np.random.default_rng(seed)
    rows = []
    for batch in batch_sizes:
        x = rng.normal(size=(batch, tree.joint_count, 3)).astype(np.float32) * 0.3

        def run():
            if kind == "gat":
                bone, _ = model.forward(params, config, topo, tree, x)
            else:
                bone = model.mlp_forward(params, config, x)
            return recover_local(recover_world(bone.data, frames), tree)

        run()  # warmup, not timed
        iters = 0
        start = time.perf_counter()
        while True:
            run()
            iters += 1
            wall = time.perf_counter() - start
            if wall >= min_duration:
                break
        rows.append({
            "batch_size": batch,
            "fps": batch * iters / wall,
            "wall_time": wall,
            "iterations": iters,
        })
    env = f"threads={threads} precision=float32"
    return BenchReport(rows=rows, environment=env)


def bench_to_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["batch_size", "fps"])
    for r in report.rows:
        w.writerow([r["batch_size"], repr(float(r["fps"]))])
    return buf.getvalue()
