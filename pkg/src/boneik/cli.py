"""Command line front end.

Every subcommand that takes a seed is reproducible byte for byte.
Reports are written as delimited text; each one also gets a rendered
PNG next to it with the same stem. Exit codes: 0 on success, 1 on I/O
failure, 2 on validation failure, with a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import dataio, metrics, model, plots, rig, so3, solvers, train
from .kinematics import fk, recover_local, recover_world, roundtrip_report


def _load_rig(value: str) -> rig.KinematicTree:
    """A path to a rig JSON file, or the name of a bundled rig."""
    if os.path.exists(value):
        return rig.load_rig_file(value)
    if not value.endswith(".json"):
        return rig.load_rig(rig.fixture_rig_text(value))
    raise FileNotFoundError(value)


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _figure_path(csv_path) -> str:
    return os.path.splitext(str(csv_path))[0] + ".png"


def _parse_list(text: str, cast):
    try:
        return tuple(cast(part) for part in text.split(","))
    except ValueError:
        raise ValueError(f"expected comma-separated {cast.__name__} list, got {text!r}")


def _load_checkpoint_for(tree: rig.KinematicTree, path):
    params, config, kind, rig_name, n = model.load_checkpoint(path)
    if n != tree.joint_count:
        raise ValueError(
            f"checkpoint was trained on {n} joints, rig '{tree.name}' has {tree.joint_count}")
    return params, config, kind


def _paired_from_file(tree, frames, path) -> dataio.PairedDataset:
    dataset = dataio.read_motion(path)
    if dataset.quats is None:
        raise ValueError(
            f"{path} holds positions only; this command needs rotation ground truth")
    return dataio.to_paired(dataset, tree, frames)


def cmd_rig_check(args) -> int:
    tree = _load_rig(args.rig_path)
    frames = rig.compute_rest_bone_frames(tree)
    print(f"rig {tree.name}: {tree.joint_count} joints")
    for i, name in enumerate(tree.names):
        parent = tree.names[tree.parents[i]] if tree.parents[i] >= 0 else "-"
        child = frames.primary_child[i]
        child_name = tree.names[child] if child >= 0 else "-"
        mark = " fallback" if frames.fallback_used[i] else ""
        print(f"  {i:2d} {name:<16} parent={parent:<16} "
              f"align-child={child_name}{mark}")
    bad = [tree.names[i] for i in range(tree.joint_count) if frames.fallback_used[i]]
    print("fallback frames: " + (", ".join(bad) if bad else "none"))
    return 0


def _caps_from_file(tree, path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    if not isinstance(spec, dict) or "default" not in spec:
        raise ValueError("caps file must be an object with a 'default' entry")
    caps = np.full(tree.joint_count, float(spec["default"]))
    for name, value in spec.get("joints", {}).items():
        if name not in tree.names:
            raise ValueError(f"caps file names unknown joint '{name}'")
        caps[tree.names.index(name)] = float(value)
    return caps


def cmd_gen(args) -> int:
    tree = _load_rig(args.rig)
    caps = _caps_from_file(tree, args.caps) if args.caps else np.full(
        tree.joint_count, 0.8)
    dataset = dataio.generate_synthetic(tree, args.frames, args.seed, caps,
                                        smoothing=args.smooth)
    dataio.write_motion(args.out, dataset)
    print(f"wrote {dataset.frame_count} frames to {args.out}")
    return 0


def _configs_from_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    kind = raw.get("kind", "gat")
    if kind not in ("gat", "mlp"):
        raise ValueError(f"config kind must be 'gat' or 'mlp', got {kind!r}")
    msec = dict(raw.get("model", {}))
    if "preset" in msec:
        mconf = model.ModelConfig.from_preset(msec.pop("preset"), **msec)
    else:
        mconf = model.ModelConfig(**msec)
    tconf = train.TrainConfig(**raw.get("train", {}))
    return mconf, tconf, kind


def cmd_train(args) -> int:
    tree = _load_rig(args.rig)
    frames = rig.compute_rest_bone_frames(tree)
    mconf, tconf, kind = _configs_from_file(args.config)
    train_set = _paired_from_file(tree, frames, args.train)
    val_set = _paired_from_file(tree, frames, args.val)
    params, history, best_epoch = train.train(tree, frames, mconf, tconf,
                                              train_set, val_set, kind=kind)
    model.save_checkpoint(args.out, params, mconf, tree.name,
                          tree.joint_count, kind=kind)
    hist_path = os.path.splitext(str(args.out))[0] + ".history.csv"
    _write_text(hist_path, train.history_to_csv(history))
    plots.history_figure(history, _figure_path(hist_path))
    best = next(r for r in history if r.epoch == best_epoch)
    print(f"trained {kind} for {len(history)} epochs, "
          f"best epoch {best_epoch} val mpjae {repr(best.val_mpjae)}")
    return 0


def _rest_pose_bone(frames: rig.RestBoneFrames, frame_count: int) -> np.ndarray:
    return np.broadcast_to(frames.frames, (frame_count,) + frames.frames.shape)


def cmd_eval(args) -> int:
    tree = _load_rig(args.rig)
    frames = rig.compute_rest_bone_frames(tree)
    paired = _paired_from_file(tree, frames, args.data)
    if args.ckpt:
        params, config, kind = _load_checkpoint_for(tree, args.ckpt)
        report = train.evaluate(params, config, kind, tree, frames, paired)
    else:
        # No checkpoint: score the rest pose as a trivial baseline.
        bone = _rest_pose_bone(frames, paired.frame_count)
        locs = recover_local(recover_world(bone, frames), tree)
        pos = fk(tree, locs).positions
        report = metrics.full_report(tree, frames, bone, paired.bone, pos,
                                     paired.gt_positions)
    _write_text(args.report, report.to_json())
    _write_text(args.per_joint, report.to_per_joint_csv())
    plots.per_joint_figure(report, _figure_path(args.per_joint))
    print(f"mpjae {repr(report.mpjae_deg)} deg, "
          f"mpjpe {repr(report.mpjpe_mm)} mm, "
          f"p-mpjpe {repr(report.p_mpjpe_mm)} mm")
    return 0


def cmd_roundtrip(args) -> int:
    tree = _load_rig(args.rig)
    frames = rig.compute_rest_bone_frames(tree)
    rng = np.random.default_rng(args.seed)
    n = tree.joint_count
    locals_ = so3.random_rotation(rng, np.pi, count=args.frames * n)
    locals_ = locals_.reshape(args.frames, n, 3, 3)
    worst, mean = roundtrip_report(tree, frames, locals_)
    print(f"roundtrip max {repr(worst)} mean {repr(mean)}")
    if worst > 5e-5:
        sys.stderr.write(
            f"error: ValueError: roundtrip max {worst!r} exceeds 5e-05\n")
        return 2
    return 0


def cmd_solve(args) -> int:
    tree = _load_rig(args.rig)
    frames = rig.compute_rest_bone_frames(tree)
    paired = _paired_from_file(tree, frames, args.data)
    checkpoints = _parse_list(args.checkpoints, int)
    config = solvers.SolveConfig(max_iters=max(checkpoints),
                                 checkpoints=checkpoints)
    name = {"grad": "gradient", "ccd": "ccd"}[args.solver]
    params = mconf = None
    kind = "gat"
    if args.ckpt:
        params, mconf, kind = _load_checkpoint_for(tree, args.ckpt)
    rows = solvers.budget_sweep(tree, frames, paired, params=params,
                                model_config=mconf, kind=kind,
                                config=config, which=(name,))
    _write_text(args.out, solvers.budget_to_csv(rows))
    plots.budget_figure(rows, _figure_path(args.out))
    print(f"wrote {len(rows)} sweep rows to {args.out}")
    return 0


def cmd_noise_sweep(args) -> int:
    tree = _load_rig(args.rig)
    frames = rig.compute_rest_bone_frames(tree)
    params, config, kind = _load_checkpoint_for(tree, args.ckpt)
    paired = _paired_from_file(tree, frames, args.data)
    sigmas = _parse_list(args.sigmas, float)
    rows, swing, twist = dataio.noise_sweep(params, config, kind, tree,
                                            frames, paired, sigmas,
                                            seed=args.seed)
    _write_text(args.out, dataio.noise_sweep_to_csv(rows))
    plots.noise_figure(rows, _figure_path(args.out))
    stem = os.path.splitext(str(args.out))[0]
    for label, grid in (("swing", swing), ("twist", twist)):
        _write_text(f"{stem}.{label}.csv",
                    dataio.grid_to_csv(tree.names, sigmas, grid))
        plots.grid_figure(tree.names, sigmas, grid,
                          f"{label} error by noise level",
                          f"{stem}.{label}.png")
    print(f"wrote {len(rows)} noise levels to {args.out}")
    return 0


def cmd_bench(args) -> int:
    tree = _load_rig(args.rig)
    frames = rig.compute_rest_bone_frames(tree)
    params, config, kind = _load_checkpoint_for(tree, args.ckpt)
    batches = _parse_list(args.batches, int)
    report = bench_mod.bench_inference(params, config, kind, tree, frames,
                                       batch_sizes=batches,
                                       min_duration=args.min_duration,
                                       threads=args.threads, seed=args.seed)
    _write_text(args.out, bench_mod.bench_to_csv(report))
    plots.bench_figure(report.rows, _figure_path(args.out))
    print(report.environment)
    for r in report.rows:
        print(f"batch {r['batch_size']:3d}: {r['fps']:.1f} fps "
              f"({r['iterations']} iters in {r['wall_time']:.2f}s)")
    return 0


def cmd_attn_flow(args) -> int:
    tree = _load_rig(args.rig)
    frames = rig.compute_rest_bone_frames(tree)
    params, config, kind = _load_checkpoint_for(tree, args.ckpt)
    if kind != "gat":
        raise ValueError("attention flow needs an attention model checkpoint")
    paired = _paired_from_file(tree, frames, args.data)
    topo = model.build_topology(tree, config.graph_mode)
    layers: list[list[np.ndarray]] = []
    positions = paired.positions
    for start in range(0, positions.shape[0], 256):
        _, attn = model.forward(params, config, topo, tree,
                                positions[start:start + 256])
        for i, a in enumerate(attn):
            if len(layers) <= i:
                layers.append([])
            layers[i].append(a)
    stack = [np.concatenate(parts, axis=0) for parts in layers]
    flow = model.attention_flow(stack)
    lines = ["joint," + ",".join(tree.names)]
    for i, name in enumerate(tree.names):
        lines.append(name + "," + ",".join(repr(float(v)) for v in flow[i]))
    _write_text(args.out, "\n".join(lines) + "\n")
    plots.flow_figure(tree.names, flow, _figure_path(args.out))
    print(f"wrote {flow.shape[0]}x{flow.shape[1]} flow matrix to {args.out}")
    return 0


def cmd_transfer(args) -> int:
    src_tree = _load_rig(args.src_rig)
    dst_tree = _load_rig(args.dst_rig)
    params, config, kind = _load_checkpoint_for(src_tree, args.src)
    with open(args.map, "r", encoding="utf-8") as fh:
        name_map = json.load(fh)
    if not isinstance(name_map, dict):
        raise ValueError("joint map must be a JSON object of dest -> source names")
    out = model.transfer_embeddings(params, src_tree, dst_tree, name_map)
    model.save_checkpoint(args.out, out, config, dst_tree.name,
                          dst_tree.joint_count, kind=kind)
    print(f"transferred {len(name_map)} joint embeddings "
          f"from {src_tree.name} to {dst_tree.name}")
    return 0


def cmd_convert(args) -> int:
    tree = _load_rig(args.rig)
    frames = rig.compute_rest_bone_frames(tree)
    params, config, kind = _load_checkpoint_for(tree, args.ckpt)
    dataset = dataio.read_motion(args.positions)
    if dataset.positions is None:
        raise ValueError(f"{args.positions} has no joint positions")
    pred = train.predict(params, config, kind, tree,
                         dataset.positions.astype(np.float32))
    locs = recover_local(recover_world(pred.astype(np.float64), frames), tree)
    quats = so3.matrix_to_quat(locs.reshape(-1, 3, 3))
    quats = quats.reshape(dataset.frame_count, tree.joint_count, 4)
    out = dataio.MotionDataset(rig=tree.name, quats=quats, positions=None)
    dataio.write_motion(args.out, out)
    print(f"converted {dataset.frame_count} frames to rotations at {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boneik",
        description="pose-to-rotation regression and iterative IK tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p_rig = sub.add_parser("rig", help="rig file utilities")
    rig_sub = p_rig.add_subparsers(dest="rig_command", required=True)
    p_check = rig_sub.add_parser("check", help="validate a rig and show its frames")
    p_check.add_argument("rig_path")
    p_check.set_defaults(func=cmd_rig_check)

    p_gen = sub.add_parser("gen", help="generate synthetic motion")
    p_gen.add_argument("--rig", required=True)
    p_gen.add_argument("--frames", type=int, required=True)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--caps", help="JSON file with per-joint angle caps")
    p_gen.add_argument("--smooth", type=float, default=0.0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train a regressor")
    p_train.add_argument("--rig", required=True)
    p_train.add_argument("--train", required=True)
    p_train.add_argument("--val", required=True)
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p_eval.add_argument("--rig", required=True)
    p_eval.add_argument("--ckpt")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--report", required=True)
    p_eval.add_argument("--per-joint", dest="per_joint", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_round = sub.add_parser("roundtrip",
                             help="bone-frame representation round-trip check")
    p_round.add_argument("--rig", required=True)
    p_round.add_argument("--frames", type=int, required=True)
    p_round.add_argument("--seed", type=int, required=True)
    p_round.set_defaults(func=cmd_roundtrip)

    p_solve = sub.add_parser("solve", help="iterative IK budget sweep")
    p_solve.add_argument("--rig", required=True)
    p_solve.add_argument("--data", required=True)
    p_solve.add_argument("--solver", choices=("grad", "ccd"), required=True)
    p_solve.add_argument("--checkpoints", default="1,10,50,100,200,300")
    p_solve.add_argument("--ckpt", help="add the single-pass model row")
    p_solve.add_argument("--out", required=True)
    p_solve.set_defaults(func=cmd_solve)

    p_noise = sub.add_parser("noise-sweep", help="robustness to input noise")
    p_noise.add_argument("--rig", required=True)
    p_noise.add_argument("--ckpt", required=True)
    p_noise.add_argument("--data", required=True)
    p_noise.add_argument("--sigmas", default="0,2.5,5,10,20,40")
    p_noise.add_argument("--seed", type=int, default=0)
    p_noise.add_argument("--out", required=True)
    p_noise.set_defaults(func=cmd_noise_sweep)

    p_bench = sub.add_parser("bench", help="inference throughput")
    p_bench.add_argument("--rig", required=True)
    p_bench.add_argument("--ckpt", required=True)
    p_bench.add_argument("--batches", default="1,2,4,8,16,32,64")
    p_bench.add_argument("--min-duration", dest="min_duration", type=float,
                         default=0.5)
    p_bench.add_argument("--threads", type=int, default=1)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", required=True)
    p_bench.set_defaults(func=cmd_bench)

    p_flow = sub.add_parser("attn-flow", help="mean attention flow matrix")
    p_flow.add_argument("--rig", required=True)
    p_flow.add_argument("--ckpt", required=True)
    p_flow.add_argument("--data", required=True)
    p_flow.add_argument("--out", required=True)
    p_flow.set_defaults(func=cmd_attn_flow)

    p_tr = sub.add_parser("transfer", help="move embeddings to a new rig")
    p_tr.add_argument("--src", required=True)
    p_tr.add_argument("--src-rig", dest="src_rig", required=True)
    p_tr.add_argument("--dst-rig", dest="dst_rig", required=True)
    p_tr.add_argument("--map", required=True)
    p_tr.add_argument("--out", required=True)
    p_tr.set_defaults(func=cmd_transfer)

    p_conv = sub.add_parser("convert",
                            help="positions file to local-rotation file")
    p_conv.add_argument("--rig", required=True)
    p_conv.add_argument("--ckpt", required=True)
    p_conv.add_argument("--positions", required=True)
    p_conv.add_argument("--out", required=True)
    p_conv.set_defaults(func=cmd_convert)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        msg = str(exc).replace("\n", " ")
        sys.stderr.write(f"error: {type(exc).__name__}: {msg}\n")
        return 1
    except (ValueError, KeyError, TypeError, train.DivergenceError) as exc:
        msg = str(exc).replace("\n", " ")
        sys.stderr.write(f"error: {type(exc).__name__}: {msg}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
