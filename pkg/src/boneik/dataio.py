"""Motion file I/O, synthetic data generation, noise injection, and
dataset splitting.

Motion files are JSON Lines. The first line is a header:

    {"rig": "smpl22", "n": 22, "format": "quat-wxyz", "units": "m"}

then one record per frame. Rotation files ("quat-wxyz") store local
rotations as unit quaternions row-per-joint, {"q": [[w,x,y,z], ...]},
optionally with cached root-space positions under "p". Position-only
files ("pos-xyz") store {"p": [[x,y,z], ...]} records. Floats are
written with shortest round-trip precision, so write -> read -> write
is byte-stable.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from . import metrics, so3, train
from .kinematics import bone_from_world, fk
from .rig import KinematicTree, RestBoneFrames

MOTION_FORMATS = ("quat-wxyz", "pos-xyz")
DEFAULT_SIGMAS = (0.0, 2.5, 5.0, 10.0, 20.0, 40.0)
QUAT_NORM_TOL = 1e-4


class MotionParseError(ValueError):
    """Malformed motion file."""


@dataclass(frozen=True)
class MotionDataset:
    """Frames of one rig: local-rotation quaternions (w,x,y,z) and/or
    cached root-space positions, units meters."""

    rig: str
    quats: np.ndarray | None
    positions: np.ndarray | None

    @property
    def frame_count(self) -> int:
        ref = self.quats if self.quats is not None else self.positions
        return 0 if ref is None else ref.shape[0]

    @property
    def joint_count(self) -> int:
        ref = self.quats if self.quats is not None else self.positions
        return ref.shape[1]

    def local_matrices(self) -> np.ndarray:
        if self.quats is None:
            raise ValueError("position-only dataset has no rotations")
        return so3.quat_to_matrix(self.quats)


@dataclass(frozen=True)
class PairedDataset:
    """Model-ready arrays: input positions, ground-truth bone-aligned
    rotations, and the clean positions metrics compare against.

    positions and gt_positions are the same array until noise is
    injected.
    """

    positions: np.ndarray
    bone: np.ndarray
    gt_positions: np.ndarray

    @property
    def frame_count(self) -> int:
        return self.positions.shape[0]


def _nested(a: np.ndarray):
    return [[float(v) for v in row] for row in a]


def write_motion(path, dataset: MotionDataset) -> None:
    fmt = "quat-wxyz" if dataset.quats is not None else "pos-xyz"
    n = dataset.joint_count
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"rig": dataset.rig, "n": n, "format": fmt, "units": "m"}))
        fh.write("\n")
        for f in range(dataset.frame_count):
            rec = {}
            if dataset.quats is not None:
                rec["q"] = _nested(dataset.quats[f])
            if dataset.positions is not None:
                rec["p"] = _nested(dataset.positions[f])
            fh.write(json.dumps(rec))
            fh.write("\n")


def _frame_array(rec, key, n, width, line_no):
    rows = rec[key]
    if (not isinstance(rows, list) or len(rows) != n or
            any(not isinstance(r, list) or len(r) != width for r in rows)):
        raise MotionParseError(f"line {line_no}: '{key}' must be {n} rows of {width} numbers")
    return np.asarray(rows, dtype=float)


def read_motion(path) -> MotionDataset:
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise MotionParseError(f"invalid header: {exc}") from exc
        if not isinstance(header, dict) or set(header) != {"rig", "n", "format", "units"}:
            raise MotionParseError("header must have exactly rig, n, format, units")
        if header["format"] not in MOTION_FORMATS:
            raise MotionParseError(f"unknown format '{header['format']}'")
        if header["units"] != "m":
            raise MotionParseError(f"unsupported units '{header['units']}'")
        n = header["n"]
        if not isinstance(n, int) or n < 1:
            raise MotionParseError("joint count must be a positive integer")

        quats, positions = [], []
        want_q = header["format"] == "quat-wxyz"
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MotionParseError(f"line {line_no}: {exc}") from exc
            allowed = {"q", "p"} if want_q else {"p"}
            if not isinstance(rec, dict) or not set(rec) <= allowed:
                raise MotionParseError(f"line {line_no}: unexpected fields")
            if want_q:
                if "q" not in rec:
                    raise MotionParseError(f"line {line_no}: missing 'q'")
                quats.append(_frame_array(rec, "q", n, 4, line_no))
            if "p" in rec:
                positions.append(_frame_array(rec, "p", n, 3, line_no))
            elif not want_q:
                raise MotionParseError(f"line {line_no}: missing 'p'")

    q_arr = np.asarray(quats) if quats else None
    p_arr = np.asarray(positions) if positions else None
    if q_arr is not None and p_arr is not None and len(p_arr) != len(q_arr):
        raise MotionParseError("positions cached for only some frames")
    if q_arr is not None and q_arr.size:
        norms = np.linalg.norm(q_arr, axis=-1)
        if np.any(np.abs(norms - 1.0) > QUAT_NORM_TOL):
            raise MotionParseError("quaternion norms deviate from 1 beyond tolerance")
        # renormalize only rows that are off at double precision, so
        # clean files survive read -> write byte-identically
        off = np.abs(norms - 1.0) > 1e-12
        if np.any(off):
            q_arr = q_arr.copy()
            q_arr[off] /= norms[off][..., None]
    return MotionDataset(rig=header["rig"], quats=q_arr, positions=p_arr)


def check_consistency(dataset: MotionDataset, tree: KinematicTree) -> float:
    """Largest deviation (meters) between cached positions and FK of
    the stored locals."""
    if dataset.quats is None or dataset.positions is None:
        raise ValueError("dataset must carry both rotations and positions")
    pose = fk(tree, dataset.local_matrices())
    return float(np.abs(pose.positions - dataset.positions).max())


def generate_synthetic(tree: KinematicTree, frame_count: int, seed: int,
                       angle_caps, smoothing: float = 0.0) -> MotionDataset:
    """Random poses with bounded per-joint angles and optional
    first-order autoregressive smoothing across frames.

    Each frame draws from its own (seed, frame) RNG stream, so the raw
    samples are independent of frame order and batch size. Smoothing
    s in [0, 1) replaces each sample by a partial step from the
    previous frame toward it (s = 0 keeps the raw samples).
    """
    n = tree.joint_count
    caps = np.broadcast_to(np.asarray(angle_caps, dtype=float), (n,))
    if np.any(caps <= 0.0) or np.any(caps >= np.pi):
        raise ValueError("angle caps must lie in (0, pi)")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError("smoothing must lie in [0, 1)")

    locals_ = np.empty((frame_count, n, 3, 3))
    prev = None
    for f in range(frame_count):
        rng = np.random.default_rng([seed, f])
        axis = rng.normal(size=(n, 3))
        axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
        angle = rng.random(n) * caps
        sample = so3.axis_angle_to_matrix(axis, angle)
        if smoothing > 0.0 and prev is not None:
            rel = np.swapaxes(prev, -1, -2) @ sample
            rel_axis, rel_angle = so3.matrix_to_axis_angle(rel)
            step = so3.axis_angle_to_matrix(rel_axis, (1.0 - smoothing) * rel_angle)
            sample = prev @ step
        locals_[f] = sample
        prev = sample

    positions = fk(tree, locals_).positions
    quats = so3.matrix_to_quat(locals_).reshape(frame_count, n, 4)
    return MotionDataset(rig=tree.name, quats=quats, positions=positions)


def to_paired(dataset: MotionDataset, tree: KinematicTree,
              frames: RestBoneFrames, dtype=np.float32) -> PairedDataset:
    """Turn stored locals into model inputs and supervision targets."""
    if dataset.joint_count != tree.joint_count:
        raise ValueError(f"dataset has {dataset.joint_count} joints, "
                         f"rig '{tree.name}' has {tree.joint_count}")
    locals_ = dataset.local_matrices()
    pose = fk(tree, locals_)
    bone = bone_from_world(pose.world, frames).astype(dtype)
    if dataset.positions is not None:
        pos = dataset.positions.astype(dtype)
    else:
        pos = pose.positions.astype(dtype)
    return PairedDataset(positions=pos, bone=bone, gt_positions=pos)


def inject_noise(positions: np.ndarray, sigma_mm: float, seed: int,
                 recenter: bool = True) -> np.ndarray:
    """Gaussian position noise, sigma in millimeters.

    Every joint including the root is perturbed; by default the frame
    is then shifted so the root returns to the origin. sigma 0 is an
    exact copy. Streams are fixed per (seed, sigma, frame).
    """
    positions = np.asarray(positions)
    if sigma_mm < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma_mm == 0.0:
        return positions.copy()
    out = positions.astype(np.float64).copy()
    sig_key = int(round(sigma_mm * 1000))
    for f in range(positions.shape[0]):
        rng = np.random.default_rng([seed, sig_key, f])
        out[f] += rng.normal(scale=sigma_mm / 1000.0, size=out[f].shape)
        if recenter:
            out[f] -= out[f, 0]
    return out.astype(positions.dtype)


def split(dataset: MotionDataset, fractions, seed: int = 0,
          shuffle: bool = False) -> tuple[MotionDataset, MotionDataset, MotionDataset]:
    """Three-way split. Contiguous blocks by default because smoothed
    frames are temporally correlated; set shuffle for a seeded
    permutation first."""
    fractions = np.asarray(fractions, dtype=float)
    if fractions.shape != (3,) or np.any(fractions < 0):
        raise ValueError("fractions must be 3 nonnegative numbers")
    if abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n = dataset.frame_count
    idx = np.arange(n)
    if shuffle:
        idx = np.random.default_rng(seed).permutation(n)
    b1 = int(round(n * fractions[0]))
    b2 = int(round(n * (fractions[0] + fractions[1])))
    parts = (idx[:b1], idx[b1:b2], idx[b2:])

    def take(sel):
        return MotionDataset(
            rig=dataset.rig,
            quats=None if dataset.quats is None else dataset.quats[sel],
            positions=None if dataset.positions is None else dataset.positions[sel],
        )

    return take(parts[0]), take(parts[1]), take(parts[2])


def noise_sweep(params, config, kind, tree: KinematicTree, frames: RestBoneFrames,
                paired: PairedDataset, sigmas=DEFAULT_SIGMAS, seed: int = 0):
    """Evaluate one model across noise levels.

    Returns (rows, swing_grid, twist_grid): one row dict per sigma and
    two (joints x sigmas) degree grids for the per-joint breakdown.
    """
    rows = []
    n = tree.joint_count
    swing_grid = np.empty((n, len(sigmas)))
    twist_grid = np.empty((n, len(sigmas)))
    for k, sigma in enumerate(sigmas):
        noisy = inject_noise(paired.gt_positions, sigma, seed)
        noisy_set = PairedDataset(positions=noisy, bone=paired.bone,
                                  gt_positions=paired.gt_positions)
        report = train.evaluate(params, config, kind, tree, frames, noisy_set)
        rows.append({
            "sigma_mm": float(sigma),
            "mpjae": report.mpjae_deg,
            "mpjpe": report.mpjpe_mm,
            "p_mpjpe": report.p_mpjpe_mm,
            "swing": report.swing_deg,
            "twist": report.twist_deg,
        })
        swing_grid[:, k] = report.per_joint[:, 1]
        twist_grid[:, k] = report.per_joint[:, 2]
    return rows, swing_grid, twist_grid


def noise_sweep_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sigma_mm", "mpjae", "mpjpe", "p_mpjpe", "swing", "twist"])
    for r in rows:
        w.writerow([repr(r["sigma_mm"]), repr(r["mpjae"]), repr(r["mpjpe"]),
                    repr(r["p_mpjpe"]), repr(r["swing"]), repr(r["twist"])])
    return buf.getvalue()


def grid_to_csv(joint_names, sigmas, grid: np.ndarray) -> str:
    """Joints down the rows, noise levels across the columns."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["joint"] + [repr(float(s)) for s in sigmas])
    for i, name in enumerate(joint_names):
        w.writerow([name] + [repr(float(v)) for v in grid[i]])
    return buf.getvalue()
