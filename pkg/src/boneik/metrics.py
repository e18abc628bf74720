"""Evaluation metrics: angular error on recovered locals, positional
error with and without similarity alignment, swing/twist breakdowns.

Rotation metrics take the bone-aligned view as input and recover
parent-relative locals internally, so they measure exactly what an
animation pipeline would consume. Positions are meters in, millimeters
out.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import so3
from .kinematics import recover_local, recover_world
from .rig import KinematicTree, RestBoneFrames

RAD2DEG = 180.0 / np.pi


class DegenerateCloudError(ValueError):
    """All reference points coincide; no alignment exists."""


@dataclass(frozen=True)
class SimilarityTransform:
    """p -> scale * rotation @ p + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class EvalReport:
    """Dataset-level metric summary with a per-joint breakdown.

    per_joint is (N, 3): columns are angular error, swing, twist, all in
    degrees; their column means reproduce the aggregate fields.
    """

    mpjae_deg: float
    swing_deg: float
    twist_deg: float
    mpjpe_mm: float
    p_mpjpe_mm: float
    per_joint: np.ndarray
    joints: tuple[str, ...]
    frame_count: int

    def to_json(self) -> str:
        doc = {
            "mpjae_deg": self.mpjae_deg,
            "swing_deg": self.swing_deg,
            "twist_deg": self.twist_deg,
            "mpjpe_mm": self.mpjpe_mm,
            "p_mpjpe_mm": self.p_mpjpe_mm,
            "frame_count": self.frame_count,
            "per_joint": {
                name: {
                    "mpjae": float(self.per_joint[i, 0]),
                    "swing": float(self.per_joint[i, 1]),
                    "twist": float(self.per_joint[i, 2]),
                }
                for i, name in enumerate(self.joints)
            },
        }
        return json.dumps(doc, indent=2) + "\n"

    def to_per_joint_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["joint", "mpjae", "swing", "twist"])
        for i, name in enumerate(self.joints):
            w.writerow([name, repr(float(self.per_joint[i, 0])),
                        repr(float(self.per_joint[i, 1])),
                        repr(float(self.per_joint[i, 2]))])
        return buf.getvalue()


def local_angle_errors(
    pred_bone: np.ndarray,
    gt_bone: np.ndarray,
    tree: KinematicTree,
    frames: RestBoneFrames,
) -> np.ndarray:
    """Geodesic distance between recovered locals, radians, (..., N)."""
    pred_loc = recover_local(recover_world(pred_bone, frames), tree)
    gt_loc = recover_local(recover_world(gt_bone, frames), tree)
    return so3.geodesic(pred_loc, gt_loc)


def mpjae(
    pred_bone: np.ndarray,
    gt_bone: np.ndarray,
    tree: KinematicTree,
    frames: RestBoneFrames,
) -> float:
    """Mean per-joint angular error over all frames and joints, degrees."""
    return float(np.mean(local_angle_errors(pred_bone, gt_bone, tree, frames)) * RAD2DEG)


def mpjpe(pred_pos: np.ndarray, gt_pos: np.ndarray) -> float:
    """Mean per-joint position error, millimeters (inputs in meters)."""
    d = np.linalg.norm(np.asarray(pred_pos) - np.asarray(gt_pos), axis=-1)
    return float(1000.0 * np.mean(d))


def _rms_mpjpe(pred_pos: np.ndarray, gt_pos: np.ndarray) -> float:
    # Root-mean-square variant: this is the quantity the Procrustes
    # objective actually minimizes, so alignment never increases it.
    d2 = np.sum((np.asarray(pred_pos) - np.asarray(gt_pos)) ** 2, axis=-1)
    return float(1000.0 * np.sqrt(np.mean(d2)))


def _umeyama(pred: np.ndarray, gt: np.ndarray):
    """Batched similarity fit: returns (s, R, t) minimizing
    sum ||s R p + t - g||^2 over each (..., N, 3) cloud pair."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    n = pred.shape[-2]
    mu_p = pred.mean(axis=-2, keepdims=True)
    mu_g = gt.mean(axis=-2, keepdims=True)
    pc = pred - mu_p
    gc = gt - mu_g
    if np.any(np.max(np.sum(gc**2, axis=-1), axis=-1) == 0.0):
        raise DegenerateCloudError("reference points all coincide")
    cov = np.swapaxes(gc, -1, -2) @ pc / n
    u, sing, vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    d = np.ones(sing.shape)
    d[..., -1] = sign
    rot = u @ (d[..., :, None] * vt)
    var_p = np.mean(np.sum(pc**2, axis=-1), axis=-1)
    scale = np.sum(sing * d, axis=-1) / var_p
    trans = mu_g[..., 0, :] - scale[..., None] * np.squeeze(
        rot @ mu_p[..., 0, :, None], axis=-1
    )
    return scale, rot, trans


def umeyama_align(pred_pos: np.ndarray, gt_pos: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity transform for a single (N, 3) cloud pair."""
    pred_pos = np.asarray(pred_pos, dtype=np.float64)
    if pred_pos.ndim != 2:
        raise ValueError("umeyama_align expects single (N, 3) clouds")
    s, r, t = _umeyama(pred_pos, gt_pos)
    return SimilarityTransform(scale=float(s), rotation=r, translation=t)


def p_mpjpe(pred_pos: np.ndarray, gt_pos: np.ndarray) -> float:
    """MPJPE after per-frame similarity alignment of pred onto gt."""
    pred_pos = np.asarray(pred_pos, dtype=np.float64)
    gt_pos = np.asarray(gt_pos, dtype=np.float64)
    s, r, t = _umeyama(pred_pos, gt_pos)
    aligned = s[..., None, None] * pred_pos @ np.swapaxes(r, -1, -2) + t[..., None, :]
    return mpjpe(aligned, gt_pos)


def swing_twist_report(
    pred_bone: np.ndarray, gt_bone: np.ndarray
) -> tuple[np.ndarray, tuple[float, float]]:
    """Per-joint (N, 2) swing/twist errors in degrees plus their means.

    Per-joint values are means over frames; the scalar pair is the mean
    over joints of the per-joint values.
    """
    swing, twist = so3.axis_errors(np.asarray(pred_bone), np.asarray(gt_bone))
    swing = np.asarray(swing) * RAD2DEG
    twist = np.asarray(twist) * RAD2DEG
    axes = tuple(range(swing.ndim - 1))
    per_joint = np.stack([swing.mean(axis=axes), twist.mean(axis=axes)], axis=-1)
    return per_joint, (float(per_joint[:, 0].mean()), float(per_joint[:, 1].mean()))


def full_report(
    tree: KinematicTree,
    frames: RestBoneFrames,
    pred_bone: np.ndarray,
    gt_bone: np.ndarray,
    pred_pos: np.ndarray,
    gt_pos: np.ndarray,
) -> EvalReport:
    """All metrics for a batch of frames in one report."""
    ang = local_angle_errors(pred_bone, gt_bone, tree, frames) * RAD2DEG
    frame_axes = tuple(range(ang.ndim - 1))
    per_joint_ang = ang.mean(axis=frame_axes)
    st_per_joint, _ = swing_twist_report(pred_bone, gt_bone)
    per_joint = np.concatenate([per_joint_ang[:, None], st_per_joint], axis=1)
    frame_count = int(np.prod(ang.shape[:-1], dtype=int)) if ang.ndim > 1 else 1
    return EvalReport(
        mpjae_deg=float(per_joint[:, 0].mean()),
        swing_deg=float(per_joint[:, 1].mean()),
        twist_deg=float(per_joint[:, 2].mean()),
        mpjpe_mm=mpjpe(pred_pos, gt_pos),
        p_mpjpe_mm=p_mpjpe(pred_pos, gt_pos),
        per_joint=per_joint,
        joints=tuple(tree.names),
        frame_count=frame_count,
    )


def aggregate(reports: list[EvalReport]) -> EvalReport:
    """Frame-weighted combination of reports.

    Sums use exact accumulation, so the result is independent of report
    order.
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    joints = reports[0].joints
    for r in reports:
        if r.joints != joints:
            raise ValueError("reports cover different rigs")
    total = sum(r.frame_count for r in reports)

    def wmean(values: list[float], counts: list[int]) -> float:
        return math.fsum(v * c for v, c in zip(values, counts)) / total

    counts = [r.frame_count for r in reports]
    n = len(joints)
    per_joint = np.empty((n, 3))
    for i in range(n):
        for k in range(3):
            per_joint[i, k] = wmean([float(r.per_joint[i, k]) for r in reports], counts)
    return EvalReport(
        mpjae_deg=wmean([r.mpjae_deg for r in reports], counts),
        swing_deg=wmean([r.swing_deg for r in reports], counts),
        twist_deg=wmean([r.twist_deg for r in reports], counts),
        mpjpe_mm=wmean([r.mpjpe_mm for r in reports], counts),
        p_mpjpe_mm=wmean([r.p_mpjpe_mm for r in reports], counts),
        per_joint=per_joint,
        joints=joints,
        frame_count=total,
    )
