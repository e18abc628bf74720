"""Iterative IK baselines on the same kinematic tree.

Two classical solvers, both acting on local rotations only (bone
lengths never change): a first-order descent over per-joint axis-angle
increments with per-frame adaptive step control, and cyclic coordinate
descent with closed-form per-joint alignment. The budget harness runs
both against a trained regressor checkpoint.

These reproduce the qualitative iteration/accuracy trade-off of
optimization-based IK, not any particular implementation's absolute
numbers: there is no body model here, so the fit is over rotations
alone.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad, metrics, so3, train
from .autodiff import Tape, Tensor
from .kinematics import bone_from_world, fk
from .rig import KinematicTree, RestBoneFrames

DEFAULT_CHECKPOINTS = (1, 10, 50, 100, 200, 300)
CCD_MAX_STEP_RAD = 0.5


@dataclass(frozen=True)
class SolveConfig:
    max_iters: int = 300
    tolerance: float = 1e-4
    step: float = 0.5
    checkpoints: tuple = DEFAULT_CHECKPOINTS

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class SolveCheckpoint:
    iteration: int
    locals: np.ndarray
    residual: np.ndarray


def _rodrigues(delta: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (..., 3) to rotations, series-guarded at 0."""
    t = np.sum(delta * delta, axis=-1)
    small = t < 1e-12
    ts = np.where(small, 1.0, t)
    s = np.sqrt(ts)
    sinc = np.where(small, 1.0 - t / 6.0, np.sin(s) / s)
    cosc = np.where(small, 0.5 - t / 24.0, (1.0 - np.cos(s)) / ts)
    x, y, z = delta[..., 0], delta[..., 1], delta[..., 2]
    zero = np.zeros_like(x)
    k = np.stack([
        np.stack([zero, -z, y], axis=-1),
        np.stack([z, zero, -x], axis=-1),
        np.stack([-y, x, zero], axis=-1),
    ], axis=-2)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + sinc[..., None, None] * k + cosc[..., None, None] * (k @ k)


def _frame_mse(tree: KinematicTree, locals_: np.ndarray,
               targets: np.ndarray) -> np.ndarray:
    """Per-frame mean over joints of squared position error."""
    pos = fk(tree, locals_).positions
    return np.mean(np.sum((pos - targets) ** 2, axis=-1), axis=-1)


def _fk_positions_tape(tree: KinematicTree, locs: Tensor, batch: int) -> Tensor:
    """Differentiable root-space positions from (B, N, 3, 3) locals."""
    n = tree.joint_count
    w = [ad.index_select(locs, [0], axis=1)]
    pos = [Tensor(np.zeros((batch, 1, 3)))]
    for i in range(1, n):
        p = int(tree.parents[i])
        li = ad.index_select(locs, [i], axis=1)
        w.append(ad.matmul(w[p], li))
        step = ad.reshape(ad.matmul(w[p], Tensor(tree.rest_offsets[i][:, None])),
                          (batch, 1, 3))
        pos.append(ad.add(pos[p], step))
    return ad.concat(pos, axis=1)


def _snapshot(out, iteration, locals_, mse):
    out.append(SolveCheckpoint(iteration=iteration, locals=locals_.copy(),
                               residual=np.sqrt(mse)))


def gradient_ik(tree: KinematicTree, frames: RestBoneFrames,
                target_positions: np.ndarray, config: SolveConfig,
                init_locals: np.ndarray | None = None) -> list[SolveCheckpoint]:
    """Descent on per-joint axis-angle increments, batched over frames.

    Each iteration differentiates the squared position error through FK
    at the current pose, takes a per-frame step along the negative
    gradient, and accepts it only if that frame's error drops (step
    grows 1.2x on accept, halves on reject). The reported residual,
    root-mean-square position error per frame, is therefore monotone
    non-increasing. frames is unused (the fit is in local space) but
    kept so both solvers share a signature.
    """
    targets = np.asarray(target_positions, dtype=np.float64)
    single = targets.ndim == 2
    if single:
        targets = targets[None]
    b, n = targets.shape[0], tree.joint_count
    if init_locals is None:
        locals_ = np.broadcast_to(np.eye(3), (b, n, 3, 3)).copy()
    else:
        locals_ = np.asarray(init_locals, dtype=np.float64).reshape(b, n, 3, 3).copy()

    step = np.full(b, config.step)
    mse = _frame_mse(tree, locals_, targets)
    checkpoints = sorted(set(config.checkpoints))
    out: list[SolveCheckpoint] = []
    done = 0

    for it in range(1, config.max_iters + 1):
        if np.all(np.sqrt(mse) < config.tolerance):
            break
        delta = Tensor(np.zeros((b, n, 3)), requires_grad=True)
        base = Tensor(locals_)
        with Tape() as tape:
            t2 = ad.tsum(ad.mul(delta, delta), axis=-1, keepdims=True)
            k = ad.skew(delta)
            sc = ad.reshape(ad.sinc_theta(t2), (b, n, 1, 1))
            cc = ad.reshape(ad.cosc_theta(t2), (b, n, 1, 1))
            rot = ad.add(ad.add(Tensor(np.eye(3)), ad.mul(sc, k)),
                         ad.mul(cc, ad.matmul(k, k)))
            cand = ad.matmul(base, rot)
            pos = _fk_positions_tape(tree, cand, b)
            diff = ad.sub(pos, Tensor(targets))
            loss = ad.tsum(ad.mul(diff, diff))
        ad.backward(tape, loss)

        trial = locals_ @ _rodrigues(-step[:, None, None] * delta.grad)
        trial_mse = _frame_mse(tree, trial, targets)
        accept = trial_mse < mse
        locals_[accept] = trial[accept]
        mse[accept] = trial_mse[accept]
        step[accept] *= 1.2
        step[~accept] *= 0.5

        while done < len(checkpoints) and checkpoints[done] == it:
            _snapshot(out, it, locals_, mse)
            done += 1

    for cp in checkpoints[done:]:
        _snapshot(out, cp, locals_, mse)
    if single:
        out = [SolveCheckpoint(c.iteration, c.locals[0], c.residual[0]) for c in out]
    return out


def _descendants(tree: KinematicTree) -> list[list[int]]:
    desc = [[] for _ in range(tree.joint_count)]
    for j in range(tree.joint_count - 1, 0, -1):
        p = int(tree.parents[j])
        desc[p] = sorted(desc[p] + [j] + desc[j])
    return desc


def ccd_ik(tree: KinematicTree, frames: RestBoneFrames,
           target_positions: np.ndarray, config: SolveConfig,
           init_locals: np.ndarray | None = None) -> list[SolveCheckpoint]:
    """Cyclic coordinate descent, one leaf-to-root sweep per iteration.

    Each joint gets the orthogonal-Procrustes rotation aligning its
    strict descendants (pivoted at the joint) with their targets,
    capped per sweep, and applied only when it does not worsen that
    joint's own alignment error.
    """
    targets = np.asarray(target_positions, dtype=np.float64)
    single = targets.ndim == 2
    if single:
        targets = targets[None]
    b, n = targets.shape[0], tree.joint_count
    if init_locals is None:
        locals_ = np.broadcast_to(np.eye(3), (b, n, 3, 3)).copy()
    else:
        locals_ = np.asarray(init_locals, dtype=np.float64).reshape(b, n, 3, 3).copy()

    desc = _descendants(tree)
    checkpoints = sorted(set(config.checkpoints))
    out: list[SolveCheckpoint] = []
    done = 0
    mse = _frame_mse(tree, locals_, targets)

    for it in range(1, config.max_iters + 1):
        if np.all(np.sqrt(mse) < config.tolerance):
            break
        for i in range(n - 1, -1, -1):
            d = desc[i]
            if not d:
                continue
            pose = fk(tree, locals_)
            pivot = pose.positions[:, i:i + 1, :]
            p = pose.positions[:, d, :] - pivot
            t = targets[:, d, :] - pivot
            h = np.swapaxes(p, -1, -2) @ t
            u, _, vt = np.linalg.svd(h)
            sign = np.sign(np.linalg.det(np.swapaxes(vt, -1, -2) @ np.swapaxes(u, -1, -2)))
            dmat = np.ones((b, 3))
            dmat[:, 2] = sign
            q = np.swapaxes(vt, -1, -2) @ (dmat[:, :, None] * np.swapaxes(u, -1, -2))

            axis, angle = so3.matrix_to_axis_angle(q)
            axis = axis.reshape(b, 3)
            angle = np.minimum(angle.reshape(b), CCD_MAX_STEP_RAD)
            q = _rodrigues(axis * angle[:, None])

            before = np.sum((p - t) ** 2, axis=(-1, -2))
            after = np.sum((p @ np.swapaxes(q, -1, -2) - t) ** 2, axis=(-1, -2))
            apply = after <= before
            if not np.any(apply):
                continue
            if i == 0:
                new_local = q @ pose.world[:, 0]
            else:
                pw = pose.world[:, tree.parents[i]]
                new_local = np.swapaxes(pw, -1, -2) @ q @ pose.world[:, i]
            locals_[apply, i] = new_local[apply]
        mse = _frame_mse(tree, locals_, targets)
        while done < len(checkpoints) and checkpoints[done] == it:
            _snapshot(out, it, locals_, mse)
            done += 1

    for cp in checkpoints[done:]:
        _snapshot(out, cp, locals_, mse)
    if single:
        out = [SolveCheckpoint(c.iteration, c.locals[0], c.residual[0]) for c in out]
    return out


SOLVERS = {"gradient": gradient_ik, "ccd": ccd_ik}


def budget_sweep(tree: KinematicTree, frames: RestBoneFrames, paired,
                 params=None, model_config=None, kind: str = "gat",
                 config: SolveConfig | None = None,
                 which=("gradient", "ccd")) -> list[dict]:
    """Accuracy-versus-iterations table for the requested solvers plus,
    when a trained model is supplied, the single-pass regressor row
    (solver name "model", iteration 1)."""
    config = config or SolveConfig()
    unknown = set(which) - set(SOLVERS)
    if unknown:
        raise ValueError(f"unknown solver names {sorted(unknown)}")
    targets = np.asarray(paired.gt_positions, dtype=np.float64)
    rows = []
    for name in which:
        solver = SOLVERS[name]
        for cp in solver(tree, frames, targets, config):
            pose = fk(tree, cp.locals)
            bone = bone_from_world(pose.world, frames)
            rows.append({
                "solver": name,
                "iteration": cp.iteration,
                "mpjae_deg": metrics.mpjae(bone, paired.bone.astype(np.float64),
                                           tree, frames),
                "mpjpe_mm": metrics.mpjpe(pose.positions, targets),
            })
    if params is not None:
        report = train.evaluate(params, model_config, kind, tree, frames,
                                paired)
        rows.append({
            "solver": "model",
            "iteration": 1,
            "mpjae_deg": report.mpjae_deg,
            "mpjpe_mm": report.mpjpe_mm,
        })
    return rows


def budget_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["solver", "iteration", "mpjae_deg", "mpjpe_mm"])
    for r in rows:
        w.writerow([r["solver"], r["iteration"], repr(float(r["mpjae_deg"])),
                    repr(float(r["mpjpe_mm"]))])
    return buf.getvalue()
