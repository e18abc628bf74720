"""Forward kinematics and the bone-aligned rotation representation.

Local rotations are parent-relative. The bone-aligned view multiplies
each world rotation by the joint's rest basis, which makes the columns
of the result line up with the posed bone; the map is orthogonal, so
world (and then local) rotations are recovered exactly by transposition.

All operations broadcast over leading batch dimensions and preserve the
input dtype: feed float32 to get the single-precision pipeline, float64
for the reference path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rig import KinematicTree, RestBoneFrames


@dataclass(frozen=True)
class FramePose:
    """One pose (or a batch): local/world/bone rotation views plus
    root-space positions.

    local, world, bone are (..., N, 3, 3); positions is (..., N, 3) with
    the root row exactly zero. world, bone, and positions are derived
    from local by fk and may be None when a view was never computed.
    """

    local: np.ndarray | None = None
    world: np.ndarray | None = None
    bone: np.ndarray | None = None
    positions: np.ndarray | None = None


def fk(tree: KinematicTree, locals_: np.ndarray) -> FramePose:
    """Compose local rotations down the tree.

    locals_ is (..., N, 3, 3). World rotation of a joint is the parent's
    world rotation times the local one; a position is the parent's
    position plus the parent's world rotation applied to the rest
    offset. The root position is exactly zero.
    """
    locals_ = np.asarray(locals_)
    n = tree.joint_count
    world = np.empty_like(locals_)
    positions = np.zeros(locals_.shape[:-2] + (3,), dtype=locals_.dtype)
    offsets = tree.rest_offsets.astype(locals_.dtype)

    world[..., 0, :, :] = locals_[..., 0, :, :]
    for i in range(1, n):
        p = tree.parents[i]
        world[..., i, :, :] = world[..., p, :, :] @ locals_[..., i, :, :]
        positions[..., i, :] = positions[..., p, :] + (
            world[..., p, :, :] @ offsets[i]
        )
    return FramePose(local=locals_, world=world, positions=positions)


def bone_from_world(world: np.ndarray, frames: RestBoneFrames) -> np.ndarray:
    """Bone-aligned view: world rotation times the rest basis, per joint."""
    world = np.asarray(world)
    return world @ frames.frames.astype(world.dtype)


def recover_world(bone: np.ndarray, frames: RestBoneFrames) -> np.ndarray:
    """Invert bone_from_world by multiplying with the transposed basis."""
    bone = np.asarray(bone)
    rest_t = np.swapaxes(frames.frames, -1, -2).astype(bone.dtype)
    return bone @ rest_t


def recover_local(world: np.ndarray, tree: KinematicTree) -> np.ndarray:
    """Parent-relative rotations from world rotations."""
    world = np.asarray(world)
    out = np.empty_like(world)
    out[..., 0, :, :] = world[..., 0, :, :]
    for i in range(1, tree.joint_count):
        p = tree.parents[i]
        parent_t = np.swapaxes(world[..., p, :, :], -1, -2)
        out[..., i, :, :] = parent_t @ world[..., i, :, :]
    return out


def apply_root_translation(pose: FramePose, t: np.ndarray) -> np.ndarray:
    """Shift root-space positions into a global frame."""
    if pose.positions is None:
        raise ValueError("pose has no positions; run fk first")
    return pose.positions + np.asarray(t, dtype=pose.positions.dtype)


def roundtrip_report(
    tree: KinematicTree,
    frames: RestBoneFrames,
    locals_: np.ndarray,
    dtype=np.float32,
) -> tuple[float, float]:
    """Frobenius error of locals -> world -> bone -> world -> locals.

    The pipeline runs in `dtype` (single precision by default) and is
    compared joint-by-joint against the double-precision inputs.
    Returns (max, mean) over all frames and joints.
    """
    ref = np.asarray(locals_, dtype=np.float64)
    if ref.size == 0:
        raise ValueError("empty dataset")
    low = ref.astype(dtype)
    world = fk(tree, low).world
    bone = bone_from_world(world, frames)
    back = recover_local(recover_world(bone, frames), tree)
    err = np.sqrt(np.sum((back.astype(np.float64) - ref) ** 2, axis=(-1, -2)))
    return float(err.max()), float(err.mean())
