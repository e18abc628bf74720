"""Kinematic tree definition, validation, and rest-pose bone frames.

A rig file is UTF-8 JSON:

    {
      "name": "smpl22",
      "up": [0.0, 1.0, 0.0],
      "joints": [
          {"name": "pelvis", "parent": null, "offset": [0.0, 0.0, 0.0]},
          {"name": "left_hip", "parent": "pelvis", "offset": [0.07, -0.08, -0.01]},
          ...
      ]
    }

Joints appear in parent-first order, the parent is given by name, and
offsets are parent-relative rest-pose displacements in meters. Unknown
fields anywhere in the document are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

# Fallback reference kicks in when the rejection loses this fraction of
# the reference norm; safely above double-precision noise.
COLLINEAR_THRESHOLD = 1e-6

# Children whose up-alignment differs less than this are ties.
ALIGNMENT_TIE_TOLERANCE = 1e-9


class RigError(ValueError):
    """Base for rig-file problems."""


class RigParseError(RigError):
    """Malformed rig document."""


class RigTopologyError(RigError):
    """Structurally invalid kinematic tree."""


class DegenerateFrameError(RigError):
    """Both the propagated reference and the fallback are collinear with a bone."""


@dataclass(frozen=True)
class KinematicTree:
    """Static skeleton: names, parent indices, rest offsets, up direction.

    parents[0] is -1; parents[i] < i for i > 0. rest_offsets is (N, 3) in
    meters with a zero root row. up is a unit 3-vector.
    """

    name: str
    names: tuple[str, ...]
    parents: np.ndarray
    rest_offsets: np.ndarray
    up: np.ndarray

    @property
    def joint_count(self) -> int:
        return len(self.names)

    def children(self, i: int) -> list[int]:
        return [j for j in range(self.joint_count) if self.parents[j] == i]

    def rest_positions(self) -> np.ndarray:
        """Rest-pose joint positions with the root at the origin, (N, 3)."""
        pos = np.zeros_like(self.rest_offsets)
        for i in range(1, self.joint_count):
            pos[i] = pos[self.parents[i]] + self.rest_offsets[i]
        return pos


@dataclass(frozen=True)
class RestBoneFrames:
    """Per-joint bone-aligned rest bases, precomputed once per rig.

    frames is (N, 3, 3) with column 0 along the rest bone direction;
    edges[i] = (s, t) is the directed bone edge the frame was built
    from; primary_child[i] is -1 for leaves; fallback_used marks joints
    whose propagated reference was collinear with the bone.
    """

    frames: np.ndarray
    primary_child: np.ndarray
    edges: np.ndarray
    fallback_used: np.ndarray


def _require_keys(obj: dict, keys: set[str], where: str) -> None:
    extra = set(obj) - keys
    if extra:
        raise RigParseError(f"unknown field(s) {sorted(extra)} in {where}")
    missing = keys - set(obj)
    if missing:
        raise RigParseError(f"missing field(s) {sorted(missing)} in {where}")


def _as_vec3(value, where: str) -> np.ndarray:
    if not isinstance(value, list) or len(value) != 3 or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise RigParseError(f"{where} must be a list of 3 numbers")
    return np.asarray(value, dtype=float)


def load_rig(text: str) -> KinematicTree:
    """Parse and validate a rig file."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RigParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise RigParseError("rig document must be a JSON object")
    _require_keys(doc, {"name", "up", "joints"}, "rig document")
    if not isinstance(doc["name"], str):
        raise RigParseError("'name' must be a string")
    up = _as_vec3(doc["up"], "'up'")
    if abs(np.linalg.norm(up) - 1.0) > 1e-6:
        raise RigTopologyError("'up' must be a unit vector (within 1e-6)")
    joints = doc["joints"]
    if not isinstance(joints, list) or not joints:
        raise RigParseError("'joints' must be a non-empty list")

    names: list[str] = []
    parents: list[int] = []
    offsets: list[np.ndarray] = []
    index: dict[str, int] = {}
    for i, j in enumerate(joints):
        if not isinstance(j, dict):
            raise RigParseError(f"joint #{i} must be an object")
        _require_keys(j, {"name", "parent", "offset"}, f"joint #{i}")
        name = j["name"]
        if not isinstance(name, str) or not name:
            raise RigParseError(f"joint #{i} has an invalid name")
        if name in index:
            raise RigTopologyError(f"duplicate joint name '{name}'")
        offset = _as_vec3(j["offset"], f"offset of '{name}'")
        parent = j["parent"]
        if parent is None:
            if i != 0:
                raise RigTopologyError(f"multiple roots: '{name}' has no parent")
            pi = -1
            if np.linalg.norm(offset) != 0.0:
                raise RigTopologyError(f"root '{name}' must have a zero offset")
        else:
            if i == 0:
                raise RigTopologyError(f"first joint '{name}' must be the root (parent null)")
            if not isinstance(parent, str):
                raise RigParseError(f"parent of '{name}' must be a string or null")
            if parent == name:
                raise RigTopologyError(f"cycle: '{name}' is its own parent")
            if parent not in index:
                raise RigTopologyError(
                    f"parent-first order violated: parent '{parent}' of '{name}' "
                    "is not defined earlier"
                )
            pi = index[parent]
            if np.linalg.norm(offset) <= 0.0:
                raise RigTopologyError(f"zero-length bone at '{name}'")
        index[name] = i
        names.append(name)
        parents.append(pi)
        offsets.append(offset)

    return KinematicTree(
        name=doc["name"],
        names=tuple(names),
        parents=np.asarray(parents, dtype=int),
        rest_offsets=np.asarray(offsets, dtype=float),
        up=up,
    )


def load_rig_file(path) -> KinematicTree:
    with open(path, "r", encoding="utf-8") as fh:
        return load_rig(fh.read())


def fixture_rig_text(name: str = "smpl22") -> str:
    """Text of a rig shipped with the package."""
    return resources.files("boneik.rigs").joinpath(f"{name}.json").read_text("utf-8")


def dump_rig(tree: KinematicTree) -> str:
    """Serialize back to the rig-file format (stable byte-for-byte).

    Vectors stay on one line; json.dumps of a float list already uses
    the shortest repr, so load -> dump reproduces a dumped file exactly.
    """
    def vec(v) -> str:
        return json.dumps([float(x) for x in v])

    lines = ["{", f'  "name": {json.dumps(tree.name)},',
             f'  "up": {vec(tree.up)},', '  "joints": [']
    for i in range(tree.joint_count):
        parent = None if tree.parents[i] < 0 else tree.names[tree.parents[i]]
        row = (f'    {{"name": {json.dumps(tree.names[i])}, '
               f'"parent": {json.dumps(parent)}, '
               f'"offset": {vec(tree.rest_offsets[i])}}}')
        lines.append(row + ("," if i + 1 < tree.joint_count else ""))
    lines += ["  ]", "}"]
    return "\n".join(lines) + "\n"


def select_primary_child(tree: KinematicTree, i: int) -> int | None:
    """Child whose offset aligns best with up; ties resolved by longer
    bone, then lower index. None for leaves."""
    best: int | None = None
    best_align = -np.inf
    best_len = -np.inf
    for j in tree.children(i):
        d = tree.rest_offsets[j]
        length = float(np.linalg.norm(d))
        align = float(np.dot(d / length, tree.up))
        if best is None:
            better = True
        elif align > best_align + ALIGNMENT_TIE_TOLERANCE:
            better = True
        elif align >= best_align - ALIGNMENT_TIE_TOLERANCE:
            better = length > best_len
        else:
            better = False
        if better:
            best, best_align, best_len = j, align, length
    return best


def compute_rest_bone_frames(tree: KinematicTree) -> RestBoneFrames:
    """Orthonormal right-handed bases with column 0 along each rest bone.

    The twist reference is the global up for the root and the parent's
    propagated y-axis otherwise; a collinear reference falls back to up.
    Processing is parent-first so the parent's y-axis always exists.
    """
    n = tree.joint_count
    rest = tree.rest_positions()
    frames = np.zeros((n, 3, 3))
    primary = np.full(n, -1, dtype=int)
    edges = np.zeros((n, 2), dtype=int)
    fallback = np.zeros(n, dtype=bool)

    for i in range(n):
        c = select_primary_child(tree, i)
        if c is not None:
            primary[i] = c
            s, t = i, c
        else:
            s, t = int(tree.parents[i]), i
        edges[i] = (s, t)
        bone = rest[t] - rest[s]
        x = bone / np.linalg.norm(bone)

        ref = tree.up if i == 0 else frames[tree.parents[i], :, 1]
        y_raw = ref - np.dot(ref, x) * x
        if np.linalg.norm(y_raw) < COLLINEAR_THRESHOLD * np.linalg.norm(ref):
            fallback[i] = True
            ref = tree.up
            y_raw = ref - np.dot(ref, x) * x
            if np.linalg.norm(y_raw) < COLLINEAR_THRESHOLD * np.linalg.norm(ref):
                raise DegenerateFrameError(
                    f"joint '{tree.names[i]}': reference and fallback are both "
                    "collinear with the bone direction"
                )
        y = y_raw / np.linalg.norm(y_raw)
        z = np.cross(x, y)
        frames[i, :, 0] = x
        frames[i, :, 1] = y
        frames[i, :, 2] = z

    return RestBoneFrames(frames=frames, primary_child=primary, edges=edges, fallback_used=fallback)


def distal_set(tree: KinematicTree) -> set[int]:
    """End effectors and their immediate parents."""
    has_child = np.zeros(tree.joint_count, dtype=bool)
    for i in range(1, tree.joint_count):
        has_child[tree.parents[i]] = True
    leaves = [i for i in range(tree.joint_count) if not has_child[i]]
    out = set(leaves)
    for i in leaves:
        if tree.parents[i] >= 0:
            out.add(int(tree.parents[i]))
    return out
