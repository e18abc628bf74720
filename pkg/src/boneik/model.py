"""Graph-attention IK regressor and the per-joint MLP baseline.

Root-space joint positions go in, bone-aligned world rotations come
out, one forward pass per frame. The graph follows the skeleton:
bidirectional parent-child edges plus self-loops, masked multi-head
attention per layer, a global input shortcut around the stack, and a
local refinement term on distal joints in the later half of the stack.
Everything is built on the autodiff primitives so both losses
backpropagate exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rig import KinematicTree, RestBoneFrames, distal_set

MASK_OFF = -1e9

SIZE_PRESETS = {
    "tiny": (32, 2, 4),
    "small": (64, 3, 4),
    "base": (128, 4, 8),
}

GRAPH_MODES = ("bidirectional", "unidirectional", "fully-connected")

# Head bias producing the identity rotation through the 6D map, so an
# untrained model is never degenerate.
IDENTITY_6D = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


class TransferNameError(KeyError):
    """A name in an embedding-transfer map matches no joint."""


@dataclass(frozen=True)
class GraphTopology:
    """Directed message-passing structure over the skeleton.

    edges are (sender, receiver) pairs and always include self-loops.
    mask is the additive attention mask: row = receiver, column =
    sender, 0 on edges and a large negative constant elsewhere.
    """

    mode: str
    n: int
    edges: frozenset
    neighbors: tuple
    mask: np.ndarray


@dataclass(frozen=True)
class ModelConfig:
    hidden: int
    depth: int
    heads: int
    dropout: float = 0.1
    alpha: float = 0.1
    use_positional_embedding: bool = True
    use_global_shortcut: bool = True
    use_local_refinement: bool = True
    graph_mode: str = "bidirectional"
    preset: str | None = None

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.graph_mode not in GRAPH_MODES:
            raise ValueError(f"unknown graph mode '{self.graph_mode}'")

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "ModelConfig":
        hidden, depth, heads = SIZE_PRESETS[name]
        kw = dict(hidden=hidden, depth=depth, heads=heads, preset=name)
        kw.update(overrides)
        return cls(**kw)


def build_topology(tree: KinematicTree, mode: str = "bidirectional") -> GraphTopology:
    n = tree.joint_count
    edges = {(i, i) for i in range(n)}
    if mode == "bidirectional":
        for i in range(1, n):
            p = int(tree.parents[i])
            edges.add((p, i))
            edges.add((i, p))
    elif mode == "unidirectional":
        for i in range(1, n):
            edges.add((int(tree.parents[i]), i))
    elif mode == "fully-connected":
        edges = {(j, i) for i in range(n) for j in range(n)}
    else:
        raise ValueError(f"unknown graph mode '{mode}'")

    mask = np.full((n, n), MASK_OFF)
    for j, i in edges:
        mask[i, j] = 0.0
    neighbors = tuple(
        tuple(j for j in range(n) if (j, i) in edges) for i in range(n)
    )
    return GraphTopology(mode=mode, n=n, edges=frozenset(edges),
                         neighbors=neighbors, mask=mask)


def _uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(3.0 / fan_in)
    return ((rng.random(shape) * 2.0 - 1.0) * bound).astype(dtype)


def init_params(config: ModelConfig, n_joints: int, rng: np.random.Generator,
                kind: str = "gat", dtype=np.float32) -> dict[str, Tensor]:
    """Fresh parameter set; draw order is fixed for reproducibility."""
    f = config.hidden
    fh = f // config.heads
    p: dict[str, np.ndarray] = {}
    p["w_in"] = _uniform(rng, (f, 3), 3, dtype)
    p["embed"] = rng.normal(0.0, 0.02, (n_joints, f)).astype(dtype)
    if kind == "gat":
        for l in range(config.depth):
            p[f"gat{l}.w"] = _uniform(rng, (f, f), f, dtype)
            p[f"gat{l}.a_src"] = _uniform(rng, (config.heads, fh), fh, dtype)
            p[f"gat{l}.a_dst"] = _uniform(rng, (config.heads, fh), fh, dtype)
            p[f"gat{l}.ln_gain"] = np.ones(f, dtype=dtype)
            p[f"gat{l}.ln_bias"] = np.zeros(f, dtype=dtype)
        p["w_loc"] = _uniform(rng, (f, f), f, dtype)
        p["w_skip"] = _uniform(rng, (f, 3), 3, dtype)
    elif kind == "mlp":
        for l in range(config.depth):
            p[f"blk{l}.w1"] = _uniform(rng, (f, f), f, dtype)
            p[f"blk{l}.b1"] = np.zeros(f, dtype=dtype)
            p[f"blk{l}.w2"] = _uniform(rng, (f, f), f, dtype)
            p[f"blk{l}.b2"] = np.zeros(f, dtype=dtype)
            p[f"blk{l}.ln_gain"] = np.ones(f, dtype=dtype)
            p[f"blk{l}.ln_bias"] = np.zeros(f, dtype=dtype)
    else:
        raise ValueError(f"unknown model kind '{kind}'")
    p["head.w"] = _uniform(rng, (6, f), f, dtype)
    p["head.b"] = np.asarray(IDENTITY_6D, dtype=dtype)
    return {name: Tensor(arr, requires_grad=True) for name, arr in p.items()}


def param_count(params: dict[str, Tensor]) -> int:
    return sum(t.data.size for t in params.values())


def _as_input(positions) -> tuple[Tensor, bool]:
    if isinstance(positions, Tensor):
        x = positions
    else:
        x = Tensor(np.asarray(positions))
    batched = x.data.ndim == 3
    if not batched:
        x = ad.reshape(x, (1,) + x.shape)
    return x, batched


def embed(params: dict[str, Tensor], config: ModelConfig, positions) -> Tensor:
    """Initial features: linear projection of positions plus a learned
    per-joint embedding (when enabled)."""
    x, _ = _as_input(positions)
    h = ad.matmul(x, ad.transpose(params["w_in"]))
    if config.use_positional_embedding:
        h = ad.add(h, params["embed"])
    return h


def gat_layer(params: dict[str, Tensor], layer: int, topo: GraphTopology,
              h: Tensor, config: ModelConfig, rng=None, training: bool = False
              ) -> tuple[Tensor, np.ndarray]:
    """One masked multi-head attention block.

    Returns the new features and the post-softmax attention weights
    (batch, heads, receiver, sender) before dropout.
    """
    b, n, f = h.shape
    heads, fh = config.heads, f // config.heads
    hw = ad.matmul(h, ad.transpose(params[f"gat{layer}.w"]))
    hw = ad.transpose(ad.reshape(hw, (b, n, heads, fh)), (0, 2, 1, 3))

    a_src = ad.reshape(params[f"gat{layer}.a_src"], (heads, 1, fh))
    a_dst = ad.reshape(params[f"gat{layer}.a_dst"], (heads, 1, fh))
    score_dst = ad.tsum(ad.mul(hw, a_dst), axis=-1, keepdims=True)
    score_src = ad.transpose(ad.tsum(ad.mul(hw, a_src), axis=-1, keepdims=True))
    logits = ad.leaky_relu(ad.add(score_dst, score_src))
    attn = ad.softmax(logits, mask=topo.mask, axis=-1)
    attn_out = attn.data.copy()
    if training:
        attn = ad.dropout(attn, config.dropout, rng, training)
    msg = ad.matmul(attn, hw)
    msg = ad.reshape(ad.transpose(msg, (0, 2, 1, 3)), (b, n, f))
    out = ad.elu(msg)
    if training:
        out = ad.dropout(out, config.dropout, rng, training)
    out = ad.layernorm(out, params[f"gat{layer}.ln_gain"], params[f"gat{layer}.ln_bias"])
    return out, attn_out


def _neighbor_mean_ops(tree: KinematicTree):
    # Flattened (member -> joint) gather/scatter plan for the K(i) mean:
    # parent if present, plus all children.
    members = []
    owners = []
    for i in range(tree.joint_count):
        k = ([int(tree.parents[i])] if tree.parents[i] >= 0 else []) + tree.children(i)
        members.extend(k)
        owners.extend([i] * len(k))
    counts = np.bincount(owners, minlength=tree.joint_count).astype(float)
    return np.asarray(members), np.asarray(owners), counts[:, None]


def local_refinement(params: dict[str, Tensor], tree: KinematicTree,
                     h: Tensor, dtype) -> Tensor:
    """Distal correction from the mean of each joint's immediate
    kinematic neighborhood, masked to end effectors and their parents."""
    members, owners, counts = _neighbor_mean_ops(tree)
    gathered = ad.index_select(h, members, axis=1)
    summed = ad.segment_sum(gathered, owners, tree.joint_count, axis=1)
    mean = ad.mul(summed, Tensor((1.0 / counts).astype(dtype)))
    delta = ad.matmul(ad.sub(mean, h), ad.transpose(params["w_loc"]))
    dmask = np.zeros((tree.joint_count, 1), dtype=dtype)
    dmask[sorted(distal_set(tree))] = 1.0
    return ad.mul(delta, Tensor(dmask))


def rot_from_6d_t(six: Tensor) -> Tensor:
    """Differentiable 6D -> rotation: normalize, reject, cross.

    six is (..., 6); the result is (..., 3, 3) with the two normalized
    directions as the first two columns.
    """
    a1 = ad.index_select(six, [0, 1, 2], axis=-1)
    a2 = ad.index_select(six, [3, 4, 5], axis=-1)
    x = ad.div(a1, ad.l2_norm(a1, keepdims=True))
    dot = ad.tsum(ad.mul(a2, x), axis=-1, keepdims=True)
    y_raw = ad.sub(a2, ad.mul(dot, x))
    y = ad.div(y_raw, ad.l2_norm(y_raw, keepdims=True))
    z = ad.cross_product(x, y)
    rows = ad.concat([x, y, z], axis=-1)
    return ad.transpose(ad.reshape(rows, six.shape[:-1] + (3, 3)))


def forward(params: dict[str, Tensor], config: ModelConfig, topo: GraphTopology,
            tree: KinematicTree, positions, rng=None, training: bool = False
            ) -> tuple[Tensor, list[np.ndarray]]:
    """Full regressor: positions (..., N, 3) to bone-aligned rotations
    (..., N, 3, 3) plus the per-layer attention stack."""
    x, batched = _as_input(positions)
    h = embed(params, config, x)
    dtype = h.data.dtype
    refine_from = math.ceil(config.depth / 2)
    attn_stack = []
    for l in range(config.depth):
        out, attn = gat_layer(params, l, topo, h, config, rng, training)
        if config.use_local_refinement and l >= refine_from:
            out = ad.add(out, local_refinement(params, tree, h, dtype))
        h = out
        attn_stack.append(attn)
    if config.use_global_shortcut:
        h = ad.add(h, ad.matmul(x, ad.transpose(params["w_skip"])))
    six = ad.add(ad.matmul(h, ad.transpose(params["head.w"])), params["head.b"])
    bone = rot_from_6d_t(six)
    if not batched:
        bone = ad.reshape(bone, bone.shape[1:])
        attn_stack = [a[0] for a in attn_stack]
    return bone, attn_stack


def mlp_forward(params: dict[str, Tensor], config: ModelConfig, positions,
                rng=None, training: bool = False) -> Tensor:
    """Per-joint baseline: embedding plus residual feed-forward blocks,
    no communication between joints."""
    x, batched = _as_input(positions)
    h = ad.matmul(x, ad.transpose(params["w_in"]))
    if config.use_positional_embedding:
        h = ad.add(h, params["embed"])
    for l in range(config.depth):
        ff = ad.add(ad.matmul(h, ad.transpose(params[f"blk{l}.w1"])), params[f"blk{l}.b1"])
        ff = ad.add(ad.matmul(ad.elu(ff), ad.transpose(params[f"blk{l}.w2"])),
                    params[f"blk{l}.b2"])
        if training:
            ff = ad.dropout(ff, config.dropout, rng, training)
        h = ad.layernorm(ad.add(h, ff), params[f"blk{l}.ln_gain"], params[f"blk{l}.ln_bias"])
    six = ad.add(ad.matmul(h, ad.transpose(params["head.w"])), params["head.b"])
    bone = rot_from_6d_t(six)
    if not batched:
        bone = ad.reshape(bone, bone.shape[1:])
    return bone


def geodesic_loss(pred_bone: Tensor, gt_bone) -> Tensor:
    """Mean geodesic distance in radians, over all joints and frames."""
    gt = gt_bone if isinstance(gt_bone, Tensor) else Tensor(np.asarray(gt_bone))
    tr = ad.tsum(ad.mul(pred_bone, gt), axis=(-1, -2))
    return ad.tmean(ad.arccos_clamped((tr - 1.0) * 0.5))


def fk_consistency_loss(pred_bone: Tensor, tree: KinematicTree,
                        frames: RestBoneFrames, input_positions) -> Tensor:
    """Mean squared distance between input joints and the joints
    reproduced from the prediction, rig units squared.

    Follows the full analytic path: world from bone, locals from world,
    then forward kinematics, all as differentiable matrix products.
    """
    dtype = pred_bone.data.dtype
    batched = pred_bone.data.ndim == 4
    bone = pred_bone if batched else ad.reshape(pred_bone, (1,) + pred_bone.shape)
    target = np.asarray(input_positions, dtype=dtype).reshape(bone.shape[0], -1, 3)
    n = tree.joint_count

    world = ad.matmul(bone, Tensor(np.swapaxes(frames.frames, -1, -2).astype(dtype)))
    w = [ad.index_select(world, [i], axis=1) for i in range(n)]
    locs = [w[0]]
    for i in range(1, n):
        p = int(tree.parents[i])
        locs.append(ad.matmul(ad.transpose(w[p]), w[i]))

    wfk = [locs[0]]
    zero = Tensor(np.zeros((bone.shape[0], 1, 3), dtype=dtype))
    pos = [zero]
    offs = tree.rest_offsets.astype(dtype)
    for i in range(1, n):
        p = int(tree.parents[i])
        wfk.append(ad.matmul(wfk[p], locs[i]))
        step = ad.reshape(ad.matmul(wfk[p], Tensor(offs[i][:, None])), (bone.shape[0], 1, 3))
        pos.append(ad.add(pos[p], step))
    rebuilt = ad.concat(pos, axis=1)
    diff = ad.sub(rebuilt, Tensor(target))
    return ad.tmean(ad.tsum(ad.mul(diff, diff), axis=-1))


def total_loss(pred_bone: Tensor, gt_bone, tree: KinematicTree,
               frames: RestBoneFrames, input_positions, alpha: float
               ) -> tuple[Tensor, float, float]:
    """Rotation loss plus weighted FK consistency; returns the scalar
    graph node and both component values."""
    l_rot = geodesic_loss(pred_bone, gt_bone)
    if alpha == 0.0:
        return l_rot, float(l_rot.data), 0.0
    l_fk = fk_consistency_loss(pred_bone, tree, frames, input_positions)
    total = ad.add(l_rot, l_fk * alpha)
    return total, float(l_rot.data), float(l_fk.data)


def attention_flow(attn_stack: list[np.ndarray]) -> np.ndarray:
    """Head-averaged attention rolled through the stack.

    Each input is (..., heads, N, N) and row-stochastic; the result is
    the (N, N) product of the layer averages, last layer first, so row
    i says how much each input joint contributed to output joint i.
    """
    flow = None
    for a in attn_stack:
        a = np.asarray(a, dtype=np.float64)
        layer = a.mean(axis=tuple(range(a.ndim - 2)))
        flow = layer if flow is None else layer @ flow
    if flow is None:
        raise ValueError("empty attention stack")
    return flow


def transfer_embeddings(source_params: dict[str, Tensor], source_tree: KinematicTree,
                        dest_tree: KinematicTree, name_map: dict[str, str]
                        ) -> dict[str, Tensor]:
    """Re-seed a model on a new rig: copy every joint-count-independent
    tensor, remap embedding rows by joint name, zero the rest."""
    src_index = {nm: i for i, nm in enumerate(source_tree.names)}
    dst_index = {nm: i for i, nm in enumerate(dest_tree.names)}
    for dst, src in name_map.items():
        if dst not in dst_index:
            raise TransferNameError(f"destination joint '{dst}' not in rig '{dest_tree.name}'")
        if src not in src_index:
            raise TransferNameError(f"source joint '{src}' not in rig '{source_tree.name}'")
    out: dict[str, Tensor] = {}
    for name, t in source_params.items():
        if name == "embed":
            emb = np.zeros((dest_tree.joint_count, t.data.shape[1]), dtype=t.data.dtype)
            for dst, src in name_map.items():
                emb[dst_index[dst]] = t.data[src_index[src]]
            out[name] = Tensor(emb, requires_grad=True)
        else:
            out[name] = Tensor(t.data.copy(), requires_grad=True)
    return out


CHECKPOINT_FORMAT = "boneik-checkpoint-v1"


def save_checkpoint(path, params: dict[str, Tensor], config: ModelConfig,
                    rig_name: str, n_joints: int, kind: str = "gat") -> None:
    """One JSON header line, then all tensors as little-endian float32.

    Offsets are byte positions into the payload; tensor order is the
    sorted name order, so the file is a pure function of its contents.
    """
    manifest = []
    offset = 0
    blobs = []
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    header = {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "config": asdict(config),
        "rig": rig_name,
        "joints": n_joints,
        "tensors": manifest,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    """Returns (params, config, kind, rig_name, n_joints)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint file (format {header.get('format')!r})")
    config = ModelConfig(**header["config"])
    params: dict[str, Tensor] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=int))
        arr = np.frombuffer(payload, dtype="<f4", count=count,
                            offset=entry["offset"]).reshape(shape)
        params[entry["name"]] = Tensor(arr.copy(), requires_grad=True)
    return params, config, header["kind"], header["rig"], header["joints"]
