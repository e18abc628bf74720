"""Training: AdamW with selective decay, early stopping on validation
angular error, batched evaluation.

Runs are single threaded and fully determined by the seed: parameter
init, shuffling, and dropout all draw from one generator in a fixed
order.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import metrics, model
from .autodiff import Tape, Tensor, backward
from .kinematics import fk, recover_local, recover_world
from .rig import KinematicTree, RestBoneFrames


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 30
    patience: int = 3
    lr: float = 0.001
    weight_decay: float = 0.01
    seed: int = 0
    alpha: float = 0.1

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


def no_decay_names(params: dict[str, Tensor]) -> set[str]:
    """Biases, layernorm gains/biases, and the joint embedding table."""
    out = set()
    for name in params:
        if name == "embed" or name.endswith((".b", ".b1", ".b2", ".ln_gain", ".ln_bias")):
            out.add(name)
    return out


@dataclass
class OptimState:
    lr: float
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    no_decay: set = field(default_factory=set)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_optim(params: dict[str, Tensor], lr: float, weight_decay: float) -> OptimState:
    state = OptimState(lr=lr, weight_decay=weight_decay, no_decay=no_decay_names(params))
    for name, t in params.items():
        state.m[name] = np.zeros_like(t.data)
        state.v[name] = np.zeros_like(t.data)
    return state


def adamw_step(state: OptimState, params: dict[str, Tensor],
               grads: dict[str, np.ndarray]) -> None:
    """One decoupled-decay Adam update, in place.

    Decay multiplies the pre-update parameter value and skips the
    no-decay set entirely.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, t in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.data)
        if g.shape != t.data.shape:
            raise ValueError(f"gradient shape {g.shape} for '{name}' {t.data.shape}")
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay and name not in state.no_decay:
            update = update + state.weight_decay * t.data
        t.data = t.data - state.lr * update


def predict(params: dict[str, Tensor], config: model.ModelConfig, kind: str,
            tree: KinematicTree, positions: np.ndarray, batch: int = 256) -> np.ndarray:
    """Bone-aligned rotations for a stack of frames, no gradients."""
    topo = model.build_topology(tree, config.graph_mode) if kind == "gat" else None
    out = []
    for start in range(0, positions.shape[0], batch):
        x = positions[start:start + batch]
        if kind == "gat":
            bone, _ = model.forward(params, config, topo, tree, x)
        else:
            bone = model.mlp_forward(params, config, x)
        out.append(bone.data)
    return np.concatenate(out, axis=0)


def validation_mpjae(params, config, kind, tree: KinematicTree,
                     frames: RestBoneFrames, dataset) -> float:
    pred = predict(params, config, kind, tree, dataset.positions)
    return metrics.mpjae(pred, dataset.bone, tree, frames)


def evaluate(params, config, kind, tree: KinematicTree, frames: RestBoneFrames,
             dataset) -> metrics.EvalReport:
    """Full metric suite: rotations against ground truth, positions of
    the re-run FK against the clean reference positions."""
    if dataset.positions.shape[1] != tree.joint_count:
        raise ValueError(
            f"dataset has {dataset.positions.shape[1]} joints, rig has {tree.joint_count}")
    pred = predict(params, config, kind, tree, dataset.positions)
    locs = recover_local(recover_world(pred, frames), tree)
    pred_pos = fk(tree, locs).positions
    return metrics.full_report(tree, frames, pred, dataset.bone,
                               pred_pos, dataset.gt_positions)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_mpjae: float


def history_to_csv(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_mpjae"])
    for rec in history:
        w.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_mpjae)])
    return buf.getvalue()


def train(tree: KinematicTree, frames: RestBoneFrames, config: model.ModelConfig,
          tconf: TrainConfig, train_set, val_set, kind: str = "gat",
          initial_params: dict[str, Tensor] | None = None):
    """Minibatch training with early stopping.

    Returns (best_params, history, best_epoch). The best checkpoint is
    the epoch with the lowest validation angular error seen; training
    stops once `patience` consecutive epochs fail to improve on it
    strictly.
    """
    if train_set.positions.shape[0] == 0 or val_set.positions.shape[0] == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(tconf.seed)
    params = initial_params if initial_params is not None else model.init_params(
        config, tree.joint_count, rng, kind=kind)
    topo = model.build_topology(tree, config.graph_mode) if kind == "gat" else None
    state = init_optim(params, tconf.lr, tconf.weight_decay)

    n = train_set.positions.shape[0]
    best_val = np.inf
    best_epoch = 0
    best_params = None
    streak = 0
    history: list[EpochRecord] = []

    for epoch in range(1, tconf.max_epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for bi, start in enumerate(range(0, n, tconf.batch_size)):
            idx = order[start:start + tconf.batch_size]
            x = train_set.positions[idx]
            gt = train_set.bone[idx]
            for t in params.values():
                t.grad = None
            with Tape() as tape:
                if kind == "gat":
                    bone, _ = model.forward(params, config, topo, tree, x,
                                            rng=rng, training=True)
                else:
                    bone = model.mlp_forward(params, config, x, rng=rng, training=True)
                loss, _, _ = model.total_loss(bone, gt, tree, frames, x, tconf.alpha)
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {bi}")
            backward(tape, loss)
            grads = {name: t.grad for name, t in params.items() if t.grad is not None}
            adamw_step(state, params, grads)
            loss_sum += value * len(idx)

        val = validation_mpjae(params, config, kind, tree, frames, val_set)
        history.append(EpochRecord(epoch=epoch, train_loss=loss_sum / n, val_mpjae=val))
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_params = {k: Tensor(t.data.copy(), requires_grad=True)
                           for k, t in params.items()}
            streak = 0
        else:
            streak += 1
            if streak == tconf.patience:
                break

    return best_params, history, best_epoch
