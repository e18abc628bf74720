import numpy as np
import pytest

from boneik import rig


@pytest.fixture(scope="session")
def smpl():
    return rig.load_rig(rig.fixture_rig_text("smpl22"))


@pytest.fixture(scope="session")
def smpl_frames(smpl):
    return rig.compute_rest_bone_frames(smpl)


ARM_TEXT = """
{
  "name": "arm4",
  "up": [0.0, 1.0, 0.0],
  "joints": [
    {"name": "base", "parent": null, "offset": [0.0, 0.0, 0.0]},
    {"name": "upper", "parent": "base", "offset": [0.18, 0.24, 0.0]},
    {"name": "lower", "parent": "upper", "offset": [0.06, 0.28, 0.05]},
    {"name": "tip", "parent": "lower", "offset": [-0.04, 0.22, 0.03]}
  ]
}
"""


@pytest.fixture(scope="session")
def arm():
    return rig.load_rig(ARM_TEXT)


@pytest.fixture(scope="session")
def arm_frames(arm):
    return rig.compute_rest_bone_frames(arm)


def random_locals(tree, frame_count, seed, max_angle=np.pi):
    from boneik import so3

    rng = np.random.default_rng(seed)
    n = tree.joint_count
    r = so3.random_rotation(rng, max_angle, count=frame_count * n)
    return r.reshape(frame_count, n, 3, 3)


def rms_distance(pred, gt):
    return float(np.sqrt(np.mean(np.sum((pred - gt) ** 2, axis=-1))))


def oracle_align_rms(pred, gt):
    """Best similarity-aligned RMS by derivative-free search.

    Independent of the closed-form alignment: Powell over
    (log scale, rotation vector, translation), restarted from a fixed
    grid of rotation seeds so no basin is missed.
    """
    from scipy.optimize import minimize

    from boneik import so3

    def objective(p):
        s = np.exp(p[0])
        w = p[1:4]
        th = np.linalg.norm(w)
        r = np.eye(3) if th < 1e-12 else so3.axis_angle_to_matrix(w / th, th)
        return rms_distance(s * pred @ r.T + p[4:7], gt)

    seeds = [np.zeros(3)]
    for mag in (np.pi / 2, np.pi * 0.95):
        for e in np.concatenate([np.eye(3), -np.eye(3)]):
            seeds.append(mag * e)
    best = np.inf
    for w0 in seeds:
        p0 = np.zeros(7)
        p0[1:4] = w0
        res = minimize(objective, p0, method="Powell",
                       options={"xtol": 1e-12, "ftol": 1e-14, "maxiter": 20000})
        best = min(best, res.fun)
    return float(best)
