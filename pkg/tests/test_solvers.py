import numpy as np
import pytest

from boneik import dataio, model, so3, solvers


def target_pose(tree, frame_count=3, seed=42, caps=1.0):
    ds = dataio.generate_synthetic(tree, frame_count, seed, caps)
    return ds


def checkpoints_residuals(cps):
    return np.stack([np.atleast_1d(c.residual) for c in cps])


def test_solve_config_validation():
    with pytest.raises(ValueError):
        solvers.SolveConfig(max_iters=0)
    with pytest.raises(ValueError):
        solvers.SolveConfig(tolerance=0.0)


def test_gradient_ik_converges_and_is_monotone(arm, arm_frames):
    ds = target_pose(arm)
    cfg = solvers.SolveConfig(max_iters=150, checkpoints=(1, 10, 50, 100, 150))
    cps = solvers.gradient_ik(arm, arm_frames, ds.positions, cfg)
    assert [c.iteration for c in cps] == [1, 10, 50, 100, 150]
    res = checkpoints_residuals(cps)
    assert np.all(np.diff(res, axis=0) <= 0.0)
    assert np.all(res[-1] < 0.01)
    assert np.all(res[0] > res[-1])
    for c in cps:
        assert c.locals.shape == (3, arm.joint_count, 3, 3)
        assert so3.is_rotation(c.locals)


def test_gradient_ik_single_frame_squeezes(arm, arm_frames):
    ds = target_pose(arm, frame_count=1)
    cfg = solvers.SolveConfig(max_iters=20, checkpoints=(5, 20))
    cps = solvers.gradient_ik(arm, arm_frames, ds.positions[0], cfg)
    assert cps[0].locals.shape == (arm.joint_count, 3, 3)
    assert np.ndim(cps[0].residual) == 0


def test_gradient_ik_stops_at_solution(arm, arm_frames):
    ds = target_pose(arm, frame_count=2)
    init = ds.local_matrices()
    cfg = solvers.SolveConfig(max_iters=50, checkpoints=(1, 25, 50))
    cps = solvers.gradient_ik(arm, arm_frames, ds.positions, cfg,
                              init_locals=init)
    # already solved: the loop exits before iterating, and every
    # requested checkpoint is still reported
    assert [c.iteration for c in cps] == [1, 25, 50]
    for c in cps:
        assert np.all(c.residual < 1e-12)
        assert np.array_equal(c.locals, init)


def test_gradient_ik_rest_targets_from_identity(arm, arm_frames):
    rest = np.broadcast_to(arm.rest_positions(), (2, arm.joint_count, 3))
    cfg = solvers.SolveConfig(max_iters=10, checkpoints=(1, 10))
    cps = solvers.gradient_ik(arm, arm_frames, rest, cfg)
    assert np.all(checkpoints_residuals(cps) == 0.0)


def test_ccd_ik_converges_on_folded_pose(arm, arm_frames):
    ds = target_pose(arm)
    cfg = solvers.SolveConfig(max_iters=60, checkpoints=(1, 10, 30, 60))
    cps = solvers.ccd_ik(arm, arm_frames, ds.positions, cfg)
    res = checkpoints_residuals(cps)
    assert np.all(np.diff(res, axis=0) <= 0.0)
    assert np.all(res[-1] < 1e-3)
    for c in cps:
        assert so3.is_rotation(c.locals)


def test_ccd_ik_beats_gradient_at_small_budgets(arm, arm_frames):
    # closed-form per-joint alignment converges in far fewer sweeps
    ds = target_pose(arm)
    cfg = solvers.SolveConfig(max_iters=30, checkpoints=(30,))
    grad = solvers.gradient_ik(arm, arm_frames, ds.positions, cfg)[-1]
    ccd = solvers.ccd_ik(arm, arm_frames, ds.positions, cfg)[-1]
    assert np.mean(ccd.residual) < np.mean(grad.residual)


def test_ccd_ik_solved_init_stays_solved(arm, arm_frames):
    ds = target_pose(arm, frame_count=2)
    init = ds.local_matrices()
    cfg = solvers.SolveConfig(max_iters=20, checkpoints=(1, 20))
    cps = solvers.ccd_ik(arm, arm_frames, ds.positions, cfg, init_locals=init)
    assert np.all(checkpoints_residuals(cps) < 1e-12)


def test_budget_sweep_rows(arm, arm_frames):
    ds = target_pose(arm, frame_count=2)
    paired = dataio.to_paired(ds, arm, arm_frames)
    cfg = solvers.SolveConfig(max_iters=10, checkpoints=(1, 10))
    rows = solvers.budget_sweep(arm, arm_frames, paired, config=cfg)
    assert [(r["solver"], r["iteration"]) for r in rows] == [
        ("gradient", 1), ("gradient", 10), ("ccd", 1), ("ccd", 10)]
    for r in rows:
        assert set(r) == {"solver", "iteration", "mpjae_deg", "mpjpe_mm"}
        assert r["mpjpe_mm"] >= 0.0
    # more iterations never hurt the position metric
    assert rows[1]["mpjpe_mm"] <= rows[0]["mpjpe_mm"]
    assert rows[3]["mpjpe_mm"] <= rows[2]["mpjpe_mm"]


def test_budget_sweep_model_row_and_filtering(arm, arm_frames):
    ds = target_pose(arm, frame_count=2)
    paired = dataio.to_paired(ds, arm, arm_frames)
    cfg = solvers.SolveConfig(max_iters=5, checkpoints=(5,))
    mconf = model.ModelConfig(hidden=8, depth=1, heads=2)
    params = model.init_params(mconf, arm.joint_count, np.random.default_rng(0))
    rows = solvers.budget_sweep(arm, arm_frames, paired, params=params,
                                model_config=mconf, config=cfg,
                                which=("ccd",))
    assert [(r["solver"], r["iteration"]) for r in rows] == [
        ("ccd", 5), ("model", 1)]


def test_budget_sweep_rejects_unknown_solver(arm, arm_frames):
    ds = target_pose(arm, frame_count=1)
    paired = dataio.to_paired(ds, arm, arm_frames)
    with pytest.raises(ValueError, match="newton"):
        solvers.budget_sweep(arm, arm_frames, paired, which=("newton",))


def test_budget_to_csv_layout():
    rows = [{"solver": "ccd", "iteration": 10, "mpjae_deg": 2.5,
             "mpjpe_mm": 12.0}]
    text = solvers.budget_to_csv(rows)
    assert text.splitlines() == [
        "solver,iteration,mpjae_deg,mpjpe_mm",
        "ccd,10,2.5,12.0",
    ]
