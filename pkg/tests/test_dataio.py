import numpy as np
import pytest

from boneik import dataio, model, so3, train
from boneik.kinematics import bone_from_world, fk


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


HEADER = '{"rig": "arm4", "n": 4, "format": "quat-wxyz", "units": "m"}'
IDENT = "[1.0, 0.0, 0.0, 0.0]"
IDENT_FRAME = "[" + ", ".join([IDENT] * 4) + "]"


def test_write_read_write_is_byte_identical(tmp_path, arm):
    ds = dataio.generate_synthetic(arm, 6, seed=3, angle_caps=1.2, smoothing=0.4)
    first = tmp_path / "a.jsonl"
    second = tmp_path / "b.jsonl"
    dataio.write_motion(first, ds)
    back = dataio.read_motion(first)
    dataio.write_motion(second, back)
    assert first.read_bytes() == second.read_bytes()
    assert back.rig == ds.rig
    assert np.array_equal(back.quats, ds.quats)
    assert np.array_equal(back.positions, ds.positions)


def test_position_only_round_trip(tmp_path, arm):
    ds = dataio.generate_synthetic(arm, 3, seed=4, angle_caps=1.0)
    pos_only = dataio.MotionDataset(rig=ds.rig, quats=None, positions=ds.positions)
    path = tmp_path / "p.jsonl"
    dataio.write_motion(path, pos_only)
    back = dataio.read_motion(path)
    assert back.quats is None
    assert np.array_equal(back.positions, ds.positions)
    with pytest.raises(ValueError, match="position-only"):
        back.local_matrices()


def test_rejects_bad_headers(tmp_path):
    cases = [
        "not json",
        '{"rig": "a", "n": 4, "format": "quat-wxyz"}',
        '{"rig": "a", "n": 4, "format": "quat-wxyz", "units": "m", "x": 1}',
        '{"rig": "a", "n": 4, "format": "euler-xyz", "units": "m"}',
        '{"rig": "a", "n": 4, "format": "quat-wxyz", "units": "cm"}',
        '{"rig": "a", "n": 0, "format": "quat-wxyz", "units": "m"}',
        '{"rig": "a", "n": 4.0, "format": "quat-wxyz", "units": "m"}',
    ]
    for header in cases:
        path = tmp_path / "bad.jsonl"
        write_lines(path, [header])
        with pytest.raises(dataio.MotionParseError):
            dataio.read_motion(path)


def test_rejects_malformed_records(tmp_path):
    bad_records = [
        "not json",
        '{"q": ' + IDENT_FRAME + ', "extra": 1}',
        '{"p": [[0.0, 0.0, 0.0]]}',
        '{"q": [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], '
        + IDENT + ", " + IDENT + "]}",
        '{"q": [' + ", ".join([IDENT] * 3) + "]}",
    ]
    for rec in bad_records:
        path = tmp_path / "bad.jsonl"
        write_lines(path, [HEADER, rec])
        with pytest.raises(dataio.MotionParseError):
            dataio.read_motion(path)


def test_rejects_positions_on_some_frames_only(tmp_path):
    zeros = "[" + ", ".join(["[0.0, 0.0, 0.0]"] * 4) + "]"
    write_lines(tmp_path / "m.jsonl", [
        HEADER,
        '{"q": ' + IDENT_FRAME + ', "p": ' + zeros + "}",
        '{"q": ' + IDENT_FRAME + "}",
    ])
    with pytest.raises(dataio.MotionParseError, match="some frames"):
        dataio.read_motion(tmp_path / "m.jsonl")


def test_quat_norm_policy(tmp_path):
    # far off unit: reject outright
    bad = "[0.9, 0.1, 0.0, 0.0]"
    write_lines(tmp_path / "far.jsonl", [
        HEADER,
        '{"q": [' + ", ".join([IDENT] * 3 + [bad]) + "]}",
    ])
    with pytest.raises(dataio.MotionParseError, match="norm"):
        dataio.read_motion(tmp_path / "far.jsonl")

    # slightly off (inside tolerance): silently renormalized to unit
    s = 1.0 + 5e-5
    drift = repr([s, 0.0, 0.0, 0.0]).replace("'", "")
    write_lines(tmp_path / "near.jsonl", [
        HEADER,
        '{"q": [' + ", ".join([IDENT] * 3 + [drift]) + "]}",
    ])
    ds = dataio.read_motion(tmp_path / "near.jsonl")
    norms = np.linalg.norm(ds.quats, axis=-1)
    assert np.max(np.abs(norms - 1.0)) < 1e-12
    # exact rows are left untouched so round trips stay byte-stable
    assert ds.quats[0, 0, 0] == 1.0


def test_blank_lines_are_skipped(tmp_path):
    write_lines(tmp_path / "m.jsonl", [
        HEADER,
        '{"q": ' + IDENT_FRAME + "}",
        "",
        '{"q": ' + IDENT_FRAME + "}",
    ])
    ds = dataio.read_motion(tmp_path / "m.jsonl")
    assert ds.frame_count == 2


def test_generate_is_deterministic_and_capped(arm):
    caps = np.array([2.0, 1.0, 0.5, 0.25])
    a = dataio.generate_synthetic(arm, 20, seed=7, angle_caps=caps)
    b = dataio.generate_synthetic(arm, 20, seed=7, angle_caps=caps)
    assert np.array_equal(a.quats, b.quats)
    assert np.array_equal(a.positions, b.positions)
    c = dataio.generate_synthetic(arm, 20, seed=8, angle_caps=caps)
    assert not np.array_equal(a.quats, c.quats)

    _, angles = so3.matrix_to_axis_angle(a.local_matrices())
    assert np.all(angles.reshape(20, 4) <= caps[None, :] + 1e-12)


def test_generate_frames_independent_of_frame_count(arm):
    # frame f draws from its own stream, so a longer clip shares its prefix
    short = dataio.generate_synthetic(arm, 5, seed=9, angle_caps=1.5)
    long = dataio.generate_synthetic(arm, 12, seed=9, angle_caps=1.5)
    assert np.array_equal(short.quats, long.quats[:5])


def test_generate_smoothing_shrinks_steps(arm):
    raw = dataio.generate_synthetic(arm, 30, seed=10, angle_caps=2.0)
    smooth = dataio.generate_synthetic(arm, 30, seed=10, angle_caps=2.0,
                                       smoothing=0.9)
    assert np.array_equal(raw.quats[0], smooth.quats[0])

    def mean_step(ds):
        r = ds.local_matrices()
        rel = np.swapaxes(r[:-1], -1, -2) @ r[1:]
        return so3.matrix_to_axis_angle(rel)[1].mean()

    assert mean_step(smooth) < 0.3 * mean_step(raw)


def test_generate_validates_arguments(arm):
    with pytest.raises(ValueError, match="caps"):
        dataio.generate_synthetic(arm, 2, seed=0, angle_caps=0.0)
    with pytest.raises(ValueError, match="caps"):
        dataio.generate_synthetic(arm, 2, seed=0, angle_caps=np.pi)
    with pytest.raises(ValueError, match="smoothing"):
        dataio.generate_synthetic(arm, 2, seed=0, angle_caps=1.0, smoothing=1.0)
    with pytest.raises(ValueError, match="smoothing"):
        dataio.generate_synthetic(arm, 2, seed=0, angle_caps=1.0, smoothing=-0.1)


def test_generated_positions_match_fk(arm):
    ds = dataio.generate_synthetic(arm, 8, seed=11, angle_caps=1.0, smoothing=0.3)
    assert dataio.check_consistency(ds, arm) < 1e-12


def test_check_consistency_needs_both_channels(arm):
    ds = dataio.generate_synthetic(arm, 2, seed=12, angle_caps=1.0)
    rot_only = dataio.MotionDataset(rig=ds.rig, quats=ds.quats, positions=None)
    with pytest.raises(ValueError):
        dataio.check_consistency(rot_only, arm)


def test_to_paired_arrays(arm, arm_frames):
    ds = dataio.generate_synthetic(arm, 5, seed=13, angle_caps=1.2)
    paired = dataio.to_paired(ds, arm, arm_frames)
    assert paired.positions.dtype == np.float32
    assert paired.bone.dtype == np.float32
    assert paired.positions is paired.gt_positions
    pose = fk(arm, ds.local_matrices())
    want = bone_from_world(pose.world, arm_frames).astype(np.float32)
    assert np.array_equal(paired.bone, want)


def test_inject_noise_zero_sigma_is_exact_copy(arm):
    pos = dataio.generate_synthetic(arm, 4, seed=14, angle_caps=1.0).positions
    out = dataio.inject_noise(pos, 0.0, seed=0)
    assert out is not pos
    assert np.array_equal(out, pos)


def test_inject_noise_determinism_and_scale(arm):
    pos = dataio.generate_synthetic(arm, 6, seed=15, angle_caps=1.0).positions
    a = dataio.inject_noise(pos, 10.0, seed=1)
    b = dataio.inject_noise(pos, 10.0, seed=1)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, dataio.inject_noise(pos, 10.0, seed=2))
    assert not np.array_equal(a, dataio.inject_noise(pos, 20.0, seed=1))
    # 10 mm sigma moves joints fractions of a millimeter to centimeters
    delta = np.linalg.norm((a - pos)[:, 1:], axis=-1)
    assert 0.001 < delta.mean() < 0.1


def test_inject_noise_recenters_root(arm):
    pos = dataio.generate_synthetic(arm, 4, seed=16, angle_caps=1.0).positions
    centered = dataio.inject_noise(pos, 25.0, seed=3)
    assert np.abs(centered[:, 0]).max() == 0.0
    free = dataio.inject_noise(pos, 25.0, seed=3, recenter=False)
    assert np.abs(free[:, 0]).max() > 0.0


def test_inject_noise_rejects_negative_sigma():
    with pytest.raises(ValueError):
        dataio.inject_noise(np.zeros((1, 2, 3)), -1.0, seed=0)


def test_inject_noise_preserves_dtype(arm):
    pos = dataio.generate_synthetic(arm, 2, seed=17, angle_caps=1.0)
    single = pos.positions.astype(np.float32)
    assert dataio.inject_noise(single, 5.0, seed=0).dtype == np.float32


def test_split_contiguous_blocks(arm):
    ds = dataio.generate_synthetic(arm, 10, seed=18, angle_caps=1.0)
    tr, va, te = dataio.split(ds, (0.6, 0.2, 0.2))
    assert (tr.frame_count, va.frame_count, te.frame_count) == (6, 2, 2)
    assert np.array_equal(tr.quats, ds.quats[:6])
    assert np.array_equal(va.quats, ds.quats[6:8])
    assert np.array_equal(te.quats, ds.quats[8:])
    assert np.array_equal(te.positions, ds.positions[8:])


def test_split_shuffle_is_seeded_permutation(arm):
    ds = dataio.generate_synthetic(arm, 12, seed=19, angle_caps=1.0)
    a = dataio.split(ds, (0.5, 0.25, 0.25), seed=4, shuffle=True)
    b = dataio.split(ds, (0.5, 0.25, 0.25), seed=4, shuffle=True)
    for x, y in zip(a, b):
        assert np.array_equal(x.quats, y.quats)
    got = np.concatenate([part.quats for part in a])
    assert not np.array_equal(got, ds.quats)
    assert np.array_equal(np.sort(got.ravel()), np.sort(ds.quats.ravel()))


def test_split_validates_fractions(arm):
    ds = dataio.generate_synthetic(arm, 4, seed=20, angle_caps=1.0)
    with pytest.raises(ValueError):
        dataio.split(ds, (0.5, 0.5))
    with pytest.raises(ValueError):
        dataio.split(ds, (0.8, 0.3, -0.1))
    with pytest.raises(ValueError):
        dataio.split(ds, (0.5, 0.2, 0.2))


def test_noise_sweep_rows_and_grids(arm, arm_frames):
    cfg = model.ModelConfig(hidden=8, depth=1, heads=2)
    params = model.init_params(cfg, arm.joint_count, np.random.default_rng(21))
    ds = dataio.generate_synthetic(arm, 6, seed=22, angle_caps=1.0)
    paired = dataio.to_paired(ds, arm, arm_frames)
    sigmas = (0.0, 10.0)
    rows, swing, twist = dataio.noise_sweep(params, cfg, "gat", arm, arm_frames,
                                            paired, sigmas=sigmas)
    assert [r["sigma_mm"] for r in rows] == [0.0, 10.0]
    assert set(rows[0]) == {"sigma_mm", "mpjae", "mpjpe", "p_mpjpe",
                            "swing", "twist"}
    assert swing.shape == (4, 2) and twist.shape == (4, 2)

    clean = train.evaluate(params, cfg, "gat", arm, arm_frames, paired)
    assert rows[0]["mpjae"] == clean.mpjae_deg
    assert rows[0]["mpjpe"] == clean.mpjpe_mm


def test_noise_sweep_csv_layout():
    rows = [{"sigma_mm": 0.0, "mpjae": 1.5, "mpjpe": 2.0, "p_mpjpe": 1.0,
             "swing": 0.5, "twist": 0.25}]
    text = dataio.noise_sweep_to_csv(rows)
    lines = text.splitlines()
    assert lines[0] == "sigma_mm,mpjae,mpjpe,p_mpjpe,swing,twist"
    assert lines[1] == "0.0,1.5,2.0,1.0,0.5,0.25"
    assert text.endswith("\n")


def test_grid_to_csv_layout():
    grid = np.array([[1.0, 2.0], [3.0, 4.5]])
    text = dataio.grid_to_csv(["base", "tip"], (0.0, 10.0), grid)
    assert text.splitlines() == [
        "joint,0.0,10.0",
        "base,1.0,2.0",
        "tip,3.0,4.5",
    ]
