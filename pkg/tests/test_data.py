import filecmp

import numpy as np
import pytest
from scipy import stats

from rpflow.data import (
    DatasetSpec,
    PartitionScheme,
    cylinder_cut_plane,
    generate,
    generate_cylinder,
    generate_multipart_sample,
    generate_multipart_toy,
    generate_registration_pair,
    read_mpc,
    read_pose,
    read_sample,
    sample_cylinder_surface,
    write_dataset,
    write_mpc,
    write_pose,
)
from rpflow.errors import InvariantViolation, ParseError, VersionMismatch
from rpflow.geometry import apply_transform, chamfer_distance, kabsch_solve, object_scale, overlap_labels, overlap_labels_bruteforce


def assert_poses_reproduce(sample, tol=1e-12):
    for cp, gp, T in zip(sample.condition.parts, sample.assembled.parts, sample.poses):
        assert np.abs(apply_transform(T, cp.points) - gp.points).max() < tol
        assert np.abs(cp.normals @ T.rotation.T - gp.normals).max() < tol


@pytest.mark.parametrize("scheme", list(PartitionScheme))
def test_cylinder_samples(scheme):
    samples = generate_cylinder(DatasetSpec("cylinder", count=20, points_per_part=200, seed=3, scheme=scheme))
    for s in samples:
        assert s.assembled.num_parts == 2
        assert s.condition.parts[0].anchor and not s.condition.parts[1].anchor
        assert_poses_reproduce(s)
        # non-anchor condition part is centered at its own CoM
        assert np.abs(s.condition.parts[1].points.mean(axis=0)).max() < 1e-12
        # anchor stays in the global frame
        assert np.array_equal(s.condition.parts[0].points, s.assembled.parts[0].points)
        for p in s.assembled.parts:
            assert np.allclose(np.linalg.norm(p.normals, axis=1), 1.0, atol=1e-12)


def test_cut_planes_match_schemes():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n, off = cylinder_cut_plane("horizontal", 0.3, 0.8, rng)
        assert np.array_equal(n, [0, 0, 1]) and abs(off) < 0.4
        n, off = cylinder_cut_plane("axial", 0.3, 0.8, rng)
        assert n[2] == 0 and off == 0  # plane contains the z axis
        n, _ = cylinder_cut_plane("random", 0.3, 0.8, rng)
        assert np.linalg.norm(n) == pytest.approx(1.0)


def test_cylinder_dimensions_uniform():
    samples = generate_cylinder(DatasetSpec("cylinder", count=10_000, points_per_part=64, seed=1))
    for key in ("height", "diameter"):
        vals = np.array([s.meta[key] for s in samples])
        assert vals.min() >= 0.2 and vals.max() <= 1.0
        assert stats.kstest(vals, stats.uniform(0.2, 0.8).cdf).pvalue > 0.01


def test_cylinder_surface_area_weighting():
    r, h, n = 0.3, 0.5, 10_000
    pts, _ = sample_cylinder_surface(r, h, n, np.random.default_rng(2))
    on_cap = np.isclose(np.abs(pts[:, 2]), h / 2) & (np.hypot(pts[:, 0], pts[:, 1]) < r - 1e-12)
    p_cap = 2 * np.pi * r ** 2 / (2 * np.pi * r ** 2 + 2 * np.pi * r * h)
    sigma = np.sqrt(n * p_cap * (1 - p_cap))
    assert abs(on_cap.sum() - n * p_cap) < 3 * sigma


def test_registration_pairs():
    spec = DatasetSpec("registration", count=12, points_per_part=150, seed=4)
    for s in generate_registration_pair(spec):
        assert s.assembled.num_parts == 2
        assert s.assembled.num_points == 300
        union = s.assembled.points()
        assert chamfer_distance(union, s.meta["source_points"]) == 0.0
        assert_poses_reproduce(s)
        vols = [np.prod(np.ptp(p.points, axis=0)) for p in s.assembled.parts]
        assert vols[0] >= vols[1]


def test_multipart_duplicates_congruent():
    s = generate_multipart_sample("t", 200, 3, np.random.default_rng(0))
    legs = [s.assembled.parts[1].points, s.assembled.parts[2].points]
    T = kabsch_solve(legs[0], legs[1])
    assert np.abs(apply_transform(T, legs[0]) - legs[1]).max() < 1e-9
    assert_poses_reproduce(s)


def test_multipart_counts_and_contacts():
    samples = generate_multipart_toy(DatasetSpec("multipart", count=30, points_per_part=300, seed=5,
                                                 part_count_range=(2, 8)))
    counts = {s.assembled.num_parts for s in samples}
    assert counts <= set(range(2, 9)) and len(counts) > 3
    for s in samples[:8]:
        eps = 0.025 * object_scale(s.assembled.points())
        labels = overlap_labels(s.assembled, eps)
        assert np.array_equal(labels, overlap_labels_bruteforce(s.assembled.points(), s.assembled.part_ids(), eps))
        ids = s.assembled.part_ids()
        for i in range(s.assembled.num_parts):
            assert labels[ids == i].any()


def test_mpc_round_trip(tmp_path):
    s = generate(DatasetSpec("multipart", count=1, points_per_part=40, seed=2))[0]
    for cloud in (s.condition, s.assembled):
        write_mpc(tmp_path / "a.mpc", cloud)
        assert read_mpc(tmp_path / "a.mpc") == cloud
    write_pose(tmp_path / "a.pose", s.poses)
    for a, b in zip(read_pose(tmp_path / "a.pose"), s.poses):
        assert np.array_equal(a.rotation, b.rotation) and np.array_equal(a.translation, b.translation)


def test_mpc_errors(tmp_path):
    s = generate(DatasetSpec("cylinder", count=1, points_per_part=10, seed=2))[0]
    path = tmp_path / "a.mpc"
    write_mpc(path, s.condition)
    lines = path.read_text().splitlines()
    (tmp_path / "trunc.mpc").write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ParseError):
        read_mpc(tmp_path / "trunc.mpc")
    (tmp_path / "v.mpc").write_text("MPC 2\n" + "\n".join(lines[1:]) + "\n")
    with pytest.raises(VersionMismatch):
        read_mpc(tmp_path / "v.mpc")
    two_anchor = [ln.replace("anchor 0", "anchor 1") for ln in lines]
    (tmp_path / "anchors.mpc").write_text("\n".join(two_anchor) + "\n")
    with pytest.raises(InvariantViolation):
        read_mpc(tmp_path / "anchors.mpc")
    bad = list(lines)
    bad[3] = "1.0 nope 2.0 0 0 1"
    (tmp_path / "bad.mpc").write_text("\n".join(bad) + "\n")
    with pytest.raises(ParseError) as err:
        read_mpc(tmp_path / "bad.mpc")
    assert err.value.line == 4


def test_generation_deterministic(tmp_path):
    spec = DatasetSpec("cylinder", count=5, points_per_part=64, seed=7, scheme="random")
    write_dataset(tmp_path / "a", generate(spec))
    write_dataset(tmp_path / "b", generate(spec))
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert cmp.left_list == cmp.right_list and not cmp.diff_files
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", cmp.common_files, shallow=False)
    assert not mismatch and not errors
    s = read_sample(tmp_path / "a", "cyl_00000")
    assert_poses_reproduce(s)
