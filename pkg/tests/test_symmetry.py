import itertools

import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components

from rpflow.data import _make_sample, generate_multipart_sample, sample_cylinder_surface
from rpflow.errors import InvalidGroupElement
from rpflow.flow import cfm_loss, make_flow_sample
from rpflow.geometry import (
    MultiPartCloud,
    Part,
    axis_angle_rotation,
    chamfer_distance,
    object_scale,
    random_rotation,
    rotation_geodesic_deg,
)
from rpflow.symmetry import (
    CANDIDATE_ORDERS,
    GroupElement,
    apply_group_element,
    apply_to_cloud,
    distribution_invariance_test,
    find_identical_parts,
    find_stabilizer,
    part_distance,
    principal_axes,
)


def orbit_cylinder(radius=0.3, height=1.0, n_base=50, folds=12, seed=0):
    """Cylinder surface sampling that is exactly invariant under 360/folds degree turns about z."""
    pts, _ = sample_cylinder_surface(radius, height, n_base * folds * 2, np.random.default_rng(seed))
    phi = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi)
    wedge = pts[phi < 2 * np.pi / folds][:n_base]
    copies = [wedge @ axis_angle_rotation([0, 0, 1], 2 * np.pi * k / folds).T for k in range(folds)]
    out = np.vstack(copies)
    return out - out.mean(axis=0)


def grid_box(a=1.0, b=0.6, c=0.3, step=0.05):
    """Box surface points on a lattice symmetric under the three 180 degree axis turns."""
    xs = [np.linspace(-s / 2, s / 2, int(round(s / step)) + 1) for s in (a, b, c)]
    pts = set()
    for axis in range(3):
        others = [k for k in range(3) if k != axis]
        for sign in (-1, 1):
            for u, v in itertools.product(xs[others[0]], xs[others[1]]):
                p = [0.0, 0.0, 0.0]
                p[axis] = sign * (a, b, c)[axis] / 2
                p[others[0]], p[others[1]] = u, v
                pts.add(tuple(np.round(p, 12)))
    return np.array(sorted(pts))


def stabilizer_oracle(points, tol):
    """Brute force over the same candidate set, with no deduplication shortcuts."""
    c = points - points.mean(axis=0)
    keep = [np.eye(3)]
    for axis in principal_axes(c):
        for k in CANDIDATE_ORDERS:
            for m in range(1, k):
                R = axis_angle_rotation(axis, 2 * np.pi * m / k)
                if chamfer_distance(c @ R.T, c) < tol and all(rotation_geodesic_deg(R, S) > 1e-6 for S in keep):
                    keep.append(R)
    return keep


def same_rotation_sets(A, B):
    return len(A) == len(B) and all(any(rotation_geodesic_deg(a, b) < 1e-6 for b in B) for a in A)


# -- identical parts ----------------------------------------------------------------------


def test_two_legs_one_class():
    s = generate_multipart_sample("t", 200, 3, np.random.default_rng(0))
    assert find_identical_parts(s.assembled) == [[0], [1, 2]]


def test_distinct_parts_are_singletons():
    rng = np.random.default_rng(1)
    parts = [Part(rng.normal(size=(60, 3)) * (1 + i) + 5 * i, i, i == 0) for i in range(3)]
    assert find_identical_parts(MultiPartCloud(parts)) == [[0], [1], [2]]


def test_four_columns_against_pairwise_oracle():
    s = generate_multipart_sample("t", 200, 5, np.random.default_rng(2))
    cloud = s.assembled
    classes = find_identical_parts(cloud)
    tol = 0.005 * object_scale(cloud.points())
    H = cloud.num_parts
    adj = np.array([[part_distance(cloud.part(i).points, cloud.part(j).points) < tol for j in range(H)]
                    for i in range(H)])
    _, labels = connected_components(adj, directed=False)
    oracle = sorted(sorted(np.nonzero(labels == c)[0].tolist()) for c in np.unique(labels))
    assert classes == oracle
    assert [len(c) for c in classes] == [1, 4]


# -- stabilizers ----------------------------------------------------------------------------


def test_cylinder_accepts_every_axis_angle():
    pts = orbit_cylinder()
    stab = find_stabilizer(pts)
    for k in CANDIDATE_ORDERS:
        for m in range(1, k):
            R = axis_angle_rotation([0, 0, 1], 2 * np.pi * m / k)
            assert any(rotation_geodesic_deg(R, S) < 1e-6 for S in stab), (k, m)


def test_box_has_identity_and_three_half_turns():
    pts = grid_box()
    stab = find_stabilizer(pts)
    assert len(stab) == 4
    for S in stab[1:]:
        assert rotation_geodesic_deg(np.eye(3), S) == pytest.approx(180.0, abs=1e-6)
    assert same_rotation_sets(stab, stabilizer_oracle(pts, 0.01 * object_scale(pts)))


def test_asymmetric_cloud_identity_only():
    pts = np.random.default_rng(3).normal(size=(300, 3)) * [1.0, 0.5, 0.2]
    pts[:40] += [1.5, 0.4, 0.0]  # lopsided lump
    stab = find_stabilizer(pts)
    assert len(stab) == 1 and np.array_equal(stab[0], np.eye(3))


# -- group action ---------------------------------------------------------------------------


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture(scope="module")
def legged():
    """Slab on four identical legs, all sampled symmetrically, with classes and stabilizers."""
    slab = grid_box(1.0, 0.6, 0.1, step=0.05) + [0.0, 0.0, 0.25]
    leg = orbit_cylinder(0.04, 0.4, n_base=6, folds=12, seed=1)
    parts = [slab] + [leg + [x, y, 0.0] for x in (-0.4, 0.4) for y in (-0.2, 0.2)]
    normals = [_unit_rows(p - p.mean(0)) for p in parts]
    s = _make_sample("legged", parts, normals, np.random.default_rng(4))
    classes = find_identical_parts(s.assembled)
    stabs = [find_stabilizer(p.points) for p in s.assembled.parts]
    assert classes == [[0], [1, 2, 3, 4]]
    assert len(stabs[0]) == 4 and all(len(st) >= 8 for st in stabs[1:])
    return s, classes, stabs


def random_element(rng, classes, stabs):
    H = len(stabs)
    perm = np.arange(H)
    for c in classes:
        perm[c] = rng.permutation(c)
    return GroupElement([stabs[i][rng.integers(len(stabs[i]))] for i in range(H)], perm)


def test_identity_and_inverse(legged):
    s, classes, stabs = legged
    rng = np.random.default_rng(0)
    f = make_flow_sample(s, 16, rng)
    same = apply_group_element(GroupElement.identity(5), f)
    for name in ("condition_points", "x0", "x1", "xt", "target_velocity", "anchor_mask", "part_indices"):
        assert np.array_equal(getattr(same, name), getattr(f, name))
    for _ in range(20):
        g = random_element(rng, classes, stabs)
        g.rotations = [random_rotation(rng) for _ in range(5)]
        back = apply_group_element(g.inverse(), apply_group_element(g, f))
        for name in ("condition_points", "x0", "x1", "xt", "target_velocity"):
            assert np.abs(getattr(back, name) - getattr(f, name)).max() < 1e-12
        assert np.array_equal(back.anchor_mask, f.anchor_mask)
        assert np.array_equal(back.part_indices, f.part_indices)


def test_group_closure(legged):
    s, classes, stabs = legged
    rng = np.random.default_rng(1)
    for _ in range(50):
        g, h = random_element(rng, classes, stabs), random_element(rng, classes, stabs)
        gh = g.compose(h).validate(classes)
        # the candidate set is not closed (no dihedral products), but every product
        # is still a symmetry of its part within the detection tolerance
        for i, R in enumerate(gh.rotations):
            c = s.assembled.part(i).points - s.assembled.part(i).points.mean(0)
            assert chamfer_distance(c @ R.T, c) < 0.01 * object_scale(c)
        assert g.compose(g.inverse()).permutation.tolist() == list(range(5))


def test_composition_matches_sequential_action(legged):
    s, classes, stabs = legged
    rng = np.random.default_rng(2)
    f = make_flow_sample(s, 8, rng)
    for _ in range(10):
        g = GroupElement([random_rotation(rng) for _ in range(5)], random_element(rng, classes, stabs).permutation)
        h = GroupElement([random_rotation(rng) for _ in range(5)], random_element(rng, classes, stabs).permutation)
        a = apply_group_element(g, apply_group_element(h, f))
        b = apply_group_element(g.compose(h), f)
        assert np.abs(a.xt - b.xt).max() < 1e-12
        assert np.array_equal(a.part_indices, b.part_indices)


def test_cross_class_permutation_rejected(legged):
    s, classes, _ = legged
    f = make_flow_sample(s, 4, np.random.default_rng(0))
    g = GroupElement([np.eye(3)] * 5, [1, 0, 2, 3, 4])  # swaps the slab with a leg
    with pytest.raises(InvalidGroupElement):
        apply_group_element(g, f, classes=classes)
    with pytest.raises(InvalidGroupElement):
        GroupElement([np.eye(3)] * 5, [0, 0, 2, 3, 4])


def test_group_element_maps_parts_onto_congruent_parts(legged):
    s, classes, stabs = legged
    rng = np.random.default_rng(3)
    for _ in range(5):
        g = random_element(rng, classes, stabs)
        moved = apply_to_cloud(g, s.assembled)
        for i in range(5):
            a = moved.part(i).points - moved.part(i).points.mean(0)
            b = s.assembled.part(i).points - s.assembled.part(i).points.mean(0)
            assert chamfer_distance(a, b) < 0.01 * object_scale(s.assembled.part(i).points)


def test_loss_invariance_thousand_triples(legged):
    s, classes, stabs = legged
    rng = np.random.default_rng(5)
    swaps = rotations = 0
    for _ in range(1000):
        f = make_flow_sample(s, 8, rng)
        pred = f.target_velocity + rng.normal(size=f.target_velocity.shape)
        pred[f.anchor_mask] = 0.0
        g = random_element(rng, classes, stabs)
        swaps += not np.array_equal(g.permutation, np.arange(5))
        rotations += any(not np.array_equal(R, np.eye(3)) for R in g.rotations)
        gf = apply_group_element(g, f, classes=classes)
        gpred = apply_group_element(g, pred, f.part_indices)
        before = cfm_loss(pred, f.target_velocity, f.anchor_mask)
        after = cfm_loss(gpred, gf.target_velocity, gf.anchor_mask)
        assert abs(before - after) < 1e-12
    assert swaps > 500 and rotations > 500


# -- distribution test ---------------------------------------------------------------------


def test_energy_identity_is_zero():
    pts = np.random.default_rng(0).normal(size=(100, 3))
    res = distribution_invariance_test(pts, np.eye(3), n=2000, rng=0, n_perm=99)
    assert res.statistic == pytest.approx(0.0, abs=1e-12) and res.passed


def test_energy_symmetric_cylinder_passes():
    pts = orbit_cylinder()
    R = axis_angle_rotation([0, 0, 1], 2 * np.pi / 12)
    assert any(rotation_geodesic_deg(R, S) < 1e-6 for S in find_stabilizer(pts, candidate_orders=(12,)))
    res = distribution_invariance_test(pts, R, n=10_000, alpha=0.01, rng=1)
    assert res.passed, res


def test_energy_asymmetric_rotation_fails():
    pts = np.random.default_rng(2).normal(size=(400, 3)) * [1.0, 0.4, 0.2]
    R = axis_angle_rotation([0, 0, 1], np.pi / 2)
    res = distribution_invariance_test(pts, R, n=10_000, alpha=0.01, rng=3)
    assert not res.passed and res.statistic > res.critical_value
