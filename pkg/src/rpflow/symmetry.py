"""Assembly symmetry group: part stabilizers and interchangeable identical parts.

A group element ``g = (R_0, ..., R_{H-1}, sigma)`` maps the rows of part
``sigma^-1(i)`` to part ``i`` and rotates them by ``R_i``. It acts the same
way on flow samples and on velocity tensors, which is what makes the
flow-matching loss invariant under it.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateGeometry, InvalidGroupElement
from .flow import FlowSample
from .geometry import (
    MultiPartCloud,
    axis_angle_rotation,
    chamfer_distance,
    kabsch_solve,
    object_scale,
    rotate,
    rotation_geodesic_deg,
)

STABILIZER_TOL_SCALE = 0.01
IDENTICAL_TOL_SCALE = 0.005
CANDIDATE_ORDERS = (2, 3, 4, 6)


@dataclass
class GroupElement:
    rotations: list  # R_i for every part i
    permutation: np.ndarray  # permutation[j] = sigma(j)

    def __post_init__(self):
        self.rotations = [np.asarray(R, dtype=np.float64) for R in self.rotations]
        self.permutation = np.asarray(self.permutation, dtype=np.int64)
        if len(self.rotations) != len(self.permutation):
            raise InvalidGroupElement("need one rotation per part")
        if sorted(self.permutation.tolist()) != list(range(len(self.permutation))):
            raise InvalidGroupElement(f"{self.permutation.tolist()} is not a permutation")

    @classmethod
    def identity(cls, num_parts):
        return cls([np.eye(3)] * num_parts, np.arange(num_parts))

    @property
    def num_parts(self):
        return len(self.permutation)

    def source_of(self, i):
        """sigma^-1(i)."""
        return int(np.nonzero(self.permutation == i)[0][0])

    def compose(self, other: "GroupElement") -> "GroupElement":
        """``self`` after ``other``."""
        perm = self.permutation[other.permutation]
        rots = [self.rotations[i] @ other.rotations[self.source_of(i)] for i in range(self.num_parts)]
        return GroupElement(rots, perm)

    def inverse(self) -> "GroupElement":
        inv = np.argsort(self.permutation)
        rots = [self.rotations[self.permutation[i]].T for i in range(self.num_parts)]
        return GroupElement(rots, inv)

    def validate(self, classes=None, stabilizers=None, tol_deg=1e-6):
        if classes is not None:
            label = class_labels(classes, self.num_parts)
            if np.any(label[self.permutation] != label):
                raise InvalidGroupElement("permutation moves a part outside its identical-part class")
        if stabilizers is not None:
            for i, R in enumerate(self.rotations):
                if not any(rotation_geodesic_deg(R, S) < tol_deg for S in stabilizers[i]):
                    raise InvalidGroupElement(f"rotation of part {i} is not in its stabilizer")
        return self


def class_labels(classes, num_parts):
    label = np.full(num_parts, -1)
    for c, members in enumerate(classes):
        label[list(members)] = c
    if np.any(label < 0):
        raise InvalidGroupElement("equivalence classes do not cover every part")
    return label


def _permute_rows(g: GroupElement, part_indices, arrays, rotate_mask):
    part_indices = np.asarray(part_indices)
    blocks = [np.nonzero(part_indices == j)[0] for j in range(g.num_parts)]
    order, new_ids = [], []
    for i in range(g.num_parts):
        src = blocks[g.source_of(i)]
        order.append(src)
        new_ids.append(np.full(len(src), i))
    order = np.concatenate(order)
    new_ids = np.concatenate(new_ids)
    out = []
    for arr, rot in zip(arrays, rotate_mask):
        arr = np.asarray(arr)
        moved = arr[order]
        if rot:
            moved = moved.astype(np.float64, copy=True)
            for i in range(g.num_parts):
                rows = new_ids == i
                moved[rows] = rotate(g.rotations[i], moved[rows])
        out.append(moved)
    return out, new_ids


def apply_group_element(g: GroupElement, x, part_indices=None, classes=None):
    """Act on a :class:`FlowSample`, or on an ``(L, 3)`` tensor given its row part indices."""
    if classes is not None:
        g.validate(classes)
    if isinstance(x, FlowSample):
        if g.num_parts != int(x.part_indices.max()) + 1:
            raise InvalidGroupElement("group element and sample disagree on the number of parts")
        fields = ["condition_points", "condition_normals", "x0", "x1", "xt", "target_velocity", "anchor_mask"]
        arrays = [getattr(x, f) for f in fields]
        moved, ids = _permute_rows(g, x.part_indices, arrays, [True] * 6 + [False])
        picks = [x.sample_indices[g.source_of(i)] for i in range(g.num_parts)] if x.sample_indices else []
        return replace(x, **dict(zip(fields, moved)), part_indices=ids, sample_indices=picks)
    if part_indices is None:
        raise InvalidGroupElement("part indices are required to act on a bare tensor")
    (moved,), _ = _permute_rows(g, part_indices, [x], [True])
    return moved


def apply_to_cloud(g: GroupElement, cloud: MultiPartCloud) -> MultiPartCloud:
    from .geometry import Part

    parts = []
    for i in range(g.num_parts):
        src = cloud.part(g.source_of(i))
        nrm = None if src.normals is None else rotate(g.rotations[i], src.normals)
        parts.append(Part(rotate(g.rotations[i], src.points), i, src.anchor, nrm))
    return MultiPartCloud(parts, cloud.assembled)


# ---------------------------------------------------------------------------
# Detection


def principal_axes(points):
    c = points - points.mean(axis=0)
    _, vecs = np.linalg.eigh(c.T @ c)
    return vecs.T  # rows, ascending variance


def _pca_alignments(a, b):
    """Proper rotations mapping the principal frame of ``b`` onto that of ``a``."""
    Fa, Fb = principal_axes(a), principal_axes(b)
    out = []
    for signs in ([1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]):
        R = Fa.T @ np.diag(signs) @ Fb
        if np.linalg.det(R) < 0:
            R = Fa.T @ np.diag(signs) @ np.diag([1, 1, -1]) @ Fb
        out.append(R)
    return out


def part_distance(a, b):
    """Smallest Chamfer distance between centered ``a`` and rotated centered ``b``."""
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    rots = []
    if len(a) == len(b):
        try:
            rots.append(kabsch_solve(b, a).rotation)
        except DegenerateGeometry:
            pass
    rots.extend(_pca_alignments(a, b))
    return min(chamfer_distance(a, rotate(R, b)) for R in rots)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def find_identical_parts(cloud: MultiPartCloud, tol=None):
    """Equivalence classes (sorted lists of part indices) of congruent parts."""
    if tol is None:
        tol = IDENTICAL_TOL_SCALE * object_scale(cloud.points())
    H = cloud.num_parts
    uf = _UnionFind(H)
    pts = [cloud.part(i).points for i in range(H)]
    for i in range(H):
        for j in range(i + 1, H):
            if uf.find(i) == uf.find(j):
                continue
            if part_distance(pts[i], pts[j]) < tol:
                uf.union(i, j)
    groups = {}
    for i in range(H):
        groups.setdefault(uf.find(i), []).append(i)
    return sorted(groups.values())


def find_stabilizer(points, candidate_orders=CANDIDATE_ORDERS, tol=None, extra_rotations=(), scale=None):
    """Rotations (about the part's center of mass) that map the part onto itself.

    Cyclic rotations of the given orders about the three principal axes, plus
    ``extra_rotations``, are kept when the self-Chamfer distance is below
    ``tol``; the identity is always first.
    """
    points = np.asarray(points, dtype=np.float64)
    c = points - points.mean(axis=0)
    if tol is None:
        tol = STABILIZER_TOL_SCALE * (object_scale(points) if scale is None else scale)
    candidates = []
    for axis in principal_axes(c):
        for k in candidate_orders:
            for m in range(1, k):
                candidates.append(axis_angle_rotation(axis, 2 * np.pi * m / k))
    candidates.extend(np.asarray(R, dtype=np.float64) for R in extra_rotations)
    found = [np.eye(3)]
    for R in candidates:
        if any(rotation_geodesic_deg(R, S) < 1e-6 for S in found):
            continue
        if chamfer_distance(rotate(R, c), c) < tol:
            found.append(R)
    return found


# ---------------------------------------------------------------------------
# Distribution test


@dataclass
class InvarianceTestResult:
    passed: bool
    statistic: float
    critical_value: float
    p_value: float


def _energy_from_counts(D, a, b, n, m):
    return 2.0 * (a @ D @ b) / (n * m) - (a @ D @ a) / n ** 2 - (b @ D @ b) / m ** 2


def distribution_invariance_test(points, R, n=10_000, alpha=0.01, rng=None, n_perm=499) -> InvarianceTestResult:
    """Energy-distance permutation test between n uniform draws x0 of a part and R x0.

    Draws come from a finite point set, so the statistic is evaluated on count
    vectors over the support ``points ∪ R points`` rather than on n x n distances.
    """
    rng = np.random.default_rng(rng)
    points = np.asarray(points, dtype=np.float64)
    N = len(points)
    support = np.vstack([points, rotate(R, points)])
    D = cdist(support, support)
    draws = rng.integers(0, N, size=n)
    pooled = np.concatenate([draws, draws + N])
    a = np.bincount(pooled[:n], minlength=2 * N).astype(np.float64)
    b = np.bincount(pooled[n:], minlength=2 * N).astype(np.float64)
    stat = max(_energy_from_counts(D, a, b, n, n), 0.0)
    perm_stats = np.empty(n_perm)
    for k in range(n_perm):
        shuffled = rng.permutation(pooled)
        pa = np.bincount(shuffled[:n], minlength=2 * N).astype(np.float64)
        pb = np.bincount(shuffled[n:], minlength=2 * N).astype(np.float64)
        perm_stats[k] = _energy_from_counts(D, pa, pb, n, n)
    p_value = (np.sum(perm_stats >= stat) + 1) / (n_perm + 1)
    critical = float(np.quantile(perm_stats, 1 - alpha))
    return InvarianceTestResult(bool(p_value > alpha), float(stat), critical, float(p_value))
