"""Rigid-body math, Procrustes alignment, distances and neighbor queries.

Point sets are stored row-wise as ``(N, 3)`` float64 arrays. Lengths are in
meters unless a function says otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    DegenerateGeometry,
    DimensionMismatch,
    EmptySet,
    InvalidRotation,
    InvariantViolation,
)

ROTATION_TOL = 1e-6


def check_rotation(R, tol=ROTATION_TOL):
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise InvalidRotation(f"expected a finite 3x3 matrix, got shape {R.shape}")
    err = np.linalg.norm(R.T @ R - np.eye(3))
    if err > tol:
        raise InvalidRotation(f"matrix is not orthonormal (|R^T R - I| = {err:.3g})")
    det = np.linalg.det(R)
    if abs(det - 1.0) > tol:
        raise InvalidRotation(f"matrix has det {det:.6g}, expected +1")
    return R


@dataclass(frozen=True)
class RigidTransform:
    """x -> rotation @ x + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.array(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=np.float64).reshape(3))
        if self.rotation.shape != (3, 3):
            raise InvalidRotation(f"rotation must be 3x3, got {self.rotation.shape}")

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def validate(self, tol=ROTATION_TOL):
        check_rotation(self.rotation, tol)
        return self

    def apply(self, points):
        return apply_transform(self, points)

    def as_matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def __matmul__(self, other):
        return compose(self, other)


def apply_transform(T: RigidTransform, points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points @ T.rotation.T + T.translation


def rotate(R, vectors) -> np.ndarray:
    return np.asarray(vectors, dtype=np.float64) @ np.asarray(R).T


def compose(T1: RigidTransform, T2: RigidTransform) -> RigidTransform:
    """Transform applying ``T2`` first, then ``T1``."""
    return RigidTransform(T1.rotation @ T2.rotation, T1.rotation @ T2.translation + T1.translation)


def invert(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -Rt @ T.translation)


def center_of_mass(points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise EmptySet("center of mass of an empty point set")
    return points.mean(axis=0)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation matrix."""
    return Rotation.random(random_state=rng).as_matrix()


def axis_angle_rotation(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def rotation_geodesic_deg(Ra, Rb) -> float:
    """Angle of the relative rotation ``Ra^T Rb`` in degrees.

    Equal to ``arccos((trace(Ra^T Rb) - 1) / 2)``; evaluated through atan2 of the
    skew and trace parts so that angles near 0 and 180 degrees keep full precision.
    """
    Ra = check_rotation(Ra)
    Rb = check_rotation(Rb)
    M = Ra.T @ Rb
    cos = (np.trace(M) - 1.0) / 2.0
    skew = np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    sin = np.linalg.norm(skew) / 2.0
    return float(np.degrees(np.arctan2(sin, np.clip(cos, -1.0, 1.0))))


def kabsch_solve(source, target, rank_tol=1e-9) -> RigidTransform:
    """Least-squares rigid transform mapping ``source`` rows onto ``target`` rows."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.ndim != 2 or source.shape[1] != 3 or target.ndim != 2 or target.shape[1] != 3:
        raise DimensionMismatch(f"expected (M, 3) arrays, got {source.shape} and {target.shape}")
    if len(source) != len(target):
        raise DimensionMismatch(f"point counts differ: {len(source)} vs {len(target)}")
    if len(source) < 3:
        raise DegenerateGeometry(f"need at least 3 correspondences, got {len(source)}")

    cs = source.mean(axis=0)
    ct = target.mean(axis=0)
    src = source - cs
    tgt = target - ct
    sv = np.linalg.svd(src, compute_uv=False)
    scale = max(sv[0], np.abs(source).max(), 1e-300)
    if sv[0] <= rank_tol * scale or sv[1] <= rank_tol * scale:
        raise DegenerateGeometry("source points are coincident or collinear")

    H = src.T @ tgt
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, ct - R @ cs)


def _nearest_distances(A, B, chunk=2048):
    out = np.empty(len(A))
    for s in range(0, len(A), chunk):
        d2 = ((A[s:s + chunk, None, :] - B[None, :, :]) ** 2).sum(-1)
        out[s:s + chunk] = np.sqrt(d2.min(axis=1))
    return out


def chamfer_distance(A, B) -> float:
    """Symmetric Chamfer distance: half the sum of both directed mean NN distances."""
    A = np.asarray(A, dtype=np.float64).reshape(-1, 3)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 3)
    if len(A) == 0 or len(B) == 0:
        raise EmptySet("chamfer distance needs non-empty point sets")
    if len(A) * len(B) > 4_000_000:
        from scipy.spatial import cKDTree

        dab = cKDTree(B).query(A)[0]
        dba = cKDTree(A).query(B)[0]
    else:
        dab = _nearest_distances(A, B)
        dba = _nearest_distances(B, A)
    return 0.5 * (dab.mean() + dba.mean())


def object_scale(points) -> float:
    """Twice the mean distance of the points from their center of gravity."""
    points = np.asarray(points, dtype=np.float64)
    c = center_of_mass(points)
    return 2.0 * float(np.linalg.norm(points - c, axis=1).mean())


# ---------------------------------------------------------------------------
# Parts and multi-part clouds


@dataclass
class Part:
    points: np.ndarray
    part_index: int
    anchor: bool = False
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        self.part_index = int(self.part_index)
        self.anchor = bool(self.anchor)

    def __len__(self):
        return len(self.points)

    def validate(self):
        if len(self.points) < 1:
            raise InvariantViolation(f"part {self.part_index} has no points")
        if self.normals is not None:
            if self.normals.shape != self.points.shape:
                raise InvariantViolation(f"part {self.part_index}: normals shape {self.normals.shape} "
                                         f"!= points shape {self.points.shape}")
            if np.any(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0) > 1e-6):
                raise InvariantViolation(f"part {self.part_index}: normals are not unit length")

    def transformed(self, T: RigidTransform) -> "Part":
        normals = None if self.normals is None else rotate(T.rotation, self.normals)
        return Part(apply_transform(T, self.points), self.part_index, self.anchor, normals)


@dataclass
class MultiPartCloud:
    parts: list
    assembled: bool = False

    def validate(self):
        if not self.parts:
            raise InvariantViolation("cloud has no parts")
        for p in self.parts:
            p.validate()
        idx = sorted(p.part_index for p in self.parts)
        if idx != list(range(len(self.parts))):
            raise InvariantViolation(f"part indices must be distinct and contiguous from 0, got {idx}")
        n_anchor = sum(p.anchor for p in self.parts)
        if n_anchor != 1:
            raise InvariantViolation(f"exactly one anchor part required, found {n_anchor}")
        return self

    @property
    def num_parts(self):
        return len(self.parts)

    @property
    def num_points(self):
        return sum(len(p) for p in self.parts)

    @property
    def anchor_index(self):
        for p in self.parts:
            if p.anchor:
                return p.part_index
        raise InvariantViolation("cloud has no anchor part")

    def part(self, i) -> Part:
        for p in self.parts:
            if p.part_index == i:
                return p
        raise KeyError(i)

    def points(self):
        return np.concatenate([p.points for p in self.parts], axis=0)

    def part_ids(self):
        return np.concatenate([np.full(len(p), p.part_index) for p in self.parts])

    def has_normals(self):
        return all(p.normals is not None for p in self.parts)

    def transformed(self, transforms, assembled=None) -> "MultiPartCloud":
        """Apply ``transforms[i]`` to part ``i``."""
        parts = [p.transformed(transforms[p.part_index]) for p in self.parts]
        return MultiPartCloud(parts, self.assembled if assembled is None else assembled)

    def copy(self):
        return MultiPartCloud(
            [Part(p.points.copy(), p.part_index, p.anchor,
                  None if p.normals is None else p.normals.copy()) for p in self.parts],
            self.assembled,
        )

    def __eq__(self, other):
        if not isinstance(other, MultiPartCloud) or self.assembled != other.assembled:
            return False
        if len(self.parts) != len(other.parts):
            return False
        for a, b in zip(self.parts, other.parts):
            if a.part_index != b.part_index or a.anchor != b.anchor:
                return False
            if not np.array_equal(a.points, b.points):
                return False
            if (a.normals is None) != (b.normals is None):
                return False
            if a.normals is not None and not np.array_equal(a.normals, b.normals):
                return False
        return True


def largest_part_index(parts) -> int:
    """Index of the part with the largest axis-aligned bounding-box volume."""
    vols = [float(np.prod(np.ptp(p.points, axis=0))) if len(p.points) else 0.0 for p in parts]
    return int(np.argmax(vols))


# ---------------------------------------------------------------------------
# Overlap labels


def overlap_labels_bruteforce(points, part_ids, epsilon):
    """O(N^2) reference: 1 where a point lies within ``epsilon`` of another part."""
    points = np.asarray(points, dtype=np.float64)
    part_ids = np.asarray(part_ids)
    eps2 = epsilon * epsilon
    labels = np.zeros(len(points), dtype=bool)
    for s in range(0, len(points), 1024):
        d2 = ((points[s:s + 1024, None, :] - points[None, :, :]) ** 2).sum(-1)
        other = part_ids[s:s + 1024, None] != part_ids[None, :]
        labels[s:s + 1024] = np.any((d2 < eps2) & other, axis=1)
    return labels


_OFFSETS = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)])


def overlap_labels_grid(points, part_ids, epsilon):
    """Uniform hash-grid version of :func:`overlap_labels_bruteforce`."""
    points = np.asarray(points, dtype=np.float64)
    part_ids = np.asarray(part_ids)
    n = len(points)
    labels = np.zeros(n, dtype=bool)
    if n == 0:
        return labels
    # slightly inflated cells so floor() rounding never hides a neighbor at distance < eps
    cell = epsilon * (1.0 + 1e-9)
    keys = np.floor((points - points.min(axis=0)) / cell).astype(np.int64) + 1
    dims = keys.max(axis=0) + 2
    flat = (keys[:, 0] * dims[1] + keys[:, 1]) * dims[2] + keys[:, 2]
    order = np.argsort(flat, kind="stable")
    sorted_keys = flat[order]
    eps2 = epsilon * epsilon
    for off in _OFFSETS:
        nk = keys + off
        nflat = (nk[:, 0] * dims[1] + nk[:, 1]) * dims[2] + nk[:, 2]
        lo = np.searchsorted(sorted_keys, nflat, side="left")
        hi = np.searchsorted(sorted_keys, nflat, side="right")
        counts = hi - lo
        todo = np.nonzero((counts > 0) & ~labels)[0]
        if len(todo) == 0:
            continue
        c = counts[todo]
        qi = np.repeat(todo, c)
        starts = np.repeat(lo[todo] - np.concatenate(([0], np.cumsum(c)[:-1])), c)
        cand = order[starts + np.arange(len(qi))]
        d2 = ((points[qi, None, :] - points[cand, None, :]) ** 2).sum(-1)[:, 0]
        hit = (d2 < eps2) & (part_ids[qi] != part_ids[cand])
        labels[qi[hit]] = True
    return labels


def overlap_labels(cloud: MultiPartCloud, epsilon: float) -> np.ndarray:
    """Per-point overlap labels of an assembled cloud, in ``cloud.points()`` order."""
    if not cloud.assembled:
        raise InvariantViolation("overlap labels require a cloud in the assembled frame")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return overlap_labels_grid(cloud.points(), cloud.part_ids(), epsilon)


def sample_part_points(part, M: int, rng) -> np.ndarray:
    """Indices drawn uniformly with replacement from the part's points."""
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    n = len(part) if not isinstance(part, (int, np.integer)) else int(part)
    return np.asarray(rng.integers(0, n, size=M), dtype=np.int64)
