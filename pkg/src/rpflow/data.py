"""Synthetic multi-part datasets and the MPC / pose file formats.

Every generated :class:`AssemblySample` carries the assembled ground truth, the
unposed condition cloud fed to the model and the per-part transforms mapping
condition parts to their assembled placement. The anchor part is always part 0
and is left in the global frame.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePartition, InvariantViolation, ParseError, VersionMismatch
from .geometry import (
    MultiPartCloud,
    Part,
    RigidTransform,
    apply_transform,
    axis_angle_rotation,
    invert,
    largest_part_index,
    random_rotation,
    rotate,
)

MIN_PART_POINTS = 8


class PartitionScheme(str, enum.Enum):
    HORIZONTAL = "horizontal"
    AXIAL = "axial"
    RANDOM = "random"


class Task(str, enum.Enum):
    CYLINDER = "cylinder"
    REGISTRATION = "registration"
    MULTIPART = "multipart"


@dataclass
class DatasetSpec:
    task: Task = Task.CYLINDER
    count: int = 1
    points_per_part: int = 512
    seed: int = 0
    scheme: PartitionScheme = PartitionScheme.HORIZONTAL
    part_count_range: tuple = (2, 8)

    def __post_init__(self):
        self.task = Task(self.task)
        self.scheme = PartitionScheme(self.scheme)
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.points_per_part < MIN_PART_POINTS:
            raise ValueError(f"points_per_part must be >= {MIN_PART_POINTS}")
        lo, hi = self.part_count_range
        if not 2 <= lo <= hi:
            raise ValueError(f"invalid part_count_range {self.part_count_range}")


@dataclass
class AssemblySample:
    name: str
    assembled: MultiPartCloud
    condition: MultiPartCloud
    poses: list = field(default_factory=list)  # condition frame -> assembled frame, per part
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Surface sampling


def sample_cylinder_surface(radius, height, n, rng):
    """Area-weighted samples on a closed cylinder (axis z, centered at the origin)."""
    lateral = 2 * np.pi * radius * height
    cap = np.pi * radius ** 2
    probs = np.array([lateral, cap, cap]) / (lateral + 2 * cap)
    which = rng.choice(3, size=n, p=probs)
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    z = rng.uniform(-height / 2, height / 2, size=n)
    rad = radius * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    pts = np.empty((n, 3))
    nrm = np.zeros((n, 3))
    side = which == 0
    pts[side] = np.column_stack([radius * np.cos(theta[side]), radius * np.sin(theta[side]), z[side]])
    nrm[side] = np.column_stack([np.cos(theta[side]), np.sin(theta[side]), np.zeros(side.sum())])
    for k, sign in ((1, 1.0), (2, -1.0)):
        m = which == k
        pts[m] = np.column_stack([rad[m] * np.cos(theta[m]), rad[m] * np.sin(theta[m]),
                                  np.full(m.sum(), sign * height / 2)])
        nrm[m, 2] = sign
    return pts, nrm


def sample_box_surface(extents, n, rng):
    ex = np.asarray(extents, dtype=np.float64) / 2
    areas = np.array([ex[1] * ex[2], ex[1] * ex[2], ex[0] * ex[2], ex[0] * ex[2], ex[0] * ex[1], ex[0] * ex[1]])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 3)) * ex
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts = uv.copy()
    pts[np.arange(n), axis] = sign * ex[axis]
    nrm = np.zeros((n, 3))
    nrm[np.arange(n), axis] = sign
    return pts, nrm


def sample_ellipsoid_surface(semi_axes, n, rng):
    a = np.asarray(semi_axes, dtype=np.float64)
    out_p, out_n = [], []
    # rejection on the area element of the sphere mapped to the ellipsoid
    gmax = 1.0 / a.min()
    while sum(len(p) for p in out_p) < n:
        u = rng.normal(size=(2 * n, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        g = np.linalg.norm(u / a, axis=1)
        keep = rng.uniform(0, gmax, size=len(u)) < g
        p = u[keep] * a
        nr = p / a ** 2
        out_p.append(p)
        out_n.append(nr / np.linalg.norm(nr, axis=1, keepdims=True))
    return np.concatenate(out_p)[:n], np.concatenate(out_n)[:n]


def sample_torus_surface(major, minor, n, rng):
    out_p, out_n = [], []
    while sum(len(p) for p in out_p) < n:
        u = rng.uniform(0, 2 * np.pi, size=2 * n)
        v = rng.uniform(0, 2 * np.pi, size=2 * n)
        keep = rng.uniform(0, major + minor, size=2 * n) < major + minor * np.cos(v)
        u, v = u[keep], v[keep]
        ring = major + minor * np.cos(v)
        p = np.column_stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)])
        nr = np.column_stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)])
        out_p.append(p)
        out_n.append(nr)
    return np.concatenate(out_p)[:n], np.concatenate(out_n)[:n]


# ---------------------------------------------------------------------------
# Sample assembly


def _make_sample(name, parts_pts, parts_nrm, rng, meta=None):
    """Order parts (anchor first), build the unposed condition and the poses."""
    tmp = [Part(p, i) for i, p in enumerate(parts_pts)]
    a = largest_part_index(tmp)
    order = [a] + [i for i in range(len(parts_pts)) if i != a]

    assembled_parts, condition_parts, poses = [], [], []
    for new_i, old_i in enumerate(order):
        pts, nrm = parts_pts[old_i], parts_nrm[old_i]
        part = Part(pts, new_i, anchor=new_i == 0, normals=nrm)
        assembled_parts.append(part)
        if new_i == 0:
            pose = RigidTransform.identity()
        else:
            com = pts.mean(axis=0)
            R = random_rotation(rng)
            # condition = R (x - com); pose maps condition back onto x
            pose = RigidTransform(R.T, com)
        inv = invert(pose)
        condition_parts.append(Part(apply_transform(inv, pts), new_i, anchor=new_i == 0,
                                    normals=rotate(inv.rotation, nrm)))
        poses.append(pose)
    assembled = MultiPartCloud(assembled_parts, assembled=True).validate()
    condition = MultiPartCloud(condition_parts, assembled=False).validate()
    return AssemblySample(name, assembled, condition, poses, dict(meta or {}))


def _split_by_plane(pts, nrm, normal, offset):
    side = pts @ normal - offset >= 0
    parts = [(pts[side], nrm[side]), (pts[~side], nrm[~side])]
    if min(len(p) for p, _ in parts) < MIN_PART_POINTS:
        raise DegeneratePartition(f"cut leaves a part with {min(len(p) for p, _ in parts)} points")
    return parts


def cylinder_cut_plane(scheme, radius, height, rng):
    """(unit normal, offset) of the cut plane for a cylinder along z."""
    scheme = PartitionScheme(scheme)
    if scheme is PartitionScheme.HORIZONTAL:
        return np.array([0.0, 0.0, 1.0]), rng.uniform(-0.4, 0.4) * height
    if scheme is PartitionScheme.AXIAL:
        phi = rng.uniform(0, 2 * np.pi)
        return np.array([np.cos(phi), np.sin(phi), 0.0]), 0.0
    normal = rng.normal(size=3)
    normal /= np.linalg.norm(normal)
    through = rng.uniform(-0.3, 0.3, size=3) * np.array([radius, radius, height])
    return normal, float(through @ normal)


def generate_cylinder_sample(name, points_per_part, scheme, rng, max_tries=100):
    height = rng.uniform(0.2, 1.0)
    diameter = rng.uniform(0.2, 1.0)
    radius = diameter / 2
    pts, nrm = sample_cylinder_surface(radius, height, 2 * points_per_part, rng)
    for _ in range(max_tries):
        normal, offset = cylinder_cut_plane(scheme, radius, height, rng)
        try:
            parts = _split_by_plane(pts, nrm, normal, offset)
        except DegeneratePartition:
            continue
        meta = {"height": height, "diameter": diameter, "scheme": PartitionScheme(scheme).value,
                "cut_normal": normal.tolist(), "cut_offset": float(offset)}
        return _make_sample(name, [p for p, _ in parts], [n for _, n in parts], rng, meta)
    raise DegeneratePartition(f"{name}: no valid cut after {max_tries} tries")


def _per_sample_rngs(seed, count):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def generate_cylinder(spec: DatasetSpec) -> list:
    """Two-part cylinders cut by the spec's partition scheme."""
    return [generate_cylinder_sample(f"cyl_{k:05d}", spec.points_per_part, spec.scheme, rng)
            for k, rng in enumerate(_per_sample_rngs(spec.seed, spec.count))]


def _primitive(kind, rng, n):
    if kind == "box":
        ext = rng.uniform(0.2, 1.0, size=3)
        return sample_box_surface(ext, n, rng)
    if kind == "cylinder":
        return sample_cylinder_surface(rng.uniform(0.1, 0.5), rng.uniform(0.2, 1.0), n, rng)
    if kind == "ellipsoid":
        return sample_ellipsoid_surface(rng.uniform(0.1, 0.5, size=3), n, rng)
    if kind == "torus":
        major = rng.uniform(0.2, 0.4)
        return sample_torus_surface(major, rng.uniform(0.05, 0.5) * major, n, rng)
    raise ValueError(kind)


SHAPES = ("box", "cylinder", "ellipsoid", "torus")


def generate_registration_sample(name, points_per_part, rng, max_tries=100):
    kind = SHAPES[rng.integers(len(SHAPES))]
    pts, nrm = _primitive(kind, rng, 2 * points_per_part)
    R = random_rotation(rng)
    pts, nrm = rotate(R, pts), rotate(R, nrm)
    pts = pts - pts.mean(axis=0)
    for _ in range(max_tries):
        normal = rng.normal(size=3)
        normal /= np.linalg.norm(normal)
        try:
            parts = _split_by_plane(pts, nrm, normal, 0.0)
        except DegeneratePartition:
            continue
        meta = {"shape": kind, "cut_normal": normal.tolist(), "source_points": pts, "source_normals": nrm}
        return _make_sample(name, [p for p, _ in parts], [n for _, n in parts], rng, meta)
    raise DegeneratePartition(f"{name}: no valid cut after {max_tries} tries")


def generate_registration_pair(spec: DatasetSpec) -> list:
    """Primitive shapes split in two by a random plane through the centroid."""
    return [generate_registration_sample(f"reg_{k:05d}", spec.points_per_part, rng)
            for k, rng in enumerate(_per_sample_rngs(spec.seed, spec.count))]


def generate_multipart_sample(name, points_per_part, num_parts, rng, leg_shape=None):
    """A slab supported by ``num_parts - 1`` identical legs touching its underside.

    All legs reuse one local sampling, so they are congruent point for point.
    """
    if num_parts < 2:
        raise ValueError("num_parts must be >= 2")
    n_legs = num_parts - 1
    top_ext = np.array([rng.uniform(0.6, 1.2), rng.uniform(0.6, 1.2), rng.uniform(0.04, 0.1)])
    leg_h = rng.uniform(0.3, 0.8)
    leg_shape = leg_shape or ("box", "cylinder")[rng.integers(2)]
    leg_w = rng.uniform(0.05, 0.1)
    top_pts, top_nrm = sample_box_surface(top_ext, points_per_part, rng)
    top_pts = top_pts + np.array([0.0, 0.0, leg_h + top_ext[2] / 2])
    if leg_shape == "box":
        leg_pts, leg_nrm = sample_box_surface([leg_w, leg_w, leg_h], points_per_part, rng)
    else:
        leg_pts, leg_nrm = sample_cylinder_surface(leg_w / 2, leg_h, points_per_part, rng)
    # a few guaranteed samples on the leg's top face; the slab gets a coincident
    # copy of them so every leg has a known contact patch
    n_cap = min(8, points_per_part // 4)
    if leg_shape == "box":
        cap = np.column_stack([rng.uniform(-leg_w / 2, leg_w / 2, size=(n_cap, 2)), np.full(n_cap, leg_h / 2)])
    else:
        rr = leg_w / 2 * np.sqrt(rng.uniform(size=n_cap))
        th = rng.uniform(0, 2 * np.pi, size=n_cap)
        cap = np.column_stack([rr * np.cos(th), rr * np.sin(th), np.full(n_cap, leg_h / 2)])
    leg_pts[:n_cap] = cap
    leg_nrm[:n_cap] = [0.0, 0.0, 1.0]
    leg_pts = leg_pts + np.array([0.0, 0.0, leg_h / 2])

    # legs evenly spaced on an ellipse inside the slab footprint
    phase = rng.uniform(0, 2 * np.pi)
    angles = phase + 2 * np.pi * np.arange(n_legs) / n_legs
    rx, ry = top_ext[0] / 2 - leg_w, top_ext[1] / 2 - leg_w
    parts_pts, parts_nrm = [top_pts], [top_nrm]
    for ang in angles:
        spin = axis_angle_rotation([0, 0, 1], rng.uniform(0, 2 * np.pi)) if leg_shape == "box" else np.eye(3)
        offset = np.array([rx * np.cos(ang), ry * np.sin(ang), 0.0])
        placed = rotate(spin, leg_pts) + offset
        parts_pts.append(placed)
        parts_nrm.append(rotate(spin, leg_nrm))
        parts_pts[0] = np.vstack([parts_pts[0], placed[:n_cap]])
        parts_nrm[0] = np.vstack([parts_nrm[0], np.tile([0.0, 0.0, -1.0], (n_cap, 1))])
    center = np.concatenate(parts_pts).mean(axis=0)
    parts_pts = [p - center for p in parts_pts]
    meta = {"leg_shape": leg_shape, "num_legs": n_legs}
    return _make_sample(name, parts_pts, parts_nrm, rng, meta)


def generate_multipart_toy(spec: DatasetSpec) -> list:
    lo, hi = spec.part_count_range
    out = []
    for k, rng in enumerate(_per_sample_rngs(spec.seed, spec.count)):
        h = int(rng.integers(lo, hi + 1))
        out.append(generate_multipart_sample(f"toy_{k:05d}", spec.points_per_part, h, rng))
    return out


def generate(spec: DatasetSpec) -> list:
    return {
        Task.CYLINDER: generate_cylinder,
        Task.REGISTRATION: generate_registration_pair,
        Task.MULTIPART: generate_multipart_toy,
    }[spec.task](spec)


def random_repose(sample: AssemblySample, rng) -> AssemblySample:
    """Fresh Haar rotation of every non-anchor condition part; poses updated to match."""
    parts, poses = [], []
    for part, pose in zip(sample.condition.parts, sample.poses):
        if part.anchor:
            parts.append(part)
            poses.append(pose)
            continue
        R = random_rotation(rng)
        extra = RigidTransform(R, np.zeros(3))
        parts.append(part.transformed(extra))
        poses.append(RigidTransform(pose.rotation @ R.T, pose.translation))
    cond = MultiPartCloud(parts, assembled=False)
    return AssemblySample(sample.name, sample.assembled, cond, poses, sample.meta)


# ---------------------------------------------------------------------------
# File formats

MPC_VERSION = 1


def _fmt(x):
    return "%.17g" % x


def write_mpc(path, cloud: MultiPartCloud):
    cloud.validate()
    lines = [f"MPC {MPC_VERSION}", f"parts {cloud.num_parts} assembled {int(cloud.assembled)}"]
    for p in cloud.parts:
        has_n = p.normals is not None
        lines.append(f"part {p.part_index} n {len(p)} anchor {int(p.anchor)} normals {int(has_n)}")
        rows = np.hstack([p.points, p.normals]) if has_n else p.points
        lines.extend(" ".join(_fmt(v) for v in row) for row in rows)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def _expect(tokens, keys, lineno):
    """Parse ``key value key value ...`` with the given keys in order."""
    if len(tokens) != 2 * len(keys) or any(tokens[2 * i] != k for i, k in enumerate(keys)):
        raise ParseError(f"expected '{' '.join(k + ' <v>' for k in keys)}', got '{' '.join(tokens)}'", lineno)
    try:
        return [int(tokens[2 * i + 1]) for i in range(len(keys))]
    except ValueError as e:
        raise ParseError(f"bad integer field: {e}", lineno) from None


def read_mpc(path) -> MultiPartCloud:
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", 1)
    head = lines[0].split()
    if len(head) != 2 or head[0] != "MPC":
        raise ParseError("missing 'MPC <version>' header", 1)
    if head[1] != str(MPC_VERSION):
        raise VersionMismatch(f"unsupported MPC version {head[1]} (expected {MPC_VERSION})")
    if len(lines) < 2:
        raise ParseError("truncated file: missing parts line", 2)
    n_parts, assembled = _expect(lines[1].split(), ["parts", "assembled"], 2)
    ln = 2
    parts = []
    for _ in range(n_parts):
        if ln >= len(lines):
            raise ParseError("truncated file: missing part header", ln + 1)
        i, n, anchor, has_n = _expect(lines[ln].split(), ["part", "n", "anchor", "normals"], ln + 1)
        ln += 1
        width = 6 if has_n else 3
        if ln + n > len(lines):
            raise ParseError(f"truncated file: part {i} declares {n} rows, found {len(lines) - ln}", len(lines) + 1)
        rows = np.empty((n, width))
        for r in range(n):
            toks = lines[ln + r].split()
            if len(toks) != width:
                raise ParseError(f"expected {width} values, got {len(toks)}", ln + r + 1)
            try:
                rows[r] = [float(t) for t in toks]
            except ValueError as e:
                raise ParseError(str(e), ln + r + 1) from None
        ln += n
        parts.append(Part(rows[:, :3], i, bool(anchor), rows[:, 3:] if has_n else None))
    if ln != len(lines):
        raise ParseError("trailing content after last part", ln + 1)
    return MultiPartCloud(parts, bool(assembled)).validate()


def write_pose(path, poses):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i, T in enumerate(poses):
            vals = list(T.rotation.reshape(-1)) + list(T.translation)
            f.write(f"{i} " + " ".join(_fmt(v) for v in vals) + "\n")


def read_pose(path) -> list:
    poses = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            toks = line.split()
            if not toks:
                continue
            if len(toks) != 13:
                raise ParseError(f"pose line needs 13 fields, got {len(toks)}", lineno)
            try:
                i = int(toks[0])
                vals = np.array([float(t) for t in toks[1:]])
            except ValueError as e:
                raise ParseError(str(e), lineno) from None
            if i != len(poses):
                raise ParseError(f"expected part index {len(poses)}, got {i}", lineno)
            poses.append(RigidTransform(vals[:9].reshape(3, 3), vals[9:]))
    return poses


def write_sample(directory, sample: AssemblySample):
    base = os.path.join(directory, sample.name)
    write_mpc(base + ".mpc", sample.condition)
    write_mpc(base + ".gt.mpc", sample.assembled)
    write_pose(base + ".pose", sample.poses)


def read_sample(directory, name) -> AssemblySample:
    base = os.path.join(directory, name)
    cond = read_mpc(base + ".mpc")
    gt_path = base + ".gt.mpc"
    poses = read_pose(base + ".pose") if os.path.exists(base + ".pose") else None
    if os.path.exists(gt_path):
        assembled = read_mpc(gt_path)
    elif poses is not None:
        assembled = cond.transformed(poses, assembled=True)
    else:
        assembled = None
    return AssemblySample(name, assembled, cond, poses)


def list_samples(directory):
    names = []
    for fn in sorted(os.listdir(directory)):
        if fn.endswith(".mpc") and not fn.endswith(".gt.mpc") and not fn.endswith(".pred.mpc"):
            names.append(fn[:-4])
    return names


def write_dataset(directory, samples):
    os.makedirs(directory, exist_ok=True)
    for s in samples:
        write_sample(directory, s)


def read_dataset(directory) -> list:
    return [read_sample(directory, n) for n in list_samples(directory)]
