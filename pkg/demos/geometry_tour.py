"""Rigid transforms, Procrustes recovery, rotation distance and Chamfer distance."""
import numpy as np

from rpflow.geometry import (
    RigidTransform,
    apply_transform,
    axis_angle_rotation,
    chamfer_distance,
    kabsch_solve,
    object_scale,
    random_rotation,
    rotation_geodesic_deg,
)

rng = np.random.default_rng(0)
cloud = rng.normal(size=(200, 3)) * [0.3, 0.2, 0.1]

# hide a rigid motion in the cloud, then get it back from the correspondences
secret = RigidTransform(random_rotation(rng), np.array([0.4, -0.1, 0.25]))
moved = apply_transform(secret, cloud)
found = kabsch_solve(cloud, moved)
print(f"rotation error  {rotation_geodesic_deg(found.rotation, secret.rotation):.2e} deg")
print(f"translation err {np.linalg.norm(found.translation - secret.translation):.2e} m")

# a 5 degree turn about z, measured two ways
turn = axis_angle_rotation([0, 0, 1], np.radians(5))
print(f"geodesic of a 5 degree turn: {rotation_geodesic_deg(turn, np.eye(3)):.6f}")
print(f"chamfer after that turn:     {chamfer_distance(cloud @ turn.T, cloud) * 100:.3f} cm")
print(f"object scale D:              {object_scale(cloud):.3f} m")
