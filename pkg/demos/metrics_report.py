"""Score a deliberately shaky predictor and print the aggregate report."""
import numpy as np

from rpflow.data import DatasetSpec, generate
from rpflow.geometry import RigidTransform, axis_angle_rotation
from rpflow.metrics import evaluate_dataset, format_report, oracle_predictor

data = generate(DatasetSpec("multipart", count=4, points_per_part=128, seed=2, part_count_range=(2, 4)))
rng = np.random.default_rng(0)


def shaky(sample):
    points, indices, poses = oracle_predictor(sample)
    jitter = lambda T: RigidTransform(axis_angle_rotation(rng.normal(size=3), np.radians(4)) @ T.rotation,
                                      T.translation + rng.normal(scale=0.006, size=3))
    return points, indices, [T if k == sample.condition.anchor_index else jitter(T) for k, T in enumerate(poses)]


record = evaluate_dataset(shaky, data)
for key, value in record.aggregate().items():
    print(f"{key:20s} {value:.4g}")
print(format_report(record).splitlines()[0])
