"""The ten acceptance criteria, each reported as one pass/fail line in the summary.

The cylinder study (criteria 6 and 9) trains the desk-scale model once per session
and dominates the runtime of this file.
"""
import time

import numpy as np
import pytest
import torch

from rpflow.data import DatasetSpec, _make_sample, generate
from rpflow.encoder import OverlapEncoder, PretrainConfig, augment_parts, bce_with_logits, make_batch, sample_labels
from rpflow.errors import DegenerateGeometry
from rpflow.experiment import CylinderStudy, evaluate_schemes, run_cylinder_study
from rpflow.flow import (
    NetworkConfig,
    TrainConfig,
    VelocityNetwork,
    cfm_loss,
    collate,
    infer,
    infer_batch,
    make_flow_sample,
    train,
)
from rpflow.geometry import (
    RigidTransform,
    apply_transform,
    axis_angle_rotation,
    kabsch_solve,
    object_scale,
    overlap_labels_bruteforce,
    overlap_labels_grid,
    random_rotation,
    rotation_geodesic_deg,
)
from rpflow.metrics import OR_TAUS_CM, rigidity_metrics
from rpflow.symmetry import (
    CANDIDATE_ORDERS,
    apply_group_element,
    distribution_invariance_test,
    find_identical_parts,
    find_stabilizer,
)

from .conftest import ACCEPTANCE
from .fd import check_module_gradients, randomize_parameters
from .test_cli import pipeline
from .test_flow import oracle_field
from .test_symmetry import _unit_rows, grid_box, orbit_cylinder, random_element

# 30 minutes on 8 threads, scaled to the threads actually available
BUDGET_SECONDS = 30 * 60 * 8 / max(1, min(8, torch.get_num_threads()))


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, detail


def test_01_procrustes_oracle():
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst_re = worst_te = 0.0
    for _ in range(1000):
        src = rng.normal(size=(50, 3))
        T = RigidTransform(random_rotation(rng), rng.normal(size=3) * 2)
        got = kabsch_solve(src, apply_transform(T, src))
        worst_re = max(worst_re, rotation_geodesic_deg(got.rotation, T.rotation))
        worst_te = max(worst_te, float(np.linalg.norm(got.translation - T.translation)))
    seconds = time.perf_counter() - start
    raised = 0
    for bad in (np.zeros((10, 3)), np.outer(np.linspace(0, 1, 10), [1.0, 2.0, 3.0]), np.ones((1, 3))):
        try:
            kabsch_solve(bad, bad)
        except DegenerateGeometry:
            raised += 1
    record(1, worst_re < 1e-7 and worst_te < 1e-9 and raised == 3 and seconds < 5,
           f"max RE {worst_re:.1e} deg, max TE {worst_te:.1e} m, {raised}/3 degenerate raised, {seconds:.2f} s")


def test_02_overlap_labels_match_bruteforce():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    equal = 0
    for _ in range(100):
        n = int(rng.integers(2, 1025))
        parts = int(rng.integers(2, 6))
        pts = rng.normal(size=(n, 3)) * rng.uniform(0.1, 2.0)
        ids = rng.integers(0, parts, size=n)
        eps = float(rng.uniform(0.01, 0.5))
        equal += np.array_equal(overlap_labels_grid(pts, ids, eps), overlap_labels_bruteforce(pts, ids, eps))
    seconds = time.perf_counter() - start
    record(2, equal == 100 and seconds < 30, f"{equal}/100 scenes identical, {seconds:.2f} s")


def test_03_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    sample = generate(DatasetSpec("cylinder", count=1, points_per_part=32, seed=2))[0]
    torch.manual_seed(0)
    net = VelocityNetwork(NetworkConfig(feature_dim=4, hidden=16, heads=2, blocks=2))
    randomize_parameters(net, seed=1)
    flows = [make_flow_sample(sample, 8, rng)]
    batch = collate(flows, features=torch.from_numpy(rng.normal(size=(1, 16, 4))))
    net_err = check_module_gradients(
        net, lambda: cfm_loss(net(*batch.model_inputs()), batch.target, batch.anchor, batch.valid), max_entries=64)

    torch.manual_seed(3)
    enc = OverlapEncoder(feature_dim=6, num_layers=3)
    data = generate(DatasetSpec("registration", count=2, points_per_part=16, seed=1))
    labels = [sample_labels(s, PretrainConfig()).astype(float) for s in data]
    P, N, I, V, Y = make_batch([augment_parts(s.assembled, rng, 0.5) for s in data], labels, rng, 8)
    enc_err = check_module_gradients(enc, lambda: bce_with_logits(enc.logits(enc(P, N, I, V)), Y, V.double()),
                                     max_entries=64)
    seconds = time.perf_counter() - start
    record(3, net_err < 1e-4 and enc_err < 1e-4 and seconds < 120,
           f"worst relative error: velocity net {net_err:.1e}, encoder {enc_err:.1e}, {seconds:.1f} s")


def test_04_euler_exactness():
    sample = generate(DatasetSpec("multipart", count=1, points_per_part=48, seed=3, part_count_range=(3, 4)))[0]
    worst = 0.0
    for K in (1, 5, 20):
        rng = np.random.default_rng(K)
        f = make_flow_sample(sample, 32, rng)
        z = rng.standard_normal(f.x0.shape)
        pred = infer(None, None, sample.condition, K=K, noise=z, indices=f.sample_indices,
                     velocity_fn=oracle_field(sample.condition, f.x0, z))
        worst = max(worst, float(np.abs(np.concatenate(pred.points) - f.x0).max()))
    record(4, worst < 1e-9, f"max |x_hat0 - x0| over K in (1, 5, 20): {worst:.1e}")


def legged_sample():
    slab = grid_box(1.0, 0.6, 0.1, step=0.05) + [0.0, 0.0, 0.25]
    leg = orbit_cylinder(0.04, 0.4, n_base=6, folds=12, seed=1)
    parts = [slab] + [leg + [x, y, 0.0] for x in (-0.4, 0.4) for y in (-0.2, 0.2)]
    return _make_sample("legged", parts, [_unit_rows(p - p.mean(0)) for p in parts], np.random.default_rng(4))


def test_05_symmetry_invariance():
    s = legged_sample()
    classes = find_identical_parts(s.assembled)
    stabs = [find_stabilizer(p.points) for p in s.assembled.parts]
    rng = np.random.default_rng(5)
    worst, swaps, rotations = 0.0, 0, 0
    for _ in range(1000):
        f = make_flow_sample(s, 8, rng)
        pred = f.target_velocity + rng.normal(size=f.target_velocity.shape)
        pred[f.anchor_mask] = 0.0
        g = random_element(rng, classes, stabs)
        swaps += not np.array_equal(g.permutation, np.arange(len(stabs)))
        rotations += any(not np.array_equal(R, np.eye(3)) for R in g.rotations)
        gf = apply_group_element(g, f, classes=classes)
        after = cfm_loss(apply_group_element(g, pred, f.part_indices), gf.target_velocity, gf.anchor_mask)
        worst = max(worst, abs(after - cfm_loss(pred, f.target_velocity, f.anchor_mask)))

    cylinder = orbit_cylinder()
    stab = find_stabilizer(cylinder)
    tests = []
    for k in CANDIDATE_ORDERS:
        R = axis_angle_rotation([0, 0, 1], 2 * np.pi / k)
        found = any(rotation_geodesic_deg(R, S) < 1e-6 for S in stab)
        tests.append(found and distribution_invariance_test(cylinder, R, n=10_000, alpha=0.01, rng=k).passed)
    record(5, worst < 1e-12 and swaps > 0 and rotations > 0 and all(tests),
           f"max loss change {worst:.1e} ({swaps} swaps, {rotations} rotations); "
           f"energy tests passed {sum(tests)}/{len(tests)} stabilizer turns")


@pytest.fixture(scope="session")
def study():
    return run_cylinder_study(CylinderStudy())


def test_06_cylinder_experiment(study):
    acc = study.part_accuracy
    ood = [acc["axial"], acc["random"]]
    seconds = study.seconds["total"]
    loss_ratio = np.mean(study.train_losses[-100:]) / np.mean(study.train_losses[:20])
    summary = (f"PA horizontal {acc['horizontal']:.1%}, axial {acc['axial']:.1%}, random {acc['random']:.1%}; "
               f"loss ratio {loss_ratio:.2f}; {seconds / 60:.1f} min on {torch.get_num_threads()} thread(s)")
    full = acc["horizontal"] >= 0.9 and min(ood) >= 0.6 and acc["horizontal"] >= max(ood)
    if seconds <= BUDGET_SECONDS:
        record(6, full, summary)
    else:
        record(6, full or (loss_ratio <= 0.25 and acc["horizontal"] >= 0.75), summary + " (over budget: fallback rule)")


def test_07_anchor_contract():
    data = generate(DatasetSpec("multipart", count=4, points_per_part=48, seed=7, part_count_range=(2, 4)))
    torch.manual_seed(0)
    model = VelocityNetwork(NetworkConfig(feature_dim=0, hidden=16, heads=2, blocks=1))
    randomize_parameters(model, seed=2)
    seen = []

    def check(module, args, out):
        anchor = args[6]
        seen.append(bool(torch.all(out[anchor] == 0.0)) and bool(anchor.any()))

    handle = model.register_forward_hook(check)
    try:
        train(TrainConfig(steps=5, batch_size=3, points_per_part=8, lr=1e-2), data, None, model=model)
        train_calls = len(seen)
        preds = infer_batch(model, None, [s.condition for s in data], K=6, rng=np.random.default_rng(0), M=8)
    finally:
        handle.remove()
    exact = all(np.array_equal(p.points[s.condition.anchor_index],
                               s.condition.parts[s.condition.anchor_index].points[p.indices[s.condition.anchor_index]])
                for s, p in zip(data, preds))
    record(7, all(seen) and len(seen) == train_calls + 6 and exact,
           f"anchor velocity zero in {sum(seen)}/{len(seen)} forward calls; anchor output bit-exact: {exact}")


def test_08_rigidity_fixture():
    rng = np.random.default_rng(8)
    truth = rng.normal(size=(300, 3)) * 0.2
    moved = apply_transform(RigidTransform(random_rotation(rng), rng.normal(size=3)), truth)
    res = rigidity_metrics(moved, truth)
    v = rng.normal(size=(5000, 3))
    shell = v / np.linalg.norm(v, axis=1, keepdims=True)
    D = object_scale(np.vstack([shell, -shell]))
    ok = res.rmse < 1e-12 and all(res.overlap_ratio[t] == 1.0 for t in OR_TAUS_CM) and abs(D - 2.0) < 1e-9
    record(8, ok, f"RMSE {res.rmse:.1e} m, OR {[res.overlap_ratio[t] for t in OR_TAUS_CM]}, sphere D {D:.12f}")


def test_09_more_steps_no_worse(study):
    cfg = CylinderStudy()
    ID = {"horizontal": study.test_sets["horizontal"]}
    _, cd1 = evaluate_schemes(study.model, study.encoder, ID, 1, cfg.eval_points, cfg.seed)
    _, cd20 = evaluate_schemes(study.model, study.encoder, ID, 20, cfg.eval_points, cfg.seed)
    record(9, cd20["horizontal"] <= cd1["horizontal"],
           f"mean ID part CD: K=1 {cd1['horizontal'] * 100:.2f} cm, K=20 {cd20['horizontal'] * 100:.2f} cm")


def test_10_end_to_end_determinism(tmp_path, capsys):
    _, _, _, a = pipeline(tmp_path / "one", capsys)
    _, _, _, b = pipeline(tmp_path / "two", capsys)
    same = open(a, "rb").read() == open(b, "rb").read()
    record(10, same, f"two seeded CLI runs produce {'identical' if same else 'different'} reports")
