"""Pose, shape and rigidity metrics for predicted assemblies.

Lengths are computed in meters; the report writer converts to centimeters.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, EmptySet
from .geometry import (
    RigidTransform,
    apply_transform,
    chamfer_distance,
    check_rotation,
    kabsch_solve,
    object_scale,
    rotation_geodesic_deg,
)

OR_TAUS_CM = (0.1, 0.2, 0.5, 1.0, 2.0)
RE_RECALL_DEG = 5.0
TE_RECALL_M = 0.01
PART_ACC_CD_M = 0.01


def pose_errors(predicted: RigidTransform, truth: RigidTransform):
    """(rotation error in degrees, translation error in length units)."""
    check_rotation(predicted.rotation)
    check_rotation(truth.rotation)
    re = rotation_geodesic_deg(predicted.rotation, truth.rotation)
    te = float(np.linalg.norm(predicted.translation - truth.translation))
    return re, te


def recall_at(values, threshold) -> float:
    """Fraction of values strictly below ``threshold``."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptySet("recall over an empty list")
    return float(np.mean(values < threshold))


def part_accuracy(per_object_cds, threshold=PART_ACC_CD_M) -> float:
    """Mean over objects of the fraction of parts with Chamfer distance below threshold."""
    if len(per_object_cds) == 0:
        raise EmptySet("part accuracy over an empty dataset")
    scores = []
    for cds in per_object_cds:
        if len(cds) == 0:
            raise EmptySet("object without parts")
        scores.append(np.mean(np.asarray(cds, dtype=np.float64) < threshold))
    return float(np.mean(scores))


@dataclass
class RigidityResult:
    rmse: float
    overlap_ratio: dict  # tau (cm) -> fraction
    relative_rmse: float
    scale: float


def rigidity_metrics(predicted, truth, taus_cm=OR_TAUS_CM, scale=None) -> RigidityResult:
    """Shape error of a predicted part after Kabsch-aligning it onto the truth.

    ``scale`` is the object scale D of the ground-truth assembled object; the
    part's own scale is used when it is not given.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    T = kabsch_solve(predicted, truth)
    res = np.linalg.norm(apply_transform(T, predicted) - truth, axis=1)
    rmse = float(np.sqrt(np.mean(res ** 2)))
    ors = {tau: float(np.mean(res < tau / 100.0)) for tau in taus_cm}
    D = object_scale(truth) if scale is None else float(scale)
    return RigidityResult(rmse, ors, rmse / D, D)


# ---------------------------------------------------------------------------
# Dataset evaluation


@dataclass
class PartRecord:
    obj: str
    part: int
    anchor: bool
    re_deg: float = math.nan
    te: float = math.nan
    cd: float = math.nan
    rmse: float = math.nan
    relative_rmse: float = math.nan
    overlap_ratio: dict = field(default_factory=dict)
    error: str = ""


@dataclass
class EvalRecord:
    parts: list
    scales: dict  # object -> D
    failures: dict = field(default_factory=dict)  # object -> message

    def objects(self):
        seen = []
        for r in self.parts:
            if r.obj not in seen:
                seen.append(r.obj)
        return seen

    def per_object_cds(self):
        groups = {}
        for r in self.parts:
            groups.setdefault(r.obj, []).append(r.cd if np.isfinite(r.cd) else np.inf)
        return [groups[o] for o in self.objects()]

    def aggregate(self):
        moving = [r for r in self.parts if not r.anchor]
        re = np.array([r.re_deg if np.isfinite(r.re_deg) else 180.0 for r in moving])
        te = np.array([r.te if np.isfinite(r.te) else np.inf for r in moving])
        rm = [r.rmse for r in moving if np.isfinite(r.rmse)]
        rel = [r.relative_rmse for r in moving if np.isfinite(r.relative_rmse)]
        agg = {
            "objects": len(self.objects()),
            "parts": len(self.parts),
            "part_accuracy": part_accuracy(self.per_object_cds()),
            "re_mean_deg": float(np.mean(re)) if len(re) else 0.0,
            "te_mean_cm": float(np.mean(te)) * 100 if len(te) else 0.0,
            "recall_re_5deg": recall_at(re, RE_RECALL_DEG) if len(re) else 1.0,
            "recall_te_1cm": recall_at(te, TE_RECALL_M) if len(te) else 1.0,
            "cd_mean_cm": float(np.mean([min(r.cd, 1e9) for r in self.parts])) * 100,
            "rmse_mean_cm": float(np.mean(rm)) * 100 if rm else 0.0,
            "relative_rmse_mean": float(np.mean(rel)) if rel else 0.0,
            "scale_mean_cm": float(np.mean(list(self.scales.values()))) * 100 if self.scales else 0.0,
            "failures": len(self.failures),
        }
        for tau in OR_TAUS_CM:
            vals = [r.overlap_ratio[tau] for r in moving if tau in r.overlap_ratio]
            agg[f"or_{tau:g}cm"] = float(np.mean(vals)) if vals else 1.0
        return agg


def evaluate_sample(sample, pred_points, pred_indices, pred_poses, taus_cm=OR_TAUS_CM):
    """Per-part records for one object.

    ``pred_points[i]`` are predicted assembled positions of condition rows
    ``pred_indices[i]``; ``pred_poses[i]`` the recovered transform (None on failure).
    """
    D = object_scale(sample.assembled.points())
    out = []
    for k, (cpart, gpart) in enumerate(zip(sample.condition.parts, sample.assembled.parts)):
        rec = PartRecord(sample.name, cpart.part_index, cpart.anchor)
        pose = pred_poses[k]
        if pose is None:
            rec.error = "degenerate"
            out.append(rec)
            continue
        rec.re_deg, rec.te = pose_errors(pose, sample.poses[k])
        rec.cd = chamfer_distance(apply_transform(pose, cpart.points), gpart.points)
        idx = pred_indices[k]
        truth = apply_transform(sample.poses[k], cpart.points[idx])
        try:
            rig = rigidity_metrics(pred_points[k], truth, taus_cm, scale=D)
            rec.rmse, rec.relative_rmse, rec.overlap_ratio = rig.rmse, rig.relative_rmse, rig.overlap_ratio
        except DegenerateGeometry as e:
            rec.error = f"rigidity: {e}"
        out.append(rec)
    return out, D


def evaluate_dataset(predictor, dataset, taus_cm=OR_TAUS_CM) -> EvalRecord:
    """Run ``predictor(sample) -> (points, indices, poses)`` on every sample and collect metrics.

    A predictor that raises marks every part of that object as failed; the
    remaining samples still run.
    """
    parts, scales, failures = [], {}, {}
    for sample in dataset:
        try:
            pts, idx, poses = predictor(sample)
            recs, D = evaluate_sample(sample, pts, idx, poses, taus_cm)
        except Exception as e:  # noqa: BLE001 - recorded per sample
            failures[sample.name] = f"{type(e).__name__}: {e}"
            recs = [PartRecord(sample.name, p.part_index, p.anchor, error=type(e).__name__)
                    for p in sample.condition.parts]
            D = object_scale(sample.assembled.points())
        parts.extend(recs)
        scales[sample.name] = D
    return EvalRecord(parts, scales, failures)


def oracle_predictor(sample):
    """Ground truth as prediction: every row of every part at its true place."""
    idx = [np.arange(len(p)) for p in sample.condition.parts]
    pts = [apply_transform(T, p.points) for T, p in zip(sample.poses, sample.condition.parts)]
    return pts, idx, list(sample.poses)


# ---------------------------------------------------------------------------
# Report file

REPORT_COLUMNS = ["object", "part", "anchor", "re_deg", "te_cm", "cd_cm", "rmse_cm", "relative_rmse"] + [
    f"or_{t:g}cm" for t in OR_TAUS_CM] + ["error"]


def _num(x):
    return "nan" if not np.isfinite(x) else repr(float(x))


def format_report(record: EvalRecord) -> str:
    buf = io.StringIO()
    buf.write("\t".join(REPORT_COLUMNS) + "\n")
    for r in record.parts:
        row = [r.obj, str(r.part), str(int(r.anchor)), _num(r.re_deg), _num(r.te * 100), _num(r.cd * 100),
               _num(r.rmse * 100), _num(r.relative_rmse)]
        row += [_num(r.overlap_ratio.get(t, math.nan)) for t in OR_TAUS_CM]
        row.append(r.error)
        buf.write("\t".join(row) + "\n")
    buf.write("#AGGREGATE\n")
    for k, v in record.aggregate().items():
        buf.write(f"{k}\t{v!r}\n")
    return buf.getvalue()


def write_report(path, record: EvalRecord):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_report(record))


def read_report(path):
    """Parse a report into (rows as dicts, aggregate dict)."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    table, _, agg_text = text.partition("#AGGREGATE\n")
    rows = list(csv.DictReader(io.StringIO(table), delimiter="\t"))
    agg = {}
    for line in agg_text.splitlines():
        if line:
            k, v = line.split("\t")
            agg[k] = float(v)
    return rows, agg


def aggregate_from_rows(rows):
    """Recompute the headline aggregates from report rows (cm units)."""
    objs = {}
    for r in rows:
        objs.setdefault(r["object"], []).append(float(r["cd_cm"]) / 100 if r["cd_cm"] != "nan" else np.inf)
    moving = [r for r in rows if r["anchor"] == "0"]
    re = np.array([float(r["re_deg"]) if r["re_deg"] != "nan" else 180.0 for r in moving])
    te = np.array([float(r["te_cm"]) / 100 if r["te_cm"] != "nan" else np.inf for r in moving])
    return {
        "part_accuracy": part_accuracy(list(objs.values())),
        "recall_re_5deg": recall_at(re, RE_RECALL_DEG) if len(re) else 1.0,
        "recall_te_1cm": recall_at(te, TE_RECALL_M) if len(te) else 1.0,
    }
