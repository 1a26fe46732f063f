"""Overlap-aware point encoder and its pretraining loop.

The encoder maps every point of a multi-part cloud to a feature vector from the
point's coordinates (relative to its part centroid) and normal, pooled
statistics of its own part and pooled statistics of the whole cloud. Pretraining teaches it to predict which points
touch another part once the object is assembled, under random per-part rigid
motions, so its features carry pose-invariant contact cues.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import tensorio
from .errors import NonFiniteLoss, ShapeMismatch
from .geometry import MultiPartCloud, object_scale, overlap_labels, random_rotation

log = logging.getLogger(__name__)

DTYPE = torch.float64


def part_membership(part_ids, valid, num_parts=None):
    """One-hot ``(B, L, P)`` part membership with padded rows zeroed."""
    if num_parts is None:
        num_parts = int(part_ids.max().item()) + 1 if part_ids.numel() else 1
    onehot = torch.nn.functional.one_hot(part_ids.clamp(min=0), num_parts).to(DTYPE)
    return onehot * valid.unsqueeze(-1).to(DTYPE)


class PoolingLayer(nn.Module):
    """Per-point transform followed by part-mean, part-max and global-mean context."""

    def __init__(self, d_in, d_out, use_global=True):
        super().__init__()
        self.point = nn.Linear(d_in, d_out, dtype=DTYPE)
        self.mix = nn.Linear(4 * d_out, d_out, dtype=DTYPE)
        self.use_global = use_global

    def forward(self, x, memb, valid):
        h = nn.functional.silu(self.point(x))
        vm = valid.unsqueeze(-1).to(DTYPE)
        counts = memb.sum(1).clamp(min=1.0)  # (B, P)
        part_mean = memb.transpose(1, 2) @ h / counts.unsqueeze(-1)  # (B, P, d)
        masked = h.unsqueeze(1).masked_fill(memb.transpose(1, 2).unsqueeze(-1) == 0, float("-inf"))
        part_max = masked.amax(2)
        part_max = torch.where(torch.isfinite(part_max), part_max, torch.zeros_like(part_max))
        glob = (h * vm).sum(1, keepdim=True) / vm.sum(1, keepdim=True).clamp(min=1.0)
        if not self.use_global:
            glob = torch.zeros_like(glob)
        ctx = torch.cat([h, memb @ part_mean, memb @ part_max, glob.expand_as(h)], dim=-1)
        return self.mix(ctx)


class OverlapEncoder(nn.Module):
    def __init__(self, feature_dim=64, num_layers=3, in_dim=6):
        super().__init__()
        self.feature_dim = feature_dim
        self.num_layers = num_layers
        self.in_dim = in_dim
        dims = [in_dim] + [feature_dim] * num_layers
        self.layers = nn.ModuleList(PoolingLayer(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.head = nn.Sequential(
            nn.Linear(feature_dim, feature_dim, dtype=DTYPE),
            nn.SiLU(),
            nn.Linear(feature_dim, 1, dtype=DTYPE),
        )

    def set_global_branch(self, enabled: bool):
        for layer in self.layers:
            layer.use_global = enabled

    def forward(self, points, normals, part_ids, valid=None):
        """Per-point features for a padded batch ``(B, L, 3)``."""
        if points.shape != normals.shape or points.shape[:2] != part_ids.shape:
            raise ShapeMismatch(f"points {tuple(points.shape)}, normals {tuple(normals.shape)}, "
                                f"part ids {tuple(part_ids.shape)} disagree")
        if valid is None:
            valid = torch.ones(part_ids.shape, dtype=torch.bool)
        memb = part_membership(part_ids, valid)
        # coordinates relative to the part centroid: translation of a part never changes its features
        counts = memb.sum(1).clamp(min=1.0).unsqueeze(-1)
        centroids = memb.transpose(1, 2) @ points / counts
        rel = points - memb @ centroids
        # scaled by the part RMS radius so coordinates and normals share a range
        radius = torch.sqrt(memb.transpose(1, 2) @ rel.pow(2).sum(-1, keepdim=True) / counts + 1e-12)
        x = torch.cat([rel / (memb @ radius).clamp(min=1e-6), normals], dim=-1)
        for layer in self.layers:
            x = layer(x, memb, valid)
        return x

    def logits(self, features):
        return self.head(features).squeeze(-1)

    # -- checkpoint ----------------------------------------------------------

    def save(self, path):
        tensors = {"config.feature_dim": self.feature_dim, "config.num_layers": self.num_layers,
                   "config.in_dim": self.in_dim}
        tensors.update({k: v.detach().numpy() for k, v in self.state_dict().items()})
        tensorio.save_tensors(path, tensorio.ENCODER_MAGIC, tensors)

    @classmethod
    def load(cls, path):
        t = tensorio.load_tensors(path, tensorio.ENCODER_MAGIC)
        enc = cls(*(int(t.pop(f"config.{k}").item()) for k in ("feature_dim", "num_layers", "in_dim")))
        enc.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in t.items()})
        return enc.requires_grad_(False).eval()


def _cloud_tensors(cloud: MultiPartCloud):
    pts = cloud.points()
    nrm = (np.concatenate([p.normals for p in cloud.parts]) if cloud.has_normals() else np.zeros_like(pts))
    ids = cloud.part_ids()
    return (torch.from_numpy(pts)[None], torch.from_numpy(nrm)[None], torch.from_numpy(ids).long()[None])


def encode(encoder: OverlapEncoder, cloud: MultiPartCloud) -> np.ndarray:
    """``(N, d)`` features in ``cloud.points()`` row order."""
    if any(len(p) == 0 for p in cloud.parts):
        raise ShapeMismatch("every part needs at least one point")
    with torch.no_grad():
        return encoder(*_cloud_tensors(cloud))[0].numpy()


def predict_overlap(encoder: OverlapEncoder, features) -> np.ndarray:
    with torch.no_grad():
        return torch.sigmoid(encoder.logits(torch.as_tensor(features, dtype=DTYPE))).numpy()


LOGIT_CLAMP = 40.0


def bce_with_logits(logits, labels, weights=None):
    logits = logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    per = nn.functional.binary_cross_entropy_with_logits(logits, labels.to(DTYPE), reduction="none")
    if weights is None:
        return per.mean()
    return (per * weights).sum() / weights.sum()


def bce_loss(probabilities, labels):
    """Mean binary cross-entropy of probabilities against {0, 1} labels."""
    p = torch.as_tensor(probabilities, dtype=DTYPE)
    logits = torch.log(p) - torch.log1p(-p)
    return bce_with_logits(logits, torch.as_tensor(labels))


# ---------------------------------------------------------------------------
# Pretraining


@dataclass
class PretrainConfig:
    epsilon_scale: float = 0.025  # overlap radius as a fraction of object scale D
    epsilon: float | None = None  # absolute radius, overrides epsilon_scale
    lr: float = 1e-3
    steps: int = 500
    batch_size: int = 8
    points_per_part: int = 128
    translation_range: float = 0.5
    augment: bool = True
    weight_decay: float = 1e-4
    feature_dim: int = 64
    num_layers: int = 3
    seed: int = 0


def sample_labels(sample, cfg: PretrainConfig):
    eps = cfg.epsilon if cfg.epsilon is not None else cfg.epsilon_scale * object_scale(sample.assembled.points())
    return overlap_labels(sample.assembled, eps)


def augment_parts(cloud: MultiPartCloud, rng, translation_range):
    """Independent Haar rotation and uniform translation per part."""
    from .geometry import RigidTransform

    transforms = {p.part_index: RigidTransform(random_rotation(rng),
                                               rng.uniform(-translation_range, translation_range, size=3))
                  for p in cloud.parts}
    return cloud.transformed(transforms, assembled=False)


def make_batch(clouds, label_sets=None, rng=None, points_per_part=None):
    """Pad clouds into batch tensors; optionally subsample ``points_per_part`` rows per part."""
    rows = []
    for k, cloud in enumerate(clouds):
        pts, nrm, ids, lab = [], [], [], []
        offset = 0
        for p in cloud.parts:
            idx = np.arange(len(p)) if points_per_part is None else rng.integers(0, len(p), size=points_per_part)
            pts.append(p.points[idx])
            nrm.append(p.normals[idx] if p.normals is not None else np.zeros((len(idx), 3)))
            ids.append(np.full(len(idx), p.part_index))
            if label_sets is not None:
                lab.append(label_sets[k][offset + idx])
            offset += len(p)
        rows.append((np.concatenate(pts), np.concatenate(nrm), np.concatenate(ids),
                     np.concatenate(lab) if lab else None))
    L = max(len(r[0]) for r in rows)
    B = len(rows)
    P = np.zeros((B, L, 3))
    N = np.zeros((B, L, 3))
    I = np.zeros((B, L), dtype=np.int64)
    V = np.zeros((B, L), dtype=bool)
    Y = np.zeros((B, L))
    for b, (p, n, i, y) in enumerate(rows):
        P[b, :len(p)], N[b, :len(p)], I[b, :len(p)], V[b, :len(p)] = p, n, i, True
        if y is not None:
            Y[b, :len(p)] = y
    return (torch.from_numpy(P), torch.from_numpy(N), torch.from_numpy(I), torch.from_numpy(V), torch.from_numpy(Y))


def pretrain(cfg: PretrainConfig, dataset, encoder=None, callback=None):
    """Train encoder + overlap head with BCE; returns (frozen encoder, loss log)."""
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    if encoder is None:
        encoder = OverlapEncoder(cfg.feature_dim, cfg.num_layers)
    encoder.requires_grad_(True).train()
    labels = [sample_labels(s, cfg).astype(np.float64) for s in dataset]
    opt = torch.optim.AdamW(encoder.parameters(), lr=cfg.lr, betas=(0.9, 0.999), weight_decay=cfg.weight_decay)
    losses = []
    for step in range(cfg.steps):
        pick = rng.integers(0, len(dataset), size=cfg.batch_size)
        clouds = []
        for k in pick:
            cloud = dataset[k].assembled
            clouds.append(augment_parts(cloud, rng, cfg.translation_range) if cfg.augment else cloud)
        P, N, I, V, Y = make_batch(clouds, [labels[k] for k in pick], rng, cfg.points_per_part)
        loss = bce_with_logits(encoder.logits(encoder(P, N, I, V)), Y, V.to(DTYPE))
        if not torch.isfinite(loss):
            raise NonFiniteLoss(f"pretrain step {step}: loss {loss.item()} (lr={cfg.lr})")
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if callback is not None:
            callback(step, losses[-1])
        if step % 100 == 0:
            log.info("pretrain step %d loss %.5f", step, losses[-1])
    return encoder.requires_grad_(False).eval(), losses


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties averaged)."""
    from scipy.stats import rankdata

    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
