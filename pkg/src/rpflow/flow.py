"""Conditional rectified point flow: velocity network, training and sampling.

Each point travels on the straight line ``x(t) = (1 - t) x0 + t x1`` between its
assembled position ``x0`` and Gaussian noise ``x1``. The network regresses the
constant velocity ``x1 - x0`` from the noised cloud, the unposed condition
cloud and frozen encoder features; sampling integrates it from t=1 to t=0 with
uniform Euler steps. The anchor part never moves.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import tensorio
from .data import AssemblySample, random_repose
from .encoder import DTYPE, OverlapEncoder
from .errors import DegenerateGeometry, NonFiniteActivation, NonFiniteLoss, ShapeMismatch
from .geometry import MultiPartCloud, RigidTransform, apply_transform, kabsch_solve, sample_part_points

log = logging.getLogger(__name__)

DEFAULT_STEPS = 20


# ---------------------------------------------------------------------------
# Flow samples


@dataclass
class FlowSample:
    """Index-aligned rows of one multi-part flow realization (rows grouped by part)."""

    condition_points: np.ndarray
    condition_normals: np.ndarray
    part_indices: np.ndarray
    anchor_mask: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    t: float
    xt: np.ndarray
    target_velocity: np.ndarray
    sample_indices: list = field(default_factory=list)  # per part, rows of the source part

    def __len__(self):
        return len(self.x0)


def sample_timestep(rng, alpha=0.5, size=None):
    """U-shaped timestep law Beta(alpha, alpha), strictly inside (0, 1)."""
    t = rng.beta(alpha, alpha, size=size)
    bad = (t <= 0.0) | (t >= 1.0)
    while np.any(bad):
        if size is None:
            t = rng.beta(alpha, alpha)
        else:
            t[bad] = rng.beta(alpha, alpha, size=int(np.sum(bad)))
        bad = (t <= 0.0) | (t >= 1.0)
    return t


def make_flow_sample(sample: AssemblySample, M: int, rng, t=None, x1=None, time_alpha=0.5) -> FlowSample:
    """Sample M points per part and build the noised state at time ``t``.

    ``x0`` rows are the ground-truth poses applied to the sampled condition rows,
    so the condition/target correspondence is exact.
    """
    cond_pts, cond_nrm, ids, anchor, x0, picks = [], [], [], [], [], []
    for part, pose in zip(sample.condition.parts, sample.poses):
        idx = sample_part_points(part, M, rng)
        picks.append(idx)
        p = part.points[idx]
        cond_pts.append(p)
        cond_nrm.append(part.normals[idx] if part.normals is not None else np.zeros_like(p))
        ids.append(np.full(M, part.part_index))
        anchor.append(np.full(M, part.anchor))
        x0.append(p if part.anchor else apply_transform(pose, p))
    x0 = np.concatenate(x0)
    anchor = np.concatenate(anchor)
    if x1 is None:
        x1 = rng.standard_normal(x0.shape)
    x1 = np.asarray(x1, dtype=np.float64)
    if x1.shape != x0.shape:
        raise ShapeMismatch(f"noise shape {x1.shape} != {x0.shape}")
    if t is None:
        t = float(sample_timestep(rng, time_alpha))
    xt = (1.0 - t) * x0 + t * x1
    xt[anchor] = x0[anchor]
    v = x1 - x0
    v[anchor] = 0.0
    return FlowSample(np.concatenate(cond_pts), np.concatenate(cond_nrm), np.concatenate(ids), anchor,
                      x0, x1, float(t), xt, v, picks)


# ---------------------------------------------------------------------------
# Network


def fourier_frequencies(num_freqs):
    return 2.0 ** np.arange(num_freqs)


def positional_encode(raw, num_freqs=4):
    """Raw features followed by sin and cos at ``num_freqs`` octave frequencies.

    ``raw`` is ``(..., D)``; the output is ``(..., D * (2 * num_freqs + 1))`` laid out
    as ``[raw, sin(f_0 raw) .. sin(f_{F-1} raw), cos(f_0 raw) .. cos(f_{F-1} raw)]``
    with each frequency block holding all D dimensions.
    """
    as_numpy = not torch.is_tensor(raw)
    x = torch.as_tensor(np.asarray(raw, dtype=np.float64) if as_numpy else raw, dtype=DTYPE)
    freqs = torch.as_tensor(fourier_frequencies(num_freqs), dtype=DTYPE)
    ang = x.unsqueeze(-2) * freqs.unsqueeze(-1)  # (..., F, D)
    out = torch.cat([x, torch.sin(ang).flatten(-2), torch.cos(ang).flatten(-2)], dim=-1)
    return out.numpy() if as_numpy else out


def point_descriptor(cond, normals, xt, part_idx):
    """The 10-dim per-point vector: condition xyz, normal, noised xyz, part index."""
    return torch.cat([cond, normals, xt, part_idx.to(DTYPE).unsqueeze(-1)], dim=-1)


class RMSNorm(nn.Module):
    def __init__(self, dim, eps=1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.eps = eps

    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


class Attention(nn.Module):
    """Multi-head self-attention with per-head RMS-normalized queries and keys."""

    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise ValueError(f"hidden dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim, dtype=DTYPE)
        self.q_norm = RMSNorm(self.head_dim)
        self.k_norm = RMSNorm(self.head_dim)
        self.proj = nn.Linear(dim, dim, dtype=DTYPE)

    def forward(self, x, mask=None, groups=1):
        """``mask`` is a boolean (B, L, L) key mask or None for full attention.

        ``groups > 1`` splits the rows into that many contiguous equal blocks
        attended independently (the block-diagonal mask, without materializing it).
        """
        B, L, D = x.shape
        q, k, v = self.qkv(x).view(B, L, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k = self.q_norm(q), self.k_norm(k)
        if groups > 1:
            m = L // groups
            split = lambda a: a.reshape(B, self.heads, groups, m, self.head_dim).transpose(1, 2).reshape(
                B * groups, self.heads, m, self.head_dim)
            out = nn.functional.scaled_dot_product_attention(split(q), split(k), split(v))
            out = out.reshape(B, groups, self.heads, m, self.head_dim).transpose(1, 2).reshape(
                B, self.heads, L, self.head_dim)
        else:
            out = nn.functional.scaled_dot_product_attention(
                q, k, v, attn_mask=None if mask is None else mask.unsqueeze(1))
        return self.proj(out.transpose(1, 2).reshape(B, L, D))


def modulate(x, shift, scale):
    return x * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1)


class FlowBlock(nn.Module):
    """Part-wise attention, global attention and MLP, each under AdaLayerNorm."""

    def __init__(self, dim, heads, mlp_ratio=4):
        super().__init__()
        self.norms = nn.ModuleList(nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6, dtype=DTYPE)
                                   for _ in range(3))
        self.part_attn = Attention(dim, heads)
        self.global_attn = Attention(dim, heads)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim, dtype=DTYPE), nn.GELU(approximate="tanh"),
                                 nn.Linear(mlp_ratio * dim, dim, dtype=DTYPE))
        self.ada = nn.Sequential(nn.SiLU(), nn.Linear(dim, 9 * dim, dtype=DTYPE))

    def forward(self, h, c, part_mask, global_mask, groups=1):
        mods = self.ada(c).chunk(9, dim=-1)
        h = h + mods[2].unsqueeze(1) * self.part_attn(modulate(self.norms[0](h), mods[0], mods[1]),
                                                      part_mask, groups)
        h = h + mods[5].unsqueeze(1) * self.global_attn(modulate(self.norms[1](h), mods[3], mods[4]), global_mask)
        h = h + mods[8].unsqueeze(1) * self.mlp(modulate(self.norms[2](h), mods[6], mods[7]))
        return h


@dataclass
class NetworkConfig:
    feature_dim: int = 64  # encoder feature width
    hidden: int = 64
    heads: int = 4
    blocks: int = 2
    num_freqs: int = 4


def uniform_part_blocks(part_ids, valid):
    """Number of parts if every row holds parts 0..P-1 as equal contiguous blocks, else 1."""
    B, L = part_ids.shape
    if not bool(valid.all()):
        return 1
    P = int(part_ids.max().item()) + 1
    if P < 2 or L % P:
        return 1
    expected = torch.arange(P).repeat_interleave(L // P)
    return P if bool((part_ids == expected).all()) else 1


def standardize_features(features, valid):
    """Center encoder features per object and scale them to unit average variance.

    Frozen encoder outputs carry a large offset shared by every point. Left in place it
    behaves like dozens of collinear bias inputs and swamps the positional signal.
    """
    if features.shape[-1] == 0:
        return features
    w = valid.unsqueeze(-1).to(DTYPE)
    n = w.sum(1, keepdim=True).clamp(min=1.0)
    mean = (features * w).sum(1, keepdim=True) / n
    centered = (features - mean) * w
    var = centered.pow(2).sum(1, keepdim=True).mean(-1, keepdim=True) / n
    return centered * torch.rsqrt(var + 1e-8)


class VelocityNetwork(nn.Module):
    def __init__(self, cfg: NetworkConfig = None):
        super().__init__()
        cfg = cfg or NetworkConfig()
        self.cfg = cfg
        pe_dim = 10 * (2 * cfg.num_freqs + 1)
        self.input = nn.Linear(pe_dim + cfg.feature_dim, cfg.hidden, dtype=DTYPE)
        t_dim = 2 * cfg.num_freqs + 1
        self.time_mlp = nn.Sequential(nn.Linear(t_dim, cfg.hidden, dtype=DTYPE), nn.SiLU(),
                                      nn.Linear(cfg.hidden, cfg.hidden, dtype=DTYPE))
        self.blocks = nn.ModuleList(FlowBlock(cfg.hidden, cfg.heads) for _ in range(cfg.blocks))
        self.final_norm = nn.LayerNorm(cfg.hidden, elementwise_affine=False, eps=1e-6, dtype=DTYPE)
        self.final_ada = nn.Sequential(nn.SiLU(), nn.Linear(cfg.hidden, 2 * cfg.hidden, dtype=DTYPE))
        self.head = nn.Linear(cfg.hidden, 3, dtype=DTYPE)
        self.reset_parameters()
        self.global_attention = True

    def reset_parameters(self):
        # adaLN-zero: every residual branch and the output start switched off
        for blk in self.blocks:
            nn.init.zeros_(blk.ada[1].weight)
            nn.init.zeros_(blk.ada[1].bias)
        nn.init.zeros_(self.final_ada[1].weight)
        nn.init.zeros_(self.final_ada[1].bias)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def time_embedding(self, t):
        freqs = torch.as_tensor(math.pi * fourier_frequencies(self.cfg.num_freqs), dtype=DTYPE)
        ang = t.unsqueeze(-1) * freqs
        return self.time_mlp(torch.cat([t.unsqueeze(-1), torch.sin(ang), torch.cos(ang)], dim=-1))

    def forward(self, t, xt, cond, normals, part_ids, features, anchor, valid=None):
        """Velocity ``(B, L, 3)``; anchor and padding rows are exactly zero."""
        B, L, _ = xt.shape
        if features.shape[:2] != (B, L) or cond.shape != xt.shape or part_ids.shape != (B, L):
            raise ShapeMismatch(f"inconsistent batch shapes: xt {tuple(xt.shape)}, cond {tuple(cond.shape)}, "
                                f"features {tuple(features.shape)}, part ids {tuple(part_ids.shape)}")
        if valid is None:
            valid = torch.ones((B, L), dtype=torch.bool)
        t = torch.as_tensor(t, dtype=DTYPE).expand(B) if torch.as_tensor(t).ndim == 0 else t
        pe = positional_encode(point_descriptor(cond, normals, xt, part_ids), self.cfg.num_freqs)
        h = self.input(torch.cat([pe, standardize_features(features, valid)], dim=-1))
        c = self.time_embedding(t)
        groups = uniform_part_blocks(part_ids, valid)
        eye = torch.eye(L, dtype=torch.bool)
        # padding queries attend to themselves only so no softmax row is empty
        key_ok = valid.unsqueeze(1) | eye
        part_mask = None
        if groups == 1:
            part_mask = (part_ids.unsqueeze(2) == part_ids.unsqueeze(1)) & key_ok
        if not self.global_attention:
            global_mask = part_mask if groups == 1 else (part_ids.unsqueeze(2) == part_ids.unsqueeze(1))
        elif bool(valid.all()):
            global_mask = None
        else:
            global_mask = key_ok.expand(B, L, L)
        for blk in self.blocks:
            h = blk(h, c, part_mask, global_mask, groups)
        shift, scale = self.final_ada(c).chunk(2, dim=-1)
        v = self.head(modulate(self.final_norm(h), shift, scale))
        if not torch.all(torch.isfinite(v)):
            raise NonFiniteActivation("velocity network produced non-finite output")
        keep = (valid & ~anchor).unsqueeze(-1)
        return torch.where(keep, v, torch.zeros_like(v))

    # -- checkpoint ----------------------------------------------------------

    def save(self, path):
        tensors = {f"config.{k}": v for k, v in vars(self.cfg).items()}
        tensors.update({k: v.detach().numpy() for k, v in self.state_dict().items()})
        tensorio.save_tensors(path, tensorio.FLOW_MAGIC, tensors)

    @classmethod
    def load(cls, path):
        t = tensorio.load_tensors(path, tensorio.FLOW_MAGIC)
        cfg = NetworkConfig(**{k[len("config."):]: int(t.pop(k).item()) for k in list(t) if k.startswith("config.")})
        net = cls(cfg)
        net.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in t.items()})
        return net.requires_grad_(False).eval()


# ---------------------------------------------------------------------------
# Batching


@dataclass
class FlowBatch:
    t: torch.Tensor
    xt: torch.Tensor
    cond: torch.Tensor
    normals: torch.Tensor
    part_ids: torch.Tensor
    features: torch.Tensor
    anchor: torch.Tensor
    valid: torch.Tensor
    target: torch.Tensor

    def model_inputs(self):
        return (self.t, self.xt, self.cond, self.normals, self.part_ids, self.features, self.anchor, self.valid)


def _pad(arrays, width, dtype=np.float64):
    L = max(len(a) for a in arrays)
    out = np.zeros((len(arrays), L) + arrays[0].shape[1:], dtype=dtype)
    for b, a in enumerate(arrays):
        out[b, :len(a)] = a
    return torch.from_numpy(out)


def encoder_features(encoder, samples):
    """Frozen encoder features for the condition rows of each flow sample (padded)."""
    cond = _pad([s.condition_points for s in samples], 3)
    nrm = _pad([s.condition_normals for s in samples], 3)
    ids = _pad([s.part_indices for s in samples], 0, np.int64)
    valid = _pad([np.ones(len(s), dtype=bool) for s in samples], 0, bool)
    if encoder is None:
        return torch.zeros(cond.shape[:2] + (0,), dtype=DTYPE)
    with torch.no_grad():
        return encoder(cond, nrm, ids, valid)


def collate(samples, features=None, encoder=None) -> FlowBatch:
    if features is None:
        features = encoder_features(encoder, samples)
    return FlowBatch(
        t=torch.tensor([s.t for s in samples], dtype=DTYPE),
        xt=_pad([s.xt for s in samples], 3),
        cond=_pad([s.condition_points for s in samples], 3),
        normals=_pad([s.condition_normals for s in samples], 3),
        part_ids=_pad([s.part_indices for s in samples], 0, np.int64),
        features=features,
        anchor=_pad([s.anchor_mask for s in samples], 0, bool),
        valid=_pad([np.ones(len(s), dtype=bool) for s in samples], 0, bool),
        target=_pad([s.target_velocity for s in samples], 3),
    )


def cfm_loss(predicted, target, anchor_mask, valid=None):
    """Mean squared velocity error over non-anchor (and non-padding) points."""
    as_numpy = not torch.is_tensor(predicted)
    predicted = torch.as_tensor(predicted, dtype=DTYPE)
    target = torch.as_tensor(target, dtype=DTYPE)
    if predicted.shape != target.shape:
        raise ShapeMismatch(f"predicted {tuple(predicted.shape)} != target {tuple(target.shape)}")
    keep = ~torch.as_tensor(anchor_mask, dtype=torch.bool)
    if valid is not None:
        keep = keep & torch.as_tensor(valid, dtype=torch.bool)
    sq = ((predicted - target) ** 2).sum(-1)
    loss = sq[keep].sum() / keep.sum()
    return loss.item() if as_numpy else loss


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    steps: int = 2000
    batch_size: int = 16
    points_per_part: int = 128
    inference_steps: int = DEFAULT_STEPS
    time_alpha: float = 0.5
    weight_decay: float = 1e-4
    halve_after: int = 5000
    halve_every: int = 1000
    repose: bool = True  # fresh random rotation of non-anchor condition parts each draw
    seed: int = 0
    network: NetworkConfig = field(default_factory=NetworkConfig)


def lr_factor(step, cfg: TrainConfig):
    if step < cfg.halve_after:
        return 1.0
    return 0.5 ** ((step - cfg.halve_after) // cfg.halve_every + 1)


def draw_batch(dataset, cfg: TrainConfig, rng):
    pick = rng.integers(0, len(dataset), size=cfg.batch_size)
    out = []
    for k in pick:
        s = dataset[k]
        if cfg.repose:
            s = random_repose(s, rng)
        out.append(make_flow_sample(s, cfg.points_per_part, rng, time_alpha=cfg.time_alpha))
    return out


def train(cfg: TrainConfig, dataset, encoder: OverlapEncoder, model=None, callback=None):
    """Fit the velocity network with the flow-matching loss; returns (model, loss log)."""
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    if encoder is not None:
        encoder.requires_grad_(False).eval()
    if model is None:
        net_cfg = cfg.network
        net_cfg.feature_dim = encoder.feature_dim if encoder is not None else 0
        model = VelocityNetwork(net_cfg)
    model.train()
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: lr_factor(s, cfg))
    losses = []
    for step in range(cfg.steps):
        batch = collate(draw_batch(dataset, cfg, rng), encoder=encoder)
        pred = model(*batch.model_inputs())
        loss = cfm_loss(pred, batch.target, batch.anchor, batch.valid)
        if not torch.isfinite(loss):
            raise NonFiniteLoss(f"train step {step}: loss {loss.item()}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        losses.append(loss.item())
        if callback is not None:
            callback(step, losses[-1])
        if step % 100 == 0:
            log.info("train step %d loss %.5f lr %.3g", step, losses[-1], opt.param_groups[0]["lr"])
    return model.requires_grad_(False).eval(), losses


# ---------------------------------------------------------------------------
# Inference


@dataclass
class Prediction:
    """Predicted assembled points for the sampled rows of each part."""

    points: list  # per part (M_i, 3)
    indices: list  # per part, rows of the condition part
    noise: np.ndarray  # initial state rows (all parts stacked)


def condition_rows(condition: MultiPartCloud, M, rng, indices=None):
    """Gather condition rows per part, sampling M per part (all rows when M is None)."""
    picks = []
    for k, part in enumerate(condition.parts):
        if indices is not None:
            picks.append(np.asarray(indices[k]))
        elif M is None:
            picks.append(np.arange(len(part)))
        else:
            picks.append(sample_part_points(part, M, rng))
    pts = np.concatenate([p.points[i] for p, i in zip(condition.parts, picks)])
    nrm = np.concatenate([(p.normals[i] if p.normals is not None else np.zeros((len(i), 3)))
                          for p, i in zip(condition.parts, picks)])
    ids = np.concatenate([np.full(len(i), p.part_index) for p, i in zip(condition.parts, picks)])
    anchor = np.concatenate([np.full(len(i), p.anchor) for p, i in zip(condition.parts, picks)])
    return picks, pts, nrm, ids, anchor


def infer(model, encoder, condition: MultiPartCloud, K=DEFAULT_STEPS, rng=None, noise=None, M=128,
          indices=None, velocity_fn=None) -> Prediction:
    """Integrate the learned flow from noise (t=1) to the assembled state (t=0).

    ``noise`` fixes the initial non-anchor rows; otherwise they are drawn from
    ``rng``. ``velocity_fn(t, x)`` replaces the network (used with oracle fields).
    """
    return infer_batch(model, encoder, [condition], K, rng, None if noise is None else [noise], M,
                       None if indices is None else [indices], velocity_fn)[0]


def infer_batch(model, encoder, conditions, K=DEFAULT_STEPS, rng=None, noises=None, M=128,
                indices=None, velocity_fn=None):
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    rows, states = [], []
    for b, cond in enumerate(conditions):
        picks, pts, nrm, ids, anchor = condition_rows(cond, M, rng, None if indices is None else indices[b])
        if noises is not None and noises[b] is not None:
            z = np.array(noises[b], dtype=np.float64)
            if z.shape != pts.shape:
                raise ShapeMismatch(f"noise shape {z.shape} != {pts.shape}")
        else:
            z = rng.standard_normal(pts.shape)
        x = z.copy()
        x[anchor] = pts[anchor]
        rows.append((picks, pts, nrm, ids, anchor, z))
        states.append(x)

    cond_t = _pad([r[1] for r in rows], 3)
    nrm_t = _pad([r[2] for r in rows], 3)
    ids_t = _pad([r[3] for r in rows], 0, np.int64)
    anchor_t = _pad([r[4] for r in rows], 0, bool)
    valid_t = _pad([np.ones(len(r[1]), dtype=bool) for r in rows], 0, bool)
    x = _pad(states, 3)
    feats = None
    if velocity_fn is None:
        with torch.no_grad():
            feats = (encoder(cond_t, nrm_t, ids_t, valid_t) if encoder is not None
                     else torch.zeros(cond_t.shape[:2] + (0,), dtype=DTYPE))
    dt = 1.0 / K
    for k in range(K):
        t = 1.0 - k * dt
        if velocity_fn is not None:
            v = torch.as_tensor(velocity_fn(t, x.numpy().copy()), dtype=DTYPE)
            v = torch.where((valid_t & ~anchor_t).unsqueeze(-1), v, torch.zeros_like(v))
        else:
            with torch.no_grad():
                v = model(torch.full((len(rows),), t, dtype=DTYPE), x, cond_t, nrm_t, ids_t, feats, anchor_t, valid_t)
        x = x - v * dt

    out = []
    for b, (picks, pts, nrm, ids, anchor, z) in enumerate(rows):
        xb = x[b, :len(pts)].numpy()
        per_part = [xb[ids == p.part_index] for p in conditions[b].parts]
        out.append(Prediction(per_part, picks, z))
    return out


def recover_poses(condition: MultiPartCloud, prediction: Prediction):
    """Procrustes pose of every non-anchor part; anchor gets the identity.

    Returns ``(poses, errors)``: failed parts have pose ``None`` and their
    :class:`DegenerateGeometry` in ``errors``.
    """
    poses, errors = [], {}
    for k, part in enumerate(condition.parts):
        if part.anchor:
            poses.append(RigidTransform.identity())
            continue
        try:
            poses.append(kabsch_solve(part.points[prediction.indices[k]], prediction.points[k]))
        except DegenerateGeometry as e:
            poses.append(None)
            errors[part.part_index] = e
    return poses, errors


def interpolate_noise(Z0, Z1, s):
    Z0 = np.asarray(Z0, dtype=np.float64)
    Z1 = np.asarray(Z1, dtype=np.float64)
    if Z0.shape != Z1.shape:
        raise ShapeMismatch(f"noise shapes differ: {Z0.shape} vs {Z1.shape}")
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    return (1.0 - s) * Z0 + s * Z1
