"""Pretrain the overlap encoder on cut cylinders and score it with ROC AUC."""
import numpy as np

from rpflow.data import DatasetSpec, generate
from rpflow.encoder import PretrainConfig, encode, predict_overlap, pretrain, roc_auc, sample_labels

train = generate(DatasetSpec("cylinder", count=200, points_per_part=256, seed=0))
held = generate(DatasetSpec("cylinder", count=40, points_per_part=256, seed=1))
cfg = PretrainConfig(steps=1500, epsilon_scale=0.08)

encoder, losses = pretrain(cfg, train, callback=lambda step, loss: step % 300 or print(f"step {step:4d}  bce {loss:.4f}"))
print(f"bce {np.mean(losses[:20]):.4f} -> {np.mean(losses[-20:]):.4f}")

scores = np.concatenate([predict_overlap(encoder, encode(encoder, s.condition)) for s in held])
labels = np.concatenate([sample_labels(s, cfg) for s in held])
print(f"overlap points: {labels.mean():.1%} of held-out rows, AUC {roc_auc(scores, labels):.3f}")
