"""
Loss terms and verification metrics on toy numbers
==================================================
"""

import math

import numpy as np
import torch

from cogan.evaluation import ScoreSet, compute_roc_metrics
from cogan.losses import LossWeights, adversarial_loss_terms, contrastive_loss, reconstruction_loss, total_objective

# Contrastive loss: a genuine pair (label 0) is pulled together, an imposter pair
# (label 1) is pushed out to the margin. Both pairs sit at distance 0.5 here.
z_vis = torch.tensor([[0.0, 0.0], [1.0, 1.0]])
z_nir = torch.tensor([[0.3, 0.4], [1.3, 1.4]])
print("contrastive:", contrastive_loss(z_vis, z_nir, torch.tensor([0, 1]), margin=1.0).item())   # 0.125

# Discriminator loss at the uninformative point is 2 ln 2
d_loss, g_loss = adversarial_loss_terms(torch.tensor([0.5]), torch.tensor([0.5]))
print("adversarial D at 0.5:", d_loss.item(), "=", 2 * math.log(2))

print("reconstruction, x=2 vs 0:", reconstruction_loss(torch.full((1, 3, 4, 4), 2.0), torch.zeros(1, 3, 4, 4)).item())

# the multi-task objective with lambda_C = 5 and the other weights at 1
total, parts = total_objective(0.2, 1.0, 0.5, 0.3, LossWeights(lambda_C=5.0))
print("total:", float(total), parts)

# Verification metrics. Distances: lower means "same eye".
rng = np.random.default_rng(0)
genuine = rng.normal(0.6, 0.2, 300)
imposter = rng.normal(1.2, 0.25, 3000)
report = compute_roc_metrics(ScoreSet.from_lists(genuine, imposter))
print(f"AUC {report.auc:.4f}  EER {report.eer:.4f}  FRR@FAR=1% {report.frr_at_far_1pct:.4f}  FRR@FAR=10% {report.frr_at_far_10pct:.4f}")

# AUC is the probability that a genuine distance is below an imposter distance
print("pairwise check:", np.mean(genuine[:, None] < imposter[None, :]))
