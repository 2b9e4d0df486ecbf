"""Objective terms of the coupled GAN as pure differentiable functions.

Batch losses use per-batch means (and per-element means for pixel and
feature losses) so their scale does not depend on the batch size.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import torch
import torch.nn.functional as F

LITERAL = "literal"
NON_SATURATING = "non_saturating"
ADVERSARIAL_MODES = (LITERAL, NON_SATURATING)


@dataclass
class LossWeights:
    lambda_C: float = 1.0
    lambda_A: float = 1.0
    lambda_R: float = 1.0
    lambda_P: float = 1.0
    lambda_L2: float = 1e-4
    margin_m: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
        if self.margin_m <= 0:
            raise ValueError(f"margin_m must be positive, got {self.margin_m}")


@dataclass
class LossBreakdown:
    contrastive: float
    adversarial_D: float
    adversarial_G: float
    reconstruction: float
    perceptual: float
    weight_decay: float
    total: float

    def recombine(self, weights: LossWeights) -> float:
        return (
            weights.lambda_C * self.contrastive
            + weights.lambda_A * self.adversarial_G
            + weights.lambda_R * self.reconstruction
            + weights.lambda_P * self.perceptual
            + weights.lambda_L2 * self.weight_decay
        )


def embedding_distance(z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    """Euclidean distance along the last axis; works for single vectors or row batches."""
    if z1.shape[-1] != z2.shape[-1]:
        raise ValueError(f"embedding dimensions differ: {z1.shape[-1]} vs {z2.shape[-1]}")
    return torch.linalg.vector_norm(z1 - z2, dim=-1)


def contrastive_loss(z_vis: torch.Tensor, z_nir: torch.Tensor, labels: torch.Tensor, margin: float = 1.0):
    """Mean of ½D² over genuine (label 0) and ½max(0, m − D)² over imposter (label 1) pairs."""
    if z_vis.shape != z_nir.shape:
        raise ValueError(f"embedding batches differ in shape: {tuple(z_vis.shape)} vs {tuple(z_nir.shape)}")
    if z_vis.shape[0] == 0:
        raise ValueError("contrastive loss of an empty batch")
    if labels.shape[0] != z_vis.shape[0]:
        raise ValueError("labels and embeddings disagree on batch size")
    y = labels.to(z_vis.dtype)
    genuine = 0.5 * ((z_vis - z_nir) ** 2).sum(dim=-1)
    dist = embedding_distance(z_vis, z_nir)
    imposter = 0.5 * torch.clamp(margin - dist, min=0.0) ** 2
    return ((1 - y) * genuine + y * imposter).mean()


def _check_mode(mode: str) -> None:
    if mode not in ADVERSARIAL_MODES:
        raise ValueError(f"unknown adversarial mode {mode!r}; expected one of {ADVERSARIAL_MODES}")


def adversarial_loss_terms(d_real: torch.Tensor, d_fake: torch.Tensor, mode: str = NON_SATURATING):
    """Discriminator and generator terms from discriminator probabilities.

    Returns ``(discriminator_loss, generator_loss)`` with
    ``discriminator_loss = -mean[log d_real + log(1 - d_fake)]``. The generator
    term is ``mean[log(1 - d_fake)]`` in literal mode and ``-mean[log d_fake]``
    in non-saturating mode.
    """
    _check_mode(mode)
    for name, p in (("d_real", d_real), ("d_fake", d_fake)):
        if not bool(((p > 0) & (p < 1)).all()):
            raise ValueError(f"{name} must lie strictly inside (0, 1)")
    d_loss = -(torch.log(d_real).mean() + torch.log1p(-d_fake).mean())
    if mode == LITERAL:
        g_loss = torch.log1p(-d_fake).mean()
    else:
        g_loss = -torch.log(d_fake).mean()
    return d_loss, g_loss


def adversarial_loss_terms_from_logits(real_logits: torch.Tensor, fake_logits: torch.Tensor, mode: str = NON_SATURATING):
    """Same quantities as :func:`adversarial_loss_terms`, evaluated stably on logits.

    Uses log σ(l) = logsigmoid(l) and log(1 − σ(l)) = logsigmoid(−l).
    """
    _check_mode(mode)
    d_loss = -(F.logsigmoid(real_logits).mean() + F.logsigmoid(-fake_logits).mean())
    if mode == LITERAL:
        g_loss = F.logsigmoid(-fake_logits).mean()
    else:
        g_loss = -F.logsigmoid(fake_logits).mean()
    return d_loss, g_loss


def generator_adversarial_from_logits(fake_logits: torch.Tensor, mode: str = NON_SATURATING) -> torch.Tensor:
    _check_mode(mode)
    if mode == LITERAL:
        return F.logsigmoid(-fake_logits).mean()
    return -F.logsigmoid(fake_logits).mean()


def coupled(term_v: torch.Tensor, term_i: torch.Tensor) -> torch.Tensor:
    """Combine the visible and NIR branch terms of a coupled loss (branch average)."""
    return 0.5 * (term_v + term_i)


def reconstruction_loss(x: torch.Tensor, gx: torch.Tensor) -> torch.Tensor:
    if x.shape != gx.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(gx.shape)}")
    return ((x - gx) ** 2).mean()


def perceptual_loss(x: torch.Tensor, gx: torch.Tensor, phi: Callable[[torch.Tensor], torch.Tensor]) -> torch.Tensor:
    """Mean squared difference of ``phi`` activations, averaged over C·W·H and the batch.

    ``phi(x)`` is evaluated without a graph since ``x`` is the fixed target.
    """
    if x.shape != gx.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(gx.shape)}")
    if x.requires_grad:
        target = phi(x)
    else:
        with torch.no_grad():
            target = phi(x)
    return ((phi(gx) - target) ** 2).mean()


def squared_parameter_norm(params) -> torch.Tensor:
    params = list(params)
    if not params:
        return torch.zeros(())
    return sum((p**2).sum() for p in params)


def total_objective(
    contrastive,
    adversarial_G,
    reconstruction,
    perceptual,
    weights: LossWeights,
    parameter_norms=0.0,
    adversarial_D=0.0,
):
    """Weighted multi-task objective and its logged breakdown.

    Returns ``(total, breakdown)``; ``total`` keeps the autograd graph when the
    inputs are tensors, ``breakdown`` holds plain floats.
    """
    parts = {
        "contrastive": contrastive,
        "adversarial_G": adversarial_G,
        "reconstruction": reconstruction,
        "perceptual": perceptual,
        "weight_decay": parameter_norms,
        "adversarial_D": adversarial_D,
    }
    values = {k: float(v.detach()) if isinstance(v, torch.Tensor) else float(v) for k, v in parts.items()}
    for name, v in values.items():
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite {name} loss component: {v}")
    total = (
        weights.lambda_C * contrastive
        + weights.lambda_A * adversarial_G
        + weights.lambda_R * reconstruction
        + weights.lambda_P * perceptual
        + weights.lambda_L2 * parameter_norms
    )
    breakdown = LossBreakdown(total=0.0, **values)
    # logged total is recombined in float64 so the identity holds exactly for the record
    breakdown.total = breakdown.recombine(weights)
    return total, breakdown
