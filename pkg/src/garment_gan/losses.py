"""Scalar training objectives as pure tensor functions.

Reduction conventions (kept batch-size invariant so the loss weights do not
need retuning when the batch changes):

* reconstruction — mean absolute difference over batch, pixels and channels;
* attribute BCE — sum over the n attributes per image, then mean over batch;
* adversarial — vanilla non-saturating objective in logit form (softplus),
  with a Wasserstein + gradient-penalty variant behind a config switch.

The objective combinators (:func:`attgan_generator_objective`,
:func:`disc_cls_objective`, :func:`design_generator_objectives`) are plain
weighted sums and accept either a float-valued :class:`LossReport` or any
object exposing the same attributes as tensors, so the training step and the
logging path share one formula.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
import json
import math

import torch
import torch.nn.functional as F

BCE_EPS = 1e-7


class LossShapeError(ValueError):
    """Raised when loss inputs disagree in shape or arity."""


@dataclass(frozen=True)
class LossWeights:
    """Weights of the reconstruction, generator-classification and
    classifier terms (the adversarial terms are unweighted)."""

    lambda1: float = 100.0
    lambda2: float = 10.0
    lambda3: float = 1.0

    def __post_init__(self) -> None:
        for name, v in (("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)):
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")

    def to_json_dict(self) -> dict:
        return {"lambda1": self.lambda1, "lambda2": self.lambda2, "lambda3": self.lambda3}


@dataclass
class LossReport:
    """Named scalar values of one training step (for logging and tests)."""

    rec: float = 0.0
    cls_g: float = 0.0
    cls_c: float = 0.0
    adv_g: float = 0.0
    adv_d: float = 0.0
    total_g: float = 0.0
    total_dc: float = 0.0

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in asdict(self).values())

    def jsonl_line(self, step: int) -> str:
        """One logging line: {"step":k,"rec":...,"cls_g":...,"cls_c":...,"adv_g":...,"adv_d":...}."""
        return json.dumps(
            {"step": step, "rec": self.rec, "cls_g": self.cls_g, "cls_c": self.cls_c,
             "adv_g": self.adv_g, "adv_d": self.adv_d}
        )


def reconstruction_loss(x: torch.Tensor, x_rec: torch.Tensor) -> torch.Tensor:
    """Mean absolute (Manhattan) distance between an image batch and its decode."""
    if x.shape != x_rec.shape:
        raise LossShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_rec.shape)}")
    return (x - x_rec).abs().mean()


def attribute_bce(probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Binary cross entropy summed over attributes, averaged over the batch.

    ``probs`` are clamped to [eps, 1-eps] before the logs to avoid log(0).
    """
    if probs.ndim != 2:
        raise LossShapeError(f"probs must be (B, n), got {tuple(probs.shape)}")
    if probs.shape != targets.shape:
        raise LossShapeError(f"arity mismatch: probs {tuple(probs.shape)} vs targets {tuple(targets.shape)}")
    p = probs.clamp(BCE_EPS, 1.0 - BCE_EPS)
    t = targets.to(p.dtype)
    per_image = -(t * torch.log(p) + (1.0 - t) * torch.log(1.0 - p)).sum(dim=1)
    return per_image.mean()


def generator_classification_loss(dc_model, x_edited: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """BCE of the classifier on edited images against the requested targets.

    The caller is responsible for letting gradients reach only the generator
    (the training step freezes the classifier's parameters for this term).
    """
    return attribute_bce(dc_model.classify(x_edited), b)


def classifier_loss_real(dc_model, x: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
    """BCE of the classifier on real images against their annotations."""
    return attribute_bce(dc_model.classify(x), a)


def adversarial_losses(d_real: torch.Tensor, d_fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Vanilla adversarial losses in logit form.

    adv_d = E[softplus(-d_real)] + E[softplus(d_fake)]  (discriminator side)
    adv_g = E[softplus(-d_fake)]                        (non-saturating generator side)
    """
    if d_real.shape != d_fake.shape:
        raise LossShapeError(f"batch mismatch: {tuple(d_real.shape)} vs {tuple(d_fake.shape)}")
    adv_d = F.softplus(-d_real).mean() + F.softplus(d_fake).mean()
    adv_g = generator_adversarial_loss(d_fake)
    return adv_d, adv_g


def generator_adversarial_loss(d_fake: torch.Tensor) -> torch.Tensor:
    return F.softplus(-d_fake).mean()


def wgan_adversarial_losses(d_real: torch.Tensor, d_fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Wasserstein critic/generator losses (no sigmoid, can be negative)."""
    if d_real.shape != d_fake.shape:
        raise LossShapeError(f"batch mismatch: {tuple(d_real.shape)} vs {tuple(d_fake.shape)}")
    return d_fake.mean() - d_real.mean(), wgan_generator_loss(d_fake)


def wgan_generator_loss(d_fake: torch.Tensor) -> torch.Tensor:
    return -d_fake.mean()


def gradient_penalty(dc_model, x_real: torch.Tensor, x_fake: torch.Tensor,
                     torch_gen: torch.Generator) -> torch.Tensor:
    """Two-sided gradient penalty on random interpolates (WGAN-GP)."""
    if x_real.shape != x_fake.shape:
        raise LossShapeError(f"batch mismatch: {tuple(x_real.shape)} vs {tuple(x_fake.shape)}")
    eps = torch.rand((x_real.shape[0], 1, 1, 1), generator=torch_gen, dtype=x_real.dtype)
    interp = (eps * x_real + (1.0 - eps) * x_fake).detach().requires_grad_(True)
    scores = dc_model.discriminate(interp)
    grads = torch.autograd.grad(scores.sum(), interp, create_graph=True)[0]
    norms = grads.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def attgan_generator_objective(terms, w: LossWeights):
    """Joint generator objective: lambda1*rec + lambda2*cls_g + adv_g."""
    return w.lambda1 * terms.rec + w.lambda2 * terms.cls_g + terms.adv_g


def disc_cls_objective(terms, w: LossWeights):
    """Discriminator/classifier objective: lambda3*cls_c + adv_d."""
    return w.lambda3 * terms.cls_c + terms.adv_d


def design_generator_objectives(terms, w: LossWeights):
    """Split generator objectives (lambda1*rec + adv_g, lambda2*cls_g).

    Their sum equals :func:`attgan_generator_objective` on identical inputs.
    """
    return w.lambda1 * terms.rec + terms.adv_g, w.lambda2 * terms.cls_g
