"""Adam with bias correction, written as a pure update rule.

Keeping the update a pure function of (params, grads, moments) makes training
steps replayable and lets checkpoints serialise optimiser state exactly (the
moment tensors and the step count are the whole state).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch


class NonFiniteGradientError(RuntimeError):
    """Raised when a gradient contains NaN or Inf."""


@dataclass
class AdamMoments:
    step: int
    exp_avg: list[torch.Tensor]
    exp_avg_sq: list[torch.Tensor]


def fresh_moments(params: Sequence[torch.Tensor]) -> AdamMoments:
    return AdamMoments(
        step=0,
        exp_avg=[torch.zeros_like(p) for p in params],
        exp_avg_sq=[torch.zeros_like(p) for p in params],
    )


@torch.no_grad()
def adam_update(
    params: Sequence[torch.Tensor],
    grads: Sequence[torch.Tensor],
    moments: AdamMoments,
    lr: float,
    betas: tuple[float, float] = (0.5, 0.999),
    eps: float = 1e-8,
) -> tuple[list[torch.Tensor], AdamMoments]:
    """One bias-corrected Adam step; returns new tensors, inputs untouched."""
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    if len(params) != len(grads) or len(params) != len(moments.exp_avg):
        raise ValueError("params, grads and moments must have equal lengths")
    b1, b2 = betas
    t = moments.step + 1
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t

    new_params: list[torch.Tensor] = []
    new_m: list[torch.Tensor] = []
    new_v: list[torch.Tensor] = []
    for p, g, m, v in zip(params, grads, moments.exp_avg, moments.exp_avg_sq):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {tuple(g.shape)} != param shape {tuple(p.shape)}")
        if not torch.isfinite(g).all():
            raise NonFiniteGradientError("non-finite gradient encountered")
        m1 = b1 * m + (1.0 - b1) * g
        v1 = b2 * v + (1.0 - b2) * (g * g)
        step = lr * (m1 / bc1) / ((v1 / bc2).sqrt() + eps)
        new_params.append(p - step)
        new_m.append(m1)
        new_v.append(v1)
    return new_params, AdamMoments(step=t, exp_avg=new_m, exp_avg_sq=new_v)


class AdamOptimizer:
    """Binds the pure update to a fixed set of named module parameters."""

    def __init__(self, named_params: dict[str, torch.nn.Parameter], lr: float,
                 betas: tuple[float, float] = (0.5, 0.999), eps: float = 1e-8):
        self.names = list(named_params.keys())
        self.params = [named_params[n] for n in self.names]
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.moments = fresh_moments(self.params)

    def step(self, grads: Sequence[torch.Tensor]) -> None:
        new_params, self.moments = adam_update(
            self.params, grads, self.moments, self.lr, self.betas, self.eps
        )
        with torch.no_grad():
            for p, np_ in zip(self.params, new_params):
                p.copy_(np_)

    # -- checkpoint plumbing -------------------------------------------------

    def moment_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, m, v in zip(self.names, self.moments.exp_avg, self.moments.exp_avg_sq):
            out[f"{prefix}.m.{name}"] = m.detach().cpu().numpy()
            out[f"{prefix}.v.{name}"] = v.detach().cpu().numpy()
        return out

    def load_moment_arrays(self, prefix: str, arrays: dict[str, np.ndarray], step: int) -> None:
        exp_avg, exp_avg_sq = [], []
        for name, p in zip(self.names, self.params):
            m = torch.as_tensor(arrays[f"{prefix}.m.{name}"], dtype=p.dtype)
            v = torch.as_tensor(arrays[f"{prefix}.v.{name}"], dtype=p.dtype)
            if m.shape != p.shape or v.shape != p.shape:
                raise ValueError(f"moment shape mismatch for {name!r}")
            exp_avg.append(m)
            exp_avg_sq.append(v)
        self.moments = AdamMoments(step=step, exp_avg=exp_avg, exp_avg_sq=exp_avg_sq)
