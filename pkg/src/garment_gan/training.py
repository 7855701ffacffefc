"""Training schedules: joint generator objective vs. split generator objectives.

Both schedules share the outer loop (sample a batch and target attributes,
run ``inner_dc_steps`` discriminator/classifier updates on it, then one
generator phase). They differ only in the generator phase:

* ``attgan_joint``  — one Adam update minimising
  ``lambda1*rec + lambda2*cls_g + adv_g``;
* ``design_split``  — two sequential Adam updates, first minimising
  ``lambda1*rec + adv_g``, then ``lambda2*cls_g`` with the gradient evaluated
  after the first update. The two updates keep separate Adam moments by
  default (``split_shared_moments`` switches to one shared state).

Every random draw is keyed by ``(seed, stream, index)``, so a run is a pure
function of its config and dataset and can resume from any checkpoint with a
bitwise-identical continuation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace
from typing import Callable, Mapping

import numpy as np
import torch

from . import checkpoint as ckpt
from .data import Dataset, epoch_permutation, rng_for, sample_target_attributes
from .losses import (
    LossReport,
    LossWeights,
    adversarial_losses,
    attgan_generator_objective,
    attribute_bce,
    design_generator_objectives,
    disc_cls_objective,
    generator_adversarial_loss,
    gradient_penalty,
    reconstruction_loss,
    wgan_adversarial_losses,
    wgan_generator_loss,
)
from .models import (
    DiscriminatorClassifier,
    Generator,
    ModelConfig,
    attrs_to_tensor,
    build_models,
    frozen_batchnorm_stats,
)
from .optim import AdamOptimizer, NonFiniteGradientError

SCHEDULES = ("attgan_joint", "design_split")
ADVERSARIAL_MODES = ("vanilla", "wgan_gp")


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite; carries a report."""

    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    schedule: str = "design_split"
    weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 32
    learning_rate: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    inner_dc_steps: int = 5
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 100
    adversarial_mode: str = "vanilla"
    gp_weight: float = 10.0
    split_shared_moments: bool = False
    # Architecture overrides applied on top of the dataset-derived shapes.
    model: Mapping = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.inner_dc_steps < 1:
            raise ValueError(f"inner_dc_steps must be >= 1, got {self.inner_dc_steps}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.adversarial_mode not in ADVERSARIAL_MODES:
            raise ValueError(f"adversarial_mode must be one of {ADVERSARIAL_MODES}")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ValueError("checkpoint_every and log_every must be >= 1")
        object.__setattr__(self, "model", dict(self.model))

    def to_json_dict(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "schedule": self.schedule,
            "weights": self.weights.to_json_dict(),
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "inner_dc_steps": self.inner_dc_steps,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "log_every": self.log_every,
            "adversarial_mode": self.adversarial_mode,
            "gp_weight": self.gp_weight,
            "split_shared_moments": self.split_shared_moments,
            "model": dict(self.model),
        }

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "TrainConfig":
        kwargs = dict(obj)
        if "weights" in kwargs and not isinstance(kwargs["weights"], LossWeights):
            kwargs["weights"] = LossWeights(**kwargs["weights"])
        return cls(**kwargs)


@dataclass
class TrainerHooks:
    """Optional instrumentation callbacks (used heavily by the test suite)."""

    after_dc_update: Callable[[int, int, LossReport], None] | None = None
    # phase is "joint", "rec_adv" or "cls"
    after_generator_update: Callable[[int, str, LossReport], None] | None = None


def _f(value) -> float:
    return float(value.detach()) if torch.is_tensor(value) else float(value)


def _report_from(terms: SimpleNamespace, **extra) -> LossReport:
    vals = {k: _f(v) for k, v in vars(terms).items()}
    vals.update({k: _f(v) for k, v in extra.items()})
    return LossReport(**vals)


class Trainer:
    """Owns the models, optimiser states and the deterministic batch stream."""

    def __init__(self, config: TrainConfig, dataset: Dataset, out_dir: str | Path | None = None,
                 hooks: TrainerHooks | None = None, dtype: torch.dtype = torch.float32):
        if len(dataset) < config.batch_size:
            raise ValueError(
                f"dataset has {len(dataset)} items, smaller than batch_size {config.batch_size}"
            )
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.hooks = hooks or TrainerHooks()
        self.dtype = dtype

        self.model_config = ModelConfig(
            image_size=dataset.image_size,
            n_attributes=dataset.schema.n,
            **dict(config.model),
        )
        self.gen, self.dc = build_models(self.model_config, seed=config.seed, dtype=dtype)
        self.gen.train()
        self.dc.train()

        px = dataset.pixel_stack()  # (N, H, W, 3)
        self.images = torch.as_tensor(px.astype(np.float64), dtype=dtype).permute(0, 3, 1, 2).contiguous()
        self.attrs = dataset.attribute_matrix()
        self.epoch_len = len(dataset) // config.batch_size

        betas = (config.beta1, config.beta2)
        self.opt_dc = AdamOptimizer(dict(self.dc.named_parameters()), config.learning_rate, betas)
        self.opt_g_main = AdamOptimizer(dict(self.gen.named_parameters()), config.learning_rate, betas)
        if config.split_shared_moments:
            self.opt_g_cls = self.opt_g_main
        else:
            self.opt_g_cls = AdamOptimizer(dict(self.gen.named_parameters()), config.learning_rate, betas)

        self.step = 0
        self._dc_update_count = 0

    # -- deterministic sampling ------------------------------------------------

    def batch_indices(self, step: int) -> np.ndarray:
        epoch, idx = divmod(step, self.epoch_len)
        perm = epoch_permutation(self.config.seed, epoch, len(self.dataset))
        return perm[idx * self.config.batch_size:(idx + 1) * self.config.batch_size]

    def _batch(self, step: int) -> tuple[torch.Tensor, np.ndarray]:
        rows = self.batch_indices(step)
        return self.images[torch.as_tensor(rows, dtype=torch.long)], self.attrs[rows]

    # -- phases ---------------------------------------------------------------

    def _check_finite(self, value: torch.Tensor, phase: str, report: LossReport) -> None:
        if not bool(torch.isfinite(value)):
            self._dump_divergence(phase, report)
            raise TrainingDiverged(
                f"non-finite loss in {phase} at step {self.step}",
                {"step": self.step, "phase": phase, "losses": vars(report)},
            )

    def _dump_divergence(self, phase: str, report: LossReport) -> None:
        if self.out_dir is not None:
            try:
                self.save_state(self.out_dir / f"diverged_step_{self.step}.ckpt")
            except Exception:
                pass

    def dc_step(self, x: torch.Tensor, a_t: torch.Tensor, b_t: torch.Tensor) -> LossReport:
        """One Adam update of the discriminator/classifier on a fixed batch."""
        cfg = self.config
        with frozen_batchnorm_stats(self.gen), torch.no_grad():
            fake = self.gen.decode(self.gen.encode(x), b_t)

        d_real, probs_real = self.dc(x)
        d_fake = self.dc.discriminate(fake)
        if cfg.adversarial_mode == "vanilla":
            adv_d, adv_g = adversarial_losses(d_real, d_fake)
        else:
            adv_d, adv_g = wgan_adversarial_losses(d_real, d_fake)
            gp_seed = int(rng_for(cfg.seed, "gp", self._dc_update_count).integers(0, 2 ** 63 - 1))
            gp = gradient_penalty(self.dc, x, fake, torch.Generator().manual_seed(gp_seed))
            adv_d = adv_d + cfg.gp_weight * gp
        cls_c = attribute_bce(probs_real, a_t)

        terms = SimpleNamespace(cls_c=cls_c, adv_d=adv_d)
        if cfg.weights.lambda3 != 0.0:
            total = disc_cls_objective(terms, cfg.weights)
        else:
            total = adv_d
        report = _report_from(
            SimpleNamespace(cls_c=cls_c, adv_d=adv_d, adv_g=adv_g), total_dc=_f(total)
        )
        self._check_finite(total, "dc_step", report)

        grads = torch.autograd.grad(total, self.opt_dc.params, allow_unused=True)
        grads = [g if g is not None else torch.zeros_like(p)
                 for g, p in zip(grads, self.opt_dc.params)]
        try:
            self.opt_dc.step(grads)
        except NonFiniteGradientError:
            self._dump_divergence("dc_step", report)
            raise TrainingDiverged(f"non-finite gradient in dc_step at step {self.step}",
                                   {"step": self.step, "phase": "dc_step", "losses": vars(report)})
        self._dc_update_count += 1
        return report

    def _generator_terms(self, x: torch.Tensor, a_t: torch.Tensor, b_t: torch.Tensor,
                         include_rec: bool, include_cls: bool) -> SimpleNamespace:
        z = self.gen.encode(x)
        if include_rec:
            rec = reconstruction_loss(x, self.gen.decode(z, a_t))
        else:
            rec = torch.zeros((), dtype=self.dtype)
        x_edit = self.gen.decode(z, b_t)
        d_fake = self.dc.discriminate(x_edit)
        if self.config.adversarial_mode == "vanilla":
            adv_g = generator_adversarial_loss(d_fake)
        else:
            adv_g = wgan_generator_loss(d_fake)
        if include_cls:
            cls_g = attribute_bce(self.dc.classify(x_edit), b_t)
        else:
            cls_g = torch.zeros((), dtype=self.dtype)
        return SimpleNamespace(rec=rec, cls_g=cls_g, adv_g=adv_g)

    def _apply_generator_update(self, objective: torch.Tensor, opt: AdamOptimizer,
                                phase: str, report: LossReport) -> None:
        self._check_finite(objective, phase, report)
        grads = torch.autograd.grad(objective, opt.params, allow_unused=True)
        grads = [g if g is not None else torch.zeros_like(p) for g, p in zip(grads, opt.params)]
        try:
            opt.step(grads)
        except NonFiniteGradientError:
            self._dump_divergence(phase, report)
            raise TrainingDiverged(f"non-finite gradient in {phase} at step {self.step}",
                                   {"step": self.step, "phase": phase, "losses": vars(report)})

    def g_step_joint(self, x: torch.Tensor, a_t: torch.Tensor, b_t: torch.Tensor) -> LossReport:
        """One Adam update of the generator on the joint objective.

        Zero-weight terms are skipped entirely (their forward passes included),
        so a ``lambda2 = 0`` run is bit-identical to one that never computes
        the classification path.
        """
        w = self.config.weights
        terms = self._generator_terms(x, a_t, b_t, include_rec=w.lambda1 != 0.0,
                                      include_cls=w.lambda2 != 0.0)
        total = attgan_generator_objective(terms, w)
        report = _report_from(terms, total_g=float(total))
        self._apply_generator_update(total, self.opt_g_main, "g_step_joint", report)
        if self.hooks.after_generator_update:
            self.hooks.after_generator_update(self.step, "joint", report)
        return report

    def g_step_split(self, x: torch.Tensor, a_t: torch.Tensor, b_t: torch.Tensor) -> LossReport:
        """Two sequential generator updates: rec+adv first, then classification.

        The second update re-evaluates its gradient after the first has been
        applied, and is skipped when ``lambda2 == 0`` (its gradient would be
        zero), which makes that degenerate case coincide with the joint
        schedule at ``lambda2 = 0``.
        """
        w = self.config.weights
        terms = self._generator_terms(x, a_t, b_t, include_rec=w.lambda1 != 0.0, include_cls=False)
        obj_rec_adv, _ = design_generator_objectives(terms, w)
        report1 = _report_from(terms, total_g=_f(obj_rec_adv))
        self._apply_generator_update(obj_rec_adv, self.opt_g_main, "g_step_rec_adv", report1)
        if self.hooks.after_generator_update:
            self.hooks.after_generator_update(self.step, "rec_adv", report1)

        cls_value = 0.0
        if w.lambda2 != 0.0:
            z = self.gen.encode(x)
            cls_g = attribute_bce(self.dc.classify(self.gen.decode(z, b_t)), b_t)
            obj_cls = w.lambda2 * cls_g
            report2 = LossReport(cls_g=_f(cls_g), total_g=_f(obj_cls))
            self._apply_generator_update(obj_cls, self.opt_g_cls, "g_step_cls", report2)
            if self.hooks.after_generator_update:
                self.hooks.after_generator_update(self.step, "cls", report2)
            cls_value = _f(cls_g)

        return LossReport(
            rec=_f(terms.rec), cls_g=cls_value, adv_g=_f(terms.adv_g),
            total_g=w.lambda1 * _f(terms.rec) + w.lambda2 * cls_value + _f(terms.adv_g),
        )

    # -- outer loop -------------------------------------------------------------

    def outer_step(self) -> LossReport:
        cfg = self.config
        step = self.step
        x, a_np = self._batch(step)
        b_np = sample_target_attributes(a_np, rng_for(cfg.seed, "targets", step))
        a_t = attrs_to_tensor(a_np, self.dtype)
        b_t = attrs_to_tensor(b_np, self.dtype)

        dc_report = LossReport()
        for inner in range(cfg.inner_dc_steps):
            dc_report = self.dc_step(x, a_t, b_t)
            if self.hooks.after_dc_update:
                self.hooks.after_dc_update(step, inner, dc_report)

        if cfg.schedule == "attgan_joint":
            g_report = self.g_step_joint(x, a_t, b_t)
        else:
            g_report = self.g_step_split(x, a_t, b_t)

        self.step = step + 1
        return LossReport(
            rec=g_report.rec, cls_g=g_report.cls_g, adv_g=g_report.adv_g,
            cls_c=dc_report.cls_c, adv_d=dc_report.adv_d,
            total_g=g_report.total_g, total_dc=dc_report.total_dc,
        )

    def train(self) -> list[Path]:
        """Run to ``total_steps``; returns the checkpoint paths written."""
        cfg = self.config
        log_fh = None
        written: list[Path] = []
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "checkpoints").mkdir(exist_ok=True)
            resolved = {
                "train_config": cfg.to_json_dict(),
                "model_config": self.model_config.to_json_dict(),
                "schema": self.dataset.schema.to_json_dict(),
                "dataset": {"provenance": dict(self.dataset.provenance), "items": len(self.dataset)},
            }
            (self.out_dir / "config.resolved.json").write_text(json.dumps(resolved, indent=2))
            log_fh = open(self.out_dir / "losses.jsonl", "a")
        try:
            while self.step < cfg.total_steps:
                report = self.outer_step()
                if log_fh is not None and (self.step % cfg.log_every == 0 or self.step == cfg.total_steps):
                    log_fh.write(report.jsonl_line(self.step) + "\n")
                    log_fh.flush()
                if self.out_dir is not None and (
                    self.step % cfg.checkpoint_every == 0 or self.step == cfg.total_steps
                ):
                    path = self.out_dir / "checkpoints" / f"step_{self.step}.ckpt"
                    written.append(self.save_state(path))
        finally:
            if log_fh is not None:
                log_fh.close()
        return written

    # -- state I/O ---------------------------------------------------------------

    def save_state(self, path: str | Path) -> Path:
        arrays: dict[str, np.ndarray] = {}
        arrays.update(ckpt.module_arrays(self.gen, "generator"))
        arrays.update(ckpt.module_arrays(self.dc, "disc_cls"))
        arrays.update(self.opt_dc.moment_arrays("opt.dc"))
        arrays.update(self.opt_g_main.moment_arrays("opt.g_main"))
        if self.opt_g_cls is not self.opt_g_main:
            arrays.update(self.opt_g_cls.moment_arrays("opt.g_cls"))
        meta = {
            "kind": "train",
            "step": self.step,
            "model_config": self.model_config.to_json_dict(),
            "schema": self.dataset.schema.to_json_dict(),
            "train_config": self.config.to_json_dict(),
            "extra": {
                "opt_steps": {
                    "dc": self.opt_dc.moments.step,
                    "g_main": self.opt_g_main.moments.step,
                    "g_cls": self.opt_g_cls.moments.step,
                },
                "dc_update_count": self._dc_update_count,
            },
        }
        return ckpt.save_checkpoint(path, meta, arrays)

    @classmethod
    def resume(cls, path: str | Path, dataset: Dataset, out_dir: str | Path | None = None,
               hooks: TrainerHooks | None = None, dtype: torch.dtype = torch.float32,
               config: TrainConfig | None = None) -> "Trainer":
        """Rebuild a trainer from a checkpoint for an identical continuation.

        ``config`` may override the stored one (e.g. to extend total_steps);
        it must agree on everything that shaped the trajectory so far.
        """
        header, arrays = ckpt.load_checkpoint(path)
        if header.get("kind") != "train":
            raise ckpt.CheckpointError(f"not a training checkpoint: kind={header.get('kind')!r}")
        stored = TrainConfig.from_json_dict(header["train_config"])
        cfg = config if config is not None else stored
        trainer = cls(cfg, dataset, out_dir=out_dir, hooks=hooks, dtype=dtype)
        if trainer.model_config.to_json_dict() != header["model_config"]:
            raise ckpt.CheckpointError(
                f"checkpoint model config {header['model_config']} does not match dataset-derived "
                f"{trainer.model_config.to_json_dict()}"
            )
        ckpt.load_module_arrays(trainer.gen, "generator", arrays)
        ckpt.load_module_arrays(trainer.dc, "disc_cls", arrays)
        opt_steps = header["extra"]["opt_steps"]
        trainer.opt_dc.load_moment_arrays("opt.dc", arrays, opt_steps["dc"])
        trainer.opt_g_main.load_moment_arrays("opt.g_main", arrays, opt_steps["g_main"])
        if trainer.opt_g_cls is not trainer.opt_g_main:
            trainer.opt_g_cls.load_moment_arrays("opt.g_cls", arrays, opt_steps["g_cls"])
        trainer.step = int(header["step"])
        trainer._dc_update_count = int(header["extra"].get("dc_update_count", 0))
        return trainer


def train(config: TrainConfig, dataset: Dataset, out_dir: str | Path | None = None,
          hooks: TrainerHooks | None = None) -> list[Path]:
    """Convenience wrapper: build a trainer, run it, return checkpoint paths."""
    return Trainer(config, dataset, out_dir=out_dir, hooks=hooks).train()
