"""Oracle-judged evaluation: edit success, preservation, reconstruction, and
the full-vs-narrowed dataset comparison, plus the figure-style grid renderer.

The oracle is an independently trained, frozen attribute classifier (same
head structure as the adversarial classifier). It must clear a per-attribute
accuracy bar on held-out real data before its judgements are trusted; every
aggregate metric below is a plain count over the test items.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from PIL import Image

from . import checkpoint as ckpt
from .data import Dataset, narrow_dataset, pixels_to_uint8, rng_for, split
from .models import (
    DiscriminatorClassifier,
    Generator,
    ModelConfig,
    attrs_to_tensor,
    inference,
    init_weights,
    _torch_generator,
)
from .losses import attribute_bce
from .optim import AdamOptimizer
from .schema import AttributeSchema
from .training import TrainConfig, Trainer

ORACLE_ACCURACY_BAR = 0.95
_EVAL_BATCH = 128


class OracleError(RuntimeError):
    """Raised when an oracle cannot be trained or does not meet its bar."""


@dataclass
class OracleClassifier:
    """Frozen attribute judge with its held-out accuracy record."""

    model: DiscriminatorClassifier
    schema: AttributeSchema
    model_config: ModelConfig
    accuracy: dict[str, float]
    threshold: float = 0.5

    @property
    def min_accuracy(self) -> float:
        return min(self.accuracy.values())

    def is_valid(self, bar: float = ORACLE_ACCURACY_BAR) -> bool:
        return self.min_accuracy >= bar

    def predict(self, images: torch.Tensor) -> np.ndarray:
        """Thresholded per-attribute predictions, (B, n) uint8."""
        with inference(self.model):
            probs = _batched(self.model.classify, images)
        return (probs.numpy() >= self.threshold).astype(np.uint8)

    def save(self, path: str | Path) -> Path:
        meta = {
            "kind": "oracle",
            "step": 0,
            "model_config": self.model_config.to_json_dict(),
            "schema": self.schema.to_json_dict(),
            "extra": {"accuracy": self.accuracy, "threshold": self.threshold},
        }
        return ckpt.save_checkpoint(path, meta, ckpt.module_arrays(self.model, "oracle"))

    @classmethod
    def load(cls, path: str | Path) -> "OracleClassifier":
        header, arrays = ckpt.load_checkpoint(path)
        if header.get("kind") != "oracle":
            raise ckpt.CheckpointError(f"not an oracle checkpoint: kind={header.get('kind')!r}")
        config = ModelConfig.from_json_dict(header["model_config"])
        model = DiscriminatorClassifier(config)
        ckpt.load_module_arrays(model, "oracle", arrays)
        model.eval()
        return cls(
            model=model,
            schema=AttributeSchema.from_json_dict(header["schema"]),
            model_config=config,
            accuracy=dict(header["extra"]["accuracy"]),
            threshold=float(header["extra"].get("threshold", 0.5)),
        )


def _batched(fn, images: torch.Tensor) -> torch.Tensor:
    outs = [fn(images[i:i + _EVAL_BATCH]) for i in range(0, images.shape[0], _EVAL_BATCH)]
    return torch.cat(outs, dim=0)


def _image_tensor(dataset: Dataset, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    px = dataset.pixel_stack()
    return torch.as_tensor(px.astype(np.float64), dtype=dtype).permute(0, 3, 1, 2).contiguous()


def train_oracle(dataset: Dataset, seed: int, epochs: int = 30, batch_size: int = 64,
                 learning_rate: float = 1e-3, holdout_fraction: float = 0.2,
                 accuracy_bar: float = ORACLE_ACCURACY_BAR,
                 model_overrides: Mapping | None = None) -> OracleClassifier:
    """Fit the judge on labelled data; error out if it cannot clear the bar.

    Training stops at the first epoch whose held-out per-attribute accuracy
    is >= ``accuracy_bar`` for every attribute.
    """
    attrs = dataset.attribute_matrix()
    for j, name in enumerate(dataset.schema.names):
        if attrs[:, j].min() == attrs[:, j].max():
            raise OracleError(f"degenerate attribute {name!r}: single class, judge unlearnable")

    fit_set, holdout = split(dataset, holdout_fraction, seed)
    config = ModelConfig(
        image_size=dataset.image_size,
        n_attributes=dataset.schema.n,
        **dict(model_overrides or {}),
    )
    model = DiscriminatorClassifier(config)
    init_weights(model, _torch_generator(seed, 2))
    model.train()

    images = _image_tensor(fit_set)
    labels = fit_set.attribute_matrix()
    holdout_images = _image_tensor(holdout)
    holdout_labels = holdout.attribute_matrix()

    opt = AdamOptimizer(dict(model.named_parameters()), learning_rate, betas=(0.9, 0.999))
    batch_size = min(batch_size, len(fit_set))
    n_batches = len(fit_set) // batch_size

    accuracy: dict[str, float] = {}
    for epoch in range(epochs):
        perm = rng_for(seed, "oracle", epoch).permutation(len(fit_set))
        for i in range(n_batches):
            rows = perm[i * batch_size:(i + 1) * batch_size]
            x = images[torch.as_tensor(rows, dtype=torch.long)]
            t = attrs_to_tensor(labels[rows])
            loss = attribute_bce(model.classify(x), t)
            grads = torch.autograd.grad(loss, opt.params, allow_unused=True)
            grads = [g if g is not None else torch.zeros_like(p) for g, p in zip(grads, opt.params)]
            opt.step(grads)
        with inference(model):
            probs = _batched(model.classify, holdout_images)
        preds = (probs.numpy() >= 0.5).astype(np.uint8)
        per_attr = (preds == holdout_labels).mean(axis=0)
        accuracy = {name: float(acc) for name, acc in zip(dataset.schema.names, per_attr)}
        if min(accuracy.values()) >= accuracy_bar:
            break
    else:
        raise OracleError(
            f"oracle under-trained: per-attribute accuracy {accuracy} below {accuracy_bar} "
            f"after {epochs} epochs"
        )

    model.eval()
    return OracleClassifier(model=model, schema=dataset.schema, model_config=config, accuracy=accuracy)


def _require_valid_oracle(oracle: OracleClassifier) -> None:
    if not oracle.is_valid():
        raise OracleError(
            f"oracle rejected as judge: min per-attribute accuracy {oracle.min_accuracy:.3f} < "
            f"{ORACLE_ACCURACY_BAR}"
        )


def _resolve_attr(schema: AttributeSchema, target_attr: int | str) -> int:
    return schema.index(target_attr) if isinstance(target_attr, str) else int(target_attr)


def _edit_batch(gen: Generator, images: torch.Tensor, targets: np.ndarray) -> torch.Tensor:
    with inference(gen):
        b = attrs_to_tensor(targets, images.dtype)
        outs = []
        for i in range(0, images.shape[0], _EVAL_BATCH):
            chunk = images[i:i + _EVAL_BATCH]
            outs.append(gen.decode(gen.encode(chunk), b[i:i + _EVAL_BATCH]))
        return torch.cat(outs, dim=0)


def edit_success_rate(gen: Generator, oracle: OracleClassifier, testset: Dataset,
                      target_attr: int | str, target_value: int) -> float:
    """Fraction of test images whose edited output the oracle judges to have
    the target attribute at the target value."""
    _require_valid_oracle(oracle)
    if len(testset) == 0:
        raise ValueError("empty testset")
    idx = _resolve_attr(testset.schema, target_attr)
    targets = np.stack([
        testset.schema.single_edit_target(it.attrs, idx, target_value) for it in testset.items
    ])
    images = _image_tensor(testset)
    edited = _edit_batch(gen, images, targets)
    preds = oracle.predict(edited)
    return float((preds[:, idx] == target_value).mean())


def preservation_rate(gen: Generator, oracle: OracleClassifier, testset: Dataset,
                      target_attr: int | str) -> float:
    """Fraction of unedited attributes whose oracle judgement survives an edit.

    Each test image is edited with its target bit flipped; attributes whose
    resolved target differs from the annotation (the flipped bit and any
    mutually exclusive siblings cleared by it) are not counted.
    """
    _require_valid_oracle(oracle)
    schema = testset.schema
    if schema.n < 2:
        raise ValueError("preservation needs at least 2 attributes")
    idx = _resolve_attr(schema, target_attr)
    targets = np.stack([
        schema.single_edit_target(it.attrs, idx, int(1 - it.attrs[idx])) for it in testset.items
    ])
    annotations = testset.attribute_matrix()
    images = _image_tensor(testset)
    preds_orig = oracle.predict(images)
    preds_edit = oracle.predict(_edit_batch(gen, images, targets))

    fractions = []
    for i in range(len(testset)):
        keep = np.flatnonzero(targets[i] == annotations[i])
        keep = keep[keep != idx]
        if keep.size == 0:
            continue
        fractions.append(float((preds_orig[i, keep] == preds_edit[i, keep]).mean()))
    if not fractions:
        raise ValueError("no unedited attributes to measure preservation on")
    return float(np.mean(fractions))


def reconstruction_metrics(gen: Generator, testset: Dataset) -> float:
    """Mean per-image L1 between originals and their own-attribute decodes."""
    if len(testset) == 0:
        raise ValueError("empty testset")
    images = _image_tensor(testset)
    recon = _edit_batch(gen, images, testset.attribute_matrix())
    per_image = (images - recon).abs().flatten(1).mean(dim=1)
    return float(per_image.mean())


@dataclass
class EvalReport:
    """Aggregate metrics of one checkpoint on one test set."""

    edit_success: dict[str, float]
    preservation: dict[str, float]
    mean_reconstruction_l1: float
    sample_count: int
    config_digest: str = ""

    def __post_init__(self) -> None:
        if self.sample_count <= 0:
            raise ValueError("sample_count must be > 0")
        for k, v in {**self.edit_success, **self.preservation}.items():
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"rate {k!r}={v} outside [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "edit_success": dict(self.edit_success),
            "preservation": dict(self.preservation),
            "mean_reconstruction_l1": self.mean_reconstruction_l1,
            "sample_count": self.sample_count,
            "config_digest": self.config_digest,
        }


def evaluate_checkpoint(gen: Generator, oracle: OracleClassifier, testset: Dataset,
                        attributes: Sequence[str] | None = None,
                        config_digest: str = "") -> EvalReport:
    """Edit-success (both directions) and preservation for chosen attributes."""
    names = list(attributes) if attributes is not None else list(testset.schema.names)
    success: dict[str, float] = {}
    preserve: dict[str, float] = {}
    for name in names:
        success[f"{name}->1"] = edit_success_rate(gen, oracle, testset, name, 1)
        success[f"{name}->0"] = edit_success_rate(gen, oracle, testset, name, 0)
        preserve[name] = preservation_rate(gen, oracle, testset, name)
    return EvalReport(
        edit_success=success,
        preservation=preserve,
        mean_reconstruction_l1=reconstruction_metrics(gen, testset),
        sample_count=len(testset),
        config_digest=config_digest,
    )


@dataclass
class ComparisonResult:
    full: EvalReport
    narrowed: EvalReport
    group_attributes: tuple[str, ...]
    deltas: dict[str, float]  # narrowed minus full, per group attribute edit
    budgets: dict[str, int]


def compare_full_vs_narrowed(config: TrainConfig, full: Dataset, group: str,
                             test_fraction: float = 0.1,
                             oracle: OracleClassifier | None = None) -> ComparisonResult:
    """Train on the full vs. the group-narrowed dataset under one budget.

    Both arms share the config, seed and step budget; they are evaluated with
    one oracle on one shared test split, so the per-attribute deltas isolate
    the effect of rebalancing.
    """
    group_attrs = tuple(full.schema.groups[group])
    train_full, test = split(full, test_fraction, config.seed)
    train_narrowed = narrow_dataset(train_full, group)

    if oracle is None:
        oracle = train_oracle(train_full, seed=config.seed)
    _require_valid_oracle(oracle)

    trainer_a = Trainer(config, train_full)
    trainer_a.train()
    trainer_b = Trainer(config, train_narrowed)
    trainer_b.train()
    if trainer_a.step != trainer_b.step:
        raise RuntimeError("comparison arms ran unequal budgets")

    report_full = evaluate_checkpoint(trainer_a.gen, oracle, test, attributes=group_attrs)
    report_narrowed = evaluate_checkpoint(trainer_b.gen, oracle, test, attributes=group_attrs)
    deltas = {
        f"{name}->1": report_narrowed.edit_success[f"{name}->1"] - report_full.edit_success[f"{name}->1"]
        for name in group_attrs
    }
    return ComparisonResult(
        full=report_full,
        narrowed=report_narrowed,
        group_attributes=group_attrs,
        deltas=deltas,
        budgets={"full_steps": trainer_a.step, "narrowed_steps": trainer_b.step},
    )


GRID_PAD = 2


def render_grid_array(gen: Generator, items: Sequence, attribute_list: Sequence[str],
                      schema: AttributeSchema) -> np.ndarray:
    """Figure-style grid as a uint8 RGB array.

    Rows are source images; columns are [original, reconstruction, one
    single-attribute edit (bit set to 1) per requested attribute].
    """
    if len(items) < 1:
        raise ValueError("need at least one source image")
    size = items[0].pixels.shape[0]
    n_cols = 2 + len(attribute_list)

    columns: list[np.ndarray] = []
    images = torch.as_tensor(
        np.stack([it.pixels for it in items]).astype(np.float64), dtype=torch.float32
    ).permute(0, 3, 1, 2).contiguous()
    annotations = np.stack([it.attrs for it in items])

    columns.append(np.stack([pixels_to_uint8(it.pixels) for it in items]))
    recon = _edit_batch(gen, images, annotations)
    columns.append(pixels_to_uint8(recon.permute(0, 2, 3, 1).numpy()))
    for name in attribute_list:
        idx = schema.index(name)
        targets = np.stack([schema.single_edit_target(a, idx, 1) for a in annotations])
        edited = _edit_batch(gen, images, targets)
        columns.append(pixels_to_uint8(edited.permute(0, 2, 3, 1).numpy()))

    rows = len(items)
    h = rows * size + (rows + 1) * GRID_PAD
    w = n_cols * size + (n_cols + 1) * GRID_PAD
    grid = np.full((h, w, 3), 255, dtype=np.uint8)
    for r in range(rows):
        for c in range(n_cols):
            y = GRID_PAD + r * (size + GRID_PAD)
            x = GRID_PAD + c * (size + GRID_PAD)
            grid[y:y + size, x:x + size] = columns[c][r]
    return grid


def grid_tile_origin(row: int, col: int, size: int) -> tuple[int, int]:
    """Pixel origin (y, x) of tile (row, col) in a rendered grid."""
    return (GRID_PAD + row * (size + GRID_PAD), GRID_PAD + col * (size + GRID_PAD))


def render_grid(gen: Generator, items: Sequence, attribute_list: Sequence[str],
                schema: AttributeSchema, out_path: str | Path) -> Path:
    """Write the figure-style grid PNG; returns the path."""
    grid = render_grid_array(gen, items, attribute_list, schema)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(grid).save(out_path)
    return out_path
