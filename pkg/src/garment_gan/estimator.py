"""Scikit-learn style front door for the attribute editor.

``GarmentAttributeEditor`` wraps dataset assembly, training and inference in
the familiar ``fit`` / ``predict`` / ``transform`` surface so the model
composes with sklearn tooling (``clone``, ``get_params``, pipelines operating
on image arrays). The full training machinery remains available through
:mod:`garment_gan.training` for anything the estimator facade does not cover
(checkpoint files, resume, hooks).
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import AnnotatedImage, Dataset
from .losses import LossWeights
from .models import attrs_to_tensor, images_to_tensor, inference, tensor_to_images
from .schema import AttributeSchema
from .training import TrainConfig, Trainer
from .validation import check_attribute_matrix, check_image_array


class GarmentAttributeEditor(BaseEstimator):
    """Attribute-level image editor with a sklearn-compatible API.

    Parameters mirror the training configuration; ``fit(X, y)`` expects
    ``X`` as ``(N, H, W, 3)`` images in ``[-1, 1]`` and ``y`` as an ``(N, n)``
    binary attribute matrix.
    """

    def __init__(self, schedule: str = "design_split", total_steps: int = 1000,
                 batch_size: int = 32, learning_rate: float = 0.0002,
                 lambda_rec: float = 100.0, lambda_cls_g: float = 10.0,
                 lambda_cls_c: float = 1.0, inner_dc_steps: int = 5,
                 encoder_blocks: int = 3, base_channels: int = 32,
                 seed: int = 0, attribute_names: list[str] | None = None):
        self.schedule = schedule
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lambda_rec = lambda_rec
        self.lambda_cls_g = lambda_cls_g
        self.lambda_cls_c = lambda_cls_c
        self.inner_dc_steps = inner_dc_steps
        self.encoder_blocks = encoder_blocks
        self.base_channels = base_channels
        self.seed = seed
        self.attribute_names = attribute_names

    def fit(self, X, y):
        X = check_image_array(X)
        y = check_attribute_matrix(y)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} images but y has {y.shape[0]} rows")
        names = self.attribute_names or [f"attr_{i}" for i in range(y.shape[1])]
        schema = AttributeSchema(names=tuple(names))
        items = tuple(
            AnnotatedImage(id=f"item-{i:06d}", pixels=X[i], attrs=y[i]) for i in range(X.shape[0])
        )
        dataset = Dataset(schema=schema, items=items, provenance={"kind": "estimator"})

        config = TrainConfig(
            total_steps=self.total_steps,
            schedule=self.schedule,
            weights=LossWeights(self.lambda_rec, self.lambda_cls_g, self.lambda_cls_c),
            batch_size=min(self.batch_size, len(dataset)),
            learning_rate=self.learning_rate,
            inner_dc_steps=self.inner_dc_steps,
            seed=self.seed,
            model={"encoder_blocks": self.encoder_blocks, "base_channels": self.base_channels},
        )
        trainer = Trainer(config, dataset)
        trainer.train()

        self.generator_ = trainer.gen
        self.disc_cls_ = trainer.dc
        self.schema_ = schema
        self.model_config_ = trainer.model_config
        self.train_config_ = config
        self.n_attributes_ = schema.n
        return self

    def _images(self, X) -> torch.Tensor:
        X = check_image_array(X, image_size=self.model_config_.image_size)
        return images_to_tensor(X)

    def predict_proba(self, X) -> np.ndarray:
        """Per-attribute probabilities from the adversarial classifier head."""
        check_is_fitted(self, "generator_")
        with inference(self.disc_cls_):
            probs = self.disc_cls_.classify(self._images(X))
        return probs.numpy()

    def predict(self, X) -> np.ndarray:
        """Thresholded (0.5) per-attribute predictions, (N, n) uint8."""
        return (self.predict_proba(X) >= 0.5).astype(np.uint8)

    def transform(self, X) -> np.ndarray:
        """Reconstructions: decode each image under its predicted attributes."""
        check_is_fitted(self, "generator_")
        return self.edit(X, self.predict(X))

    def edit(self, X, target_attributes) -> np.ndarray:
        """Decode images under explicit target attribute vectors."""
        check_is_fitted(self, "generator_")
        images = self._images(X)
        targets = check_attribute_matrix(target_attributes, n=self.n_attributes_)
        if targets.shape[0] != images.shape[0]:
            raise ValueError(f"{images.shape[0]} images but {targets.shape[0]} target vectors")
        with inference(self.generator_):
            out = self.generator_.decode(
                self.generator_.encode(images), attrs_to_tensor(targets)
            )
        return tensor_to_images(out)
