"""Attribute-level garment image editing with conditional GANs.

Two training schedules over one encoder/decoder/discriminator-classifier
stack: the joint generator objective (reconstruction + classification +
adversarial in one update) and the split schedule that trains the
classification term as its own generator update. Includes a synthetic glyph
dataset for desk-scale experiments, an oracle-judged evaluation harness, a
checkpoint format, an HTTP editing service and a sklearn-style estimator.
"""

from .data import (
    AnnotatedImage,
    DataError,
    Dataset,
    load_manifest,
    narrow_dataset,
    sample_target_attributes,
    save_manifest,
    split,
)
from .estimator import GarmentAttributeEditor
from .evaluation import (
    ComparisonResult,
    EvalReport,
    OracleClassifier,
    OracleError,
    compare_full_vs_narrowed,
    edit_success_rate,
    evaluate_checkpoint,
    preservation_rate,
    reconstruction_metrics,
    render_grid,
    train_oracle,
)
from .glyphs import GLYPH_ATTRIBUTES, GlyphConfig, generate_glyphs, glyph_schema
from .losses import LossReport, LossWeights
from .models import DiscriminatorClassifier, Generator, ModelConfig
from .schema import AttributeSchema, SchemaError
from .training import TrainConfig, Trainer, TrainerHooks, TrainingDiverged, train

__version__ = "0.1.0"

__all__ = [
    "AnnotatedImage",
    "AttributeSchema",
    "ComparisonResult",
    "DataError",
    "Dataset",
    "DiscriminatorClassifier",
    "EvalReport",
    "GLYPH_ATTRIBUTES",
    "GarmentAttributeEditor",
    "Generator",
    "GlyphConfig",
    "LossReport",
    "LossWeights",
    "ModelConfig",
    "OracleClassifier",
    "OracleError",
    "SchemaError",
    "TrainConfig",
    "Trainer",
    "TrainerHooks",
    "TrainingDiverged",
    "compare_full_vs_narrowed",
    "edit_success_rate",
    "evaluate_checkpoint",
    "generate_glyphs",
    "glyph_schema",
    "load_manifest",
    "narrow_dataset",
    "preservation_rate",
    "reconstruction_metrics",
    "render_grid",
    "sample_target_attributes",
    "save_manifest",
    "split",
    "train",
    "train_oracle",
]
