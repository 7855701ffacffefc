"""Umbrella command line: generate-data | train | evaluate | render | serve.

Dataset arguments accept either a path to a ``manifest.csv`` (or its
directory) or an inline glyph spec of the form::

    glyphs:count=2000,size=32,seed=7,vest=0.3,tee=0.3,stripes=0.5

where any glyph attribute name maps to its sampling marginal.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import checkpoint as ckpt
from .data import Dataset, load_manifest, save_manifest, split
from .evaluation import (
    OracleClassifier,
    evaluate_checkpoint,
    render_grid,
    train_oracle,
)
from .glyphs import GLYPH_ATTRIBUTES, GlyphConfig, generate_glyphs
from .service import ENV_CHECKPOINT, load_checkpoint
from .training import TrainConfig, Trainer


def resolve_data_source(spec: str) -> Dataset:
    """``glyphs:k=v,...`` inline spec or a manifest path."""
    if spec.startswith("glyphs:"):
        fields = {}
        for part in spec[len("glyphs:"):].split(","):
            if not part:
                continue
            key, _, value = part.partition("=")
            if not value:
                raise click.BadParameter(f"glyph spec entry {part!r} is not key=value")
            fields[key.strip()] = value.strip()
        count = int(fields.pop("count", 2000))
        size = int(fields.pop("size", 32))
        seed = int(fields.pop("seed", 0))
        marginals = {}
        for key, value in fields.items():
            if key not in GLYPH_ATTRIBUTES:
                raise click.BadParameter(f"unknown glyph attribute {key!r} in data spec")
            marginals[key] = float(value)
        config = GlyphConfig(count=count, image_size=size, attribute_marginals=marginals)
        return generate_glyphs(config, seed=seed)
    return load_manifest(spec)


@click.group()
def main() -> None:
    """Attribute-level garment editing: data, training, evaluation, serving."""


@main.command("generate-data")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--count", default=2000, show_default=True)
@click.option("--size", default=32, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--marginal", "marginals", multiple=True, metavar="NAME=RATE",
              help="Override one attribute's sampling rate (repeatable).")
def generate_data(out_dir: Path, count: int, size: int, seed: int, marginals: tuple[str, ...]) -> None:
    """Render a synthetic glyph dataset to a manifest directory."""
    rates = {}
    for entry in marginals:
        name, _, value = entry.partition("=")
        rates[name] = float(value)
    config = GlyphConfig(count=count, image_size=size, attribute_marginals=rates)
    dataset = generate_glyphs(config, seed=seed)
    manifest = save_manifest(dataset, out_dir)
    click.echo(f"wrote {len(dataset)} images to {manifest}")


@main.command("train")
@click.option("--config", "config_path", type=click.Path(path_type=Path, exists=True),
              help="JSON file mirroring TrainConfig.")
@click.option("--data", "data_spec", required=True)
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--schedule", type=click.Choice(["attgan_joint", "design_split"]))
@click.option("--seed", type=int)
@click.option("--steps", type=int, help="Override total_steps.")
@click.option("--test-fraction", default=0.1, show_default=True,
              help="Held-out fraction excluded from training.")
@click.option("--resume", "resume_path", type=click.Path(path_type=Path, exists=True),
              help="Continue from a checkpoint.")
def train_cmd(config_path, data_spec, out_dir, schedule, seed, steps, test_fraction, resume_path):
    """Train one model and write checkpoints, losses.jsonl and the resolved config."""
    base = json.loads(config_path.read_text()) if config_path else {}
    if schedule:
        base["schedule"] = schedule
    if seed is not None:
        base["seed"] = seed
    if steps is not None:
        base["total_steps"] = steps
    if "total_steps" not in base:
        raise click.UsageError("total_steps required (config file or --steps)")
    config = TrainConfig.from_json_dict(base)

    dataset = resolve_data_source(data_spec)
    train_set, _ = split(dataset, test_fraction, config.seed)
    if resume_path is not None:
        trainer = Trainer.resume(resume_path, train_set, out_dir=out_dir, config=config)
    else:
        trainer = Trainer(config, train_set, out_dir=out_dir)
    written = trainer.train()
    click.echo(f"finished at step {trainer.step}; checkpoints: {[str(p) for p in written]}")


@main.command("evaluate")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(path_type=Path, exists=True))
@click.option("--data", "data_spec", required=True)
@click.option("--oracle", "oracle_path", required=True, type=click.Path(path_type=Path),
              help="Oracle checkpoint; trained on the non-test portion and saved here if missing.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--attributes", "attr_csv", help="Comma-separated subset to evaluate.")
@click.option("--test-fraction", default=0.1, show_default=True)
@click.option("--oracle-seed", default=0, show_default=True)
def evaluate_cmd(checkpoint_path, data_spec, oracle_path, out_path, attr_csv, test_fraction, oracle_seed):
    """Oracle-judged edit success / preservation / reconstruction report.

    The dataset is split with the checkpoint's training seed, so evaluation
    runs on the same held-out items the training command excluded.
    """
    handle = load_checkpoint(checkpoint_path)
    dataset = resolve_data_source(data_spec)
    # The train CLI holds out `test_fraction` with the training seed; reuse it
    # so evaluation sees exactly the items training never saw.
    header, _ = ckpt.load_checkpoint(checkpoint_path)
    train_seed = int(header.get("train_config", {}).get("seed", 0))
    fit_set, test_set = split(dataset, test_fraction, train_seed)

    if oracle_path.is_file():
        oracle = OracleClassifier.load(oracle_path)
    else:
        click.echo(f"training oracle on {len(fit_set)} items ...")
        oracle = train_oracle(fit_set, seed=oracle_seed)
        oracle.save(oracle_path)
        click.echo(f"oracle saved to {oracle_path} (min accuracy {oracle.min_accuracy:.3f})")

    attrs = [a.strip() for a in attr_csv.split(",")] if attr_csv else None
    report = evaluate_checkpoint(handle.gen, oracle, test_set, attributes=attrs,
                                 config_digest=handle.digest)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report.to_json_dict(), indent=2))
    click.echo(f"report written to {out_path}")


@main.command("render")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(path_type=Path, exists=True))
@click.option("--data", "data_spec", required=True)
@click.option("--images", "image_ids", help="Comma-separated item ids (default: first 4).")
@click.option("--attrs", "attr_csv", help="Comma-separated attribute columns (default: all).")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
def render_cmd(checkpoint_path, data_spec, image_ids, attr_csv, out_path):
    """Write a figure-style grid: original | reconstruction | one edit per attribute."""
    handle = load_checkpoint(checkpoint_path)
    dataset = resolve_data_source(data_spec)
    if image_ids:
        items = [dataset.by_id(i.strip()) for i in image_ids.split(",")]
    else:
        items = list(dataset.items[:4])
    attrs = [a.strip() for a in attr_csv.split(",")] if attr_csv else list(handle.schema.names)
    path = render_grid(handle.gen, items, attrs, handle.schema, out_path)
    click.echo(f"grid written to {path}")


@main.command("serve")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(path_type=Path),
              envvar=ENV_CHECKPOINT, help=f"Checkpoint path (or ${ENV_CHECKPOINT}).")
@click.option("--gallery", "gallery_dir", type=click.Path(path_type=Path, exists=True))
@click.option("--studio", "studio_dir", type=click.Path(path_type=Path),
              help="Built studio dist/ to serve at /studio.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8765, show_default=True)
def serve_cmd(checkpoint_path, gallery_dir, studio_dir, host, port):
    """Serve the editing API over HTTP."""
    from .service import serve

    if checkpoint_path is None:
        raise click.UsageError(f"--checkpoint or ${ENV_CHECKPOINT} required")
    serve(checkpoint_path, gallery_dir, studio_dir, host=host, port=port)


if __name__ == "__main__":
    main(sys.argv[1:])
