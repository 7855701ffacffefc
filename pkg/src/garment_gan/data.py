"""Dataset container, manifest I/O, narrowing, splitting and target sampling.

Images live in memory as ``float32`` arrays of shape ``(H, W, 3)`` scaled to
``[-1, 1]`` (the decoder's tanh range). A dataset on disk is a directory with

* ``manifest.csv`` — header ``id,path,<attr_1>,...,<attr_n>``; attribute cells
  are literal ``0``/``1``; ``path`` is relative to the manifest directory,
* ``schema.json`` — ``{"attributes": [...], "groups": {...}}`` sidecar,
* the referenced PNG images (RGB).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .schema import AttributeSchema, SchemaError, check_attribute_vector

MANIFEST_NAME = "manifest.csv"
SCHEMA_NAME = "schema.json"


class DataError(ValueError):
    """Raised for malformed manifests, images or dataset constraints."""


def _is_power_of_two(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class AnnotatedImage:
    """One image with its binary attribute annotation."""

    id: str
    pixels: np.ndarray  # (H, W, 3) float32 in [-1, 1]
    attrs: np.ndarray  # (n,) uint8

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DataError(f"image {self.id!r}: pixels must be (H, W, 3), got {px.shape}")
        if not (_is_power_of_two(px.shape[0]) and _is_power_of_two(px.shape[1])):
            raise DataError(f"image {self.id!r}: H and W must be powers of two, got {px.shape[:2]}")
        if px.min() < -1.0 or px.max() > 1.0:
            raise DataError(f"image {self.id!r}: pixel values outside [-1, 1]")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "attrs", check_attribute_vector(self.attrs))


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of annotated images sharing one schema and size."""

    schema: AttributeSchema
    items: tuple[AnnotatedImage, ...]
    provenance: Mapping = field(default_factory=dict)

    def __post_init__(self) -> None:
        items = tuple(self.items)
        object.__setattr__(self, "items", items)
        if not items:
            raise DataError("empty dataset")
        n = self.schema.n
        shape = items[0].pixels.shape
        seen: set[str] = set()
        for it in items:
            if it.attrs.shape[0] != n:
                raise DataError(f"image {it.id!r}: attribute arity {it.attrs.shape[0]} != schema n={n}")
            if it.pixels.shape != shape:
                raise DataError(f"image {it.id!r}: shape {it.pixels.shape} differs from {shape}")
            if it.id in seen:
                raise DataError(f"duplicate item id {it.id!r}")
            seen.add(it.id)
        object.__setattr__(self, "provenance", dict(self.provenance))

    def __len__(self) -> int:
        return len(self.items)

    @property
    def image_size(self) -> int:
        return self.items[0].pixels.shape[0]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(it.id for it in self.items)

    def attribute_matrix(self) -> np.ndarray:
        """All annotations stacked into a (N, n) uint8 array."""
        return np.stack([it.attrs for it in self.items]).astype(np.uint8)

    def pixel_stack(self) -> np.ndarray:
        """All images stacked into a (N, H, W, 3) float32 array."""
        return np.stack([it.pixels for it in self.items])

    def subset(self, indices: Sequence[int], provenance: Mapping | None = None) -> "Dataset":
        return Dataset(
            schema=self.schema,
            items=tuple(self.items[i] for i in indices),
            provenance=dict(provenance) if provenance is not None else dict(self.provenance),
        )

    def by_id(self, item_id: str) -> AnnotatedImage:
        for it in self.items:
            if it.id == item_id:
                return it
        raise DataError(f"no item with id {item_id!r}")


def pixels_to_uint8(pixels: np.ndarray) -> np.ndarray:
    """[-1, 1] float -> [0, 255] uint8 (round-half-up via rint)."""
    return np.clip(np.rint((pixels + 1.0) * 127.5), 0, 255).astype(np.uint8)


def uint8_to_pixels(raw: np.ndarray) -> np.ndarray:
    """[0, 255] uint8 -> [-1, 1] float32."""
    return (raw.astype(np.float32) / 127.5) - 1.0


def load_manifest(path: str | Path) -> Dataset:
    """Load a dataset from a ``manifest.csv`` file (or its directory).

    Pixels are rescaled to [-1, 1]; item order follows manifest order; the
    sidecar ``schema.json`` supplies category groups when present. Errors name
    the offending row id.
    """
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    if not manifest_path.is_file():
        raise DataError(f"manifest file not found: {manifest_path}")
    root = manifest_path.parent

    with open(manifest_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty dataset: manifest has no header") from None
        if len(header) < 3 or header[0] != "id" or header[1] != "path":
            raise DataError(f"malformed manifest header: {header!r}")
        attr_names = tuple(header[2:])
        rows = list(reader)
    if not rows:
        raise DataError("empty dataset")

    groups: dict[str, tuple[str, ...]] = {}
    exclusive = None
    schema_path = root / SCHEMA_NAME
    if schema_path.is_file():
        with open(schema_path) as fh:
            sidecar = json.load(fh)
        if tuple(sidecar.get("attributes", attr_names)) != attr_names:
            raise DataError(
                f"schema.json attributes {sidecar.get('attributes')} do not match manifest header {list(attr_names)}"
            )
        groups = {g: tuple(m) for g, m in sidecar.get("groups", {}).items()}
        if "exclusive_groups" in sidecar:
            exclusive = tuple(sidecar["exclusive_groups"])
    try:
        schema = AttributeSchema(names=attr_names, groups=groups, exclusive_groups=exclusive)
    except SchemaError as exc:
        raise DataError(f"invalid schema: {exc}") from exc

    items: list[AnnotatedImage] = []
    expected_shape: tuple[int, ...] | None = None
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 2 + schema.n:
            rid = row[0] if row else f"<line {lineno}>"
            raise DataError(f"row {rid!r}: expected {2 + schema.n} cells, got {len(row)}")
        rid, rel = row[0], row[1]
        cells = row[2:]
        if any(c not in ("0", "1") for c in cells):
            raise DataError(f"row {rid!r}: attribute cells must be 0 or 1, got {cells}")
        attrs = np.array([int(c) for c in cells], dtype=np.uint8)
        img_path = root / rel
        if not img_path.is_file():
            raise DataError(f"row {rid!r}: image file missing: {img_path}")
        try:
            with Image.open(img_path) as im:
                raw = np.asarray(im.convert("RGB"))
        except Exception as exc:
            raise DataError(f"row {rid!r}: unreadable image {img_path}: {exc}") from exc
        if expected_shape is None:
            expected_shape = raw.shape
        if raw.shape != expected_shape:
            raise DataError(f"row {rid!r}: image shape {raw.shape[:2]} differs from {expected_shape[:2]}")
        if not (_is_power_of_two(raw.shape[0]) and _is_power_of_two(raw.shape[1])):
            raise DataError(f"row {rid!r}: odd-sized image {raw.shape[:2]}; sides must be powers of two")
        items.append(AnnotatedImage(id=rid, pixels=uint8_to_pixels(raw), attrs=attrs))

    return Dataset(
        schema=schema,
        items=tuple(items),
        provenance={"kind": "manifest", "path": str(manifest_path)},
    )


def save_manifest(dataset: Dataset, out_dir: str | Path, image_subdir: str = "images") -> Path:
    """Write a dataset as manifest.csv + schema.json + PNG files.

    Pixels are quantised to uint8 on write; attribute vectors and ids
    round-trip exactly through :func:`load_manifest`.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / image_subdir
    img_dir.mkdir(parents=True, exist_ok=True)

    manifest_path = out_dir / MANIFEST_NAME
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "path"] + list(dataset.schema.names))
        for it in dataset.items:
            rel = f"{image_subdir}/{it.id}.png"
            Image.fromarray(pixels_to_uint8(it.pixels)).save(out_dir / rel)
            writer.writerow([it.id, rel] + [str(int(b)) for b in it.attrs])

    with open(out_dir / SCHEMA_NAME, "w") as fh:
        json.dump(dataset.schema.to_json_dict(), fh, indent=2)
    return manifest_path


def narrow_dataset(dataset: Dataset, group: str) -> Dataset:
    """Keep only items with at least one attribute of ``group`` set to 1."""
    idxs = dataset.schema.group_indices(group)  # raises on unknown group
    keep = [i for i, it in enumerate(dataset.items) if any(it.attrs[j] == 1 for j in idxs)]
    if not keep:
        raise DataError(f"narrowing by group {group!r} leaves no items")
    prov = dict(dataset.provenance)
    prov["narrowed_by"] = group
    return dataset.subset(keep, provenance=prov)


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive train/test partition, deterministic in ``seed``."""
    if not (0.0 < test_fraction < 1.0):
        raise DataError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(dataset)
    if n < 2:
        raise DataError("dataset must have at least 2 items to split")
    n_test = int(round(n * test_fraction))
    n_test = min(n - 1, max(1, n_test))
    perm = rng_for(seed, "split").permutation(n)
    test_idx = sorted(perm[:n_test].tolist())
    train_idx = sorted(perm[n_test:].tolist())
    prov = dict(dataset.provenance)
    train = dataset.subset(train_idx, provenance={**prov, "split": "train", "split_seed": seed})
    test = dataset.subset(test_idx, provenance={**prov, "split": "test", "split_seed": seed})
    return train, test


def sample_target_attributes(batch_attrs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw target vectors ``b`` by permuting the batch's own annotations.

    Keeps targets on the manifold of attribute combinations that actually
    co-occur in data, and preserves the empirical attribute distribution
    exactly (the output rows are a permutation of the input rows). Fixed
    points are allowed; a batch of one maps to itself.
    """
    arr = np.asarray(batch_attrs)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DataError(f"batch of attribute vectors must be (B, n) with B >= 1, got {arr.shape}")
    perm = rng.permutation(arr.shape[0])
    return arr[perm].copy()


# Stream ids for the keyed RNG scheme. Every random draw in the artifact comes
# from a generator keyed by (seed, stream, index), which makes training runs
# resumable without serialising generator state.
_STREAMS = {
    "split": 1,
    "epoch": 2,
    "targets": 3,
    "glyphs": 4,
    "init": 5,
    "oracle": 6,
    "gp": 7,
}


def rng_for(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """Deterministic generator for a named stream of a run."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _STREAMS[stream], index])))


def epoch_permutation(seed: int, epoch: int, n_items: int) -> np.ndarray:
    """Shuffle order for one epoch; pure function of (seed, epoch)."""
    return rng_for(seed, "epoch", epoch).permutation(n_items)
