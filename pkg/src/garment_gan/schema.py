"""Binary attribute schemas and attribute-vector helpers.

An attribute vector is a plain ``numpy`` array of shape ``(n,)`` with values
in ``{0, 1}``; batches are ``(B, n)`` arrays. The schema owns the attribute
names, optional category groups (e.g. ``"garment-type"``), and the rule for
resolving sparse edit requests into full target vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

# Group names whose member bits are treated as mutually exclusive when
# resolving edits (setting one bit clears its siblings).
DEFAULT_EXCLUSIVE_GROUPS = ("garment-type",)


class SchemaError(ValueError):
    """Raised for invalid schemas or attribute vectors."""


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered binary attribute names plus optional named category groups.

    Attributes:
        names: unique, non-empty attribute identifiers; length defines ``n``.
        groups: named subsets of ``names`` (e.g. ``{"garment-type": ("vest", "tee")}``).
        exclusive_groups: groups whose bits are mutually exclusive for edits.
            Defaults to ``("garment-type",)`` intersected with ``groups``.
    """

    names: tuple[str, ...]
    groups: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    exclusive_groups: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 1:
            raise SchemaError("schema needs at least one attribute")
        if any(not n for n in names):
            raise SchemaError("attribute names must be non-empty")
        if len(set(names)) != len(names):
            raise SchemaError("attribute names must be unique")
        groups = {g: tuple(members) for g, members in dict(self.groups).items()}
        for gname, members in groups.items():
            unknown = [m for m in members if m not in names]
            if unknown:
                raise SchemaError(f"group {gname!r} references unknown attributes {unknown}")
        object.__setattr__(self, "groups", groups)
        if self.exclusive_groups is None:
            excl = tuple(g for g in DEFAULT_EXCLUSIVE_GROUPS if g in groups)
        else:
            excl = tuple(self.exclusive_groups)
            for g in excl:
                if g not in groups:
                    raise SchemaError(f"exclusive group {g!r} is not a declared group")
        object.__setattr__(self, "exclusive_groups", excl)

    @property
    def n(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown attribute {name!r}") from None

    def group_indices(self, group: str) -> tuple[int, ...]:
        if group not in self.groups:
            raise SchemaError(f"unknown group {group!r}")
        return tuple(self.index(m) for m in self.groups[group])

    def exclusive_siblings(self, attr_index: int) -> tuple[int, ...]:
        """Indices that must be cleared when ``attr_index`` is set to 1."""
        name = self.names[attr_index]
        out: list[int] = []
        for g in self.exclusive_groups:
            if name in self.groups[g]:
                out.extend(i for i in self.group_indices(g) if i != attr_index)
        return tuple(out)

    def single_edit_target(self, source: np.ndarray, attr_index: int, value: int) -> np.ndarray:
        """Target vector for a single-attribute edit.

        Copies ``source``, sets the chosen bit, and (when setting a bit to 1)
        clears its mutually exclusive group siblings.
        """
        bits = check_attribute_vector(source, self.n).copy()
        if value not in (0, 1):
            raise SchemaError(f"attribute value must be 0 or 1, got {value!r}")
        bits[attr_index] = value
        if value == 1:
            for j in self.exclusive_siblings(attr_index):
                bits[j] = 0
        return bits

    def resolve_overrides(self, source: np.ndarray, overrides: Mapping[str, int]) -> np.ndarray:
        """Apply sparse ``{name: value}`` overrides on top of a source vector."""
        bits = check_attribute_vector(source, self.n).copy()
        for name, value in overrides.items():
            idx = self.index(name)
            if value not in (0, 1):
                raise SchemaError(f"attribute {name!r} must be 0 or 1, got {value!r}")
            bits[idx] = value
            if value == 1:
                for j in self.exclusive_siblings(idx):
                    if self.names[j] not in overrides:
                        bits[j] = 0
        return bits

    def to_json_dict(self) -> dict:
        return {
            "attributes": list(self.names),
            "groups": {g: list(m) for g, m in self.groups.items()},
            "exclusive_groups": list(self.exclusive_groups),
        }

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "AttributeSchema":
        return cls(
            names=tuple(obj["attributes"]),
            groups={g: tuple(m) for g, m in obj.get("groups", {}).items()},
            exclusive_groups=tuple(obj["exclusive_groups"]) if "exclusive_groups" in obj else None,
        )


def check_attribute_vector(bits, n: int | None = None) -> np.ndarray:
    """Validate one attribute vector; returns a ``uint8`` array of {0,1}."""
    arr = np.asarray(bits)
    if arr.ndim != 1:
        raise SchemaError(f"attribute vector must be 1-D, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise SchemaError(f"attribute vector has length {arr.shape[0]}, schema expects {n}")
    if not np.isin(arr, (0, 1)).all():
        raise SchemaError("attribute vector entries must be exactly 0 or 1")
    return arr.astype(np.uint8)


def check_attribute_matrix(bits, n: int | None = None) -> np.ndarray:
    """Validate a (B, n) batch of attribute vectors."""
    arr = np.asarray(bits)
    if arr.ndim != 2:
        raise SchemaError(f"attribute batch must be 2-D, got shape {arr.shape}")
    if n is not None and arr.shape[1] != n:
        raise SchemaError(f"attribute batch has arity {arr.shape[1]}, schema expects {n}")
    if not np.isin(arr, (0, 1)).all():
        raise SchemaError("attribute batch entries must be exactly 0 or 1")
    return arr.astype(np.uint8)
