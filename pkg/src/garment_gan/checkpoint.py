"""Single-file checkpoint archive with a JSON header and raw weight arrays.

Binary layout (all integers little-endian)::

    bytes 0..3    magic  b"GGCK"
    bytes 4..7    format version, uint32
    bytes 8..15   header length H in bytes, uint64
    bytes 16..    header JSON, UTF-8, H bytes
    then          one raw block per entry of header["arrays"], in order:
                  C-contiguous (row-major) array data, dtype/shape as declared

The header always carries ``format_version``, ``kind`` ("train" or "oracle"),
``step``, ``model_config``, ``schema`` and an ``arrays`` list of
``{"name", "dtype", "shape"}`` records; loading re-validates every declared
array against the payload and fails naming the first inconsistent array.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"GGCK"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
    "int64": np.int64,
    "uint8": np.uint8,
}


class CheckpointError(RuntimeError):
    """Raised for unreadable, corrupt or incompatible checkpoint files."""


def save_checkpoint(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> Path:
    """Write ``meta`` plus named arrays; array order follows dict order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    index = []
    blocks = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.name
        if dt not in _DTYPES:
            raise CheckpointError(f"array {name!r} has unsupported dtype {dt}")
        index.append({"name": name, "dtype": dt, "shape": list(arr.shape)})
        blocks.append(arr.tobytes(order="C"))

    header = dict(meta)
    header["format_version"] = FORMAT_VERSION
    header["arrays"] = index
    header_bytes = json.dumps(header).encode("utf-8")

    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for block in blocks:
            fh.write(block)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read and validate a checkpoint; returns (header, arrays)."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint file (bad magic): {path}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + hlen:
        raise CheckpointError("corrupt checkpoint: truncated header")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: unreadable header ({exc})") from exc
    if "arrays" not in header:
        raise CheckpointError("corrupt checkpoint: header missing 'arrays' index")

    arrays: dict[str, np.ndarray] = {}
    offset = 16 + hlen
    for entry in header["arrays"]:
        name = entry.get("name", "<unnamed>")
        dt = entry.get("dtype")
        if dt not in _DTYPES:
            raise CheckpointError(f"corrupt checkpoint: array {name!r} has unsupported dtype {dt!r}")
        shape = tuple(int(s) for s in entry.get("shape", []))
        if any(s < 0 for s in shape):
            raise CheckpointError(f"corrupt checkpoint: array {name!r} has negative dims {shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(_DTYPES[dt]).itemsize
        if offset + nbytes > len(blob):
            raise CheckpointError(f"corrupt checkpoint: array {name!r} truncated")
        arrays[name] = np.frombuffer(blob[offset:offset + nbytes], dtype=_DTYPES[dt]).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"corrupt checkpoint: {len(blob) - offset} trailing bytes after last array")
    return header, arrays


def checkpoint_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- torch module <-> array glue ---------------------------------------------

def module_arrays(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    """Full state (parameters and buffers, incl. batch-norm running stats)."""
    return {f"{prefix}.{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_module_arrays(module: torch.nn.Module, prefix: str, arrays: dict[str, np.ndarray]) -> None:
    state = module.state_dict()
    tensors = {}
    for key, ref in state.items():
        name = f"{prefix}.{key}"
        if name not in arrays:
            raise CheckpointError(f"checkpoint missing array {name!r}")
        arr = arrays[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(
                f"array {name!r} has shape {tuple(arr.shape)}, model expects {tuple(ref.shape)}"
            )
        tensors[key] = torch.as_tensor(arr, dtype=ref.dtype)
    module.load_state_dict(tensors)
