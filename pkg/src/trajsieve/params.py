"""Named parameter collections and the versioned checkpoint format.

A checkpoint is a single JSON manifest line (format tag, version, model
kind, config echo, and an ordered array index with names and shapes)
followed by the raw little-endian float64 bytes of each array in index
order. Loading validates every shape against the manifest.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Tensor, parameter
from .errors import CheckpointError, DimensionError

FORMAT_TAG = "trajsieve-checkpoint"
FORMAT_VERSION = 1


class ParameterStore:
    """Ordered name -> Tensor mapping for one model's learnable weights."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array) -> Tensor:
        if name in self._params:
            raise DimensionError(f"parameter {name!r} already registered")
        tensor = parameter(np.asarray(array, dtype=np.float64))
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grads(self) -> None:
        for tensor in self._params.values():
            tensor.zero_grad()

    def grad_norm(self) -> float:
        total = 0.0
        for tensor in self._params.values():
            if tensor.grad is not None:
                total += float((tensor.grad * tensor.grad).sum())
        return float(np.sqrt(total))

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place; names and shapes must match."""
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise CheckpointError(
                f"parameter names disagree: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, tensor in self._params.items():
            incoming = np.asarray(arrays[name], dtype=np.float64)
            if incoming.shape != tensor.data.shape:
                raise CheckpointError(
                    f"parameter {name!r}: shape {incoming.shape} does not match {tensor.data.shape}"
                )
            tensor.data[...] = incoming


def save_checkpoint(path, kind: str, config: dict, store: ParameterStore) -> None:
    """Write manifest line plus concatenated raw float64 arrays."""
    index = [{"name": name, "shape": list(t.data.shape)} for name, t in store.items()]
    manifest = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "arrays": index,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for _, tensor in store.items():
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (kind, config, name -> array)."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    with fh:
        header = fh.readline()
        if not header:
            raise CheckpointError(f"{path}: empty file")
        try:
            manifest = json.loads(header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unreadable manifest") from exc
        if manifest.get("format") != FORMAT_TAG:
            raise CheckpointError(f"{path}: not a {FORMAT_TAG} file")
        if manifest.get("version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {manifest.get('version')!r}")
        kind = manifest.get("kind")
        config = manifest.get("config")
        if not isinstance(kind, str) or not isinstance(config, dict):
            raise CheckpointError(f"{path}: manifest missing kind or config")
        index = manifest.get("arrays")
        if not isinstance(index, list):
            raise CheckpointError(f"{path}: manifest missing array index")
        arrays: dict[str, np.ndarray] = {}
        for entry in index:
            try:
                name = entry["name"]
                shape = tuple(int(d) for d in entry["shape"])
            except (KeyError, TypeError, ValueError) as exc:
                raise CheckpointError(f"{path}: malformed array index entry") from exc
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated data for array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"{path}: trailing bytes after last array")
    return kind, config, arrays
