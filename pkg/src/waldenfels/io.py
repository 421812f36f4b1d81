"""Reading and writing run outputs: CSV fields, versioned JSON documents and run manifests."""
from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ConfigurationError, ShapeMismatchError
from .grid import Field

OUTPUT_SCHEMA_VERSION = 1


class SchemaVersionError(ConfigurationError):
    """An output document was written with an incompatible schema version."""


def _coord_names(dim):
    return ["x"] if dim == 1 else [f"x{j + 1}" for j in range(dim)]


def write_field_csv(path, u: Field, nodes: Optional[np.ndarray] = None, name: str = "value") -> Path:
    """One row per node: coordinates, then the value, all with 17 significant digits."""
    path = Path(path)
    idx = np.arange(u.grid.n_nodes) if nodes is None else np.asarray(nodes)
    x = u.grid.coordinates()[idx]
    data = np.column_stack([x, u.values[idx]])
    header = ",".join(_coord_names(u.grid.dim) + [name])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")
    return path


def read_field_csv(path, grid) -> Field:
    """Inverse of :func:`write_field_csv`; nodes absent from the file are set to zero."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != grid.dim + 1:
        raise ShapeMismatchError(f"{path}: expected {grid.dim + 1} columns")
    vals = np.zeros(grid.n_nodes)
    for row in data:
        vals[grid.locate(row[:-1])] = row[-1]
    return Field(grid, vals)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, payload, kind: Optional[str] = None) -> Path:
    """Write a JSON document; dicts get ``schema_version`` and ``kind`` keys."""
    path = Path(path)
    doc = _clean(payload)
    if isinstance(doc, dict):
        doc = {"schema_version": OUTPUT_SCHEMA_VERSION, **({"kind": kind} if kind else {}), **doc}
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    return path


def read_json(path, kind: Optional[str] = None) -> dict:
    doc = json.loads(Path(path).read_text())
    items = doc if isinstance(doc, list) else [doc]
    for item in items:
        ver = item.get("schema_version") if isinstance(item, dict) else None
        if ver != OUTPUT_SCHEMA_VERSION:
            raise SchemaVersionError(f"{path}: schema_version {ver!r}, expected {OUTPUT_SCHEMA_VERSION}")
    if kind is not None and isinstance(doc, dict) and doc.get("kind") != kind:
        raise SchemaVersionError(f"{path}: expected a {kind!r} document, found {doc.get('kind')!r}")
    return doc


def now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: Optional[int] = None
    version: str = __version__
    started: str = field(default_factory=now)
    finished: Optional[str] = None
    outputs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)

    def add_output(self, path) -> None:
        self.outputs.append(Path(path).name)

    def write(self, out_dir) -> Path:
        self.finished = now()
        return write_json(Path(out_dir) / "manifest.json", asdict(self), kind="manifest")
