"""Common model contract and the on-disk model format.

File layout (all little-endian)::

    b"SPMODEL\\0"            8-byte magic
    uint32                  descriptor length in bytes
    descriptor              UTF-8 JSON: {"version", "model_type", "meta", "arrays"}
    array payloads          concatenated, in descriptor order

Each array entry records ``name``, ``dtype`` (``<f4`` or ``<i4``), ``shape`` and
byte ``offset`` relative to the start of the payload block.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import ClassVar, Mapping, Sequence

import numpy as np

from ..errors import ModelFormatError
from ..fsutil import atomic_write_bytes  # noqa: F401  (re-exported)
from ..spectra import GridSpec, Spectrum, SpectrumKind
from .prediction import Prediction

MAGIC = b"SPMODEL\0"
FORMAT_VERSION = 1
_ALLOWED_DTYPES = {"<f4", "<i4"}

MODEL_TYPES: dict[str, type["TrainedModel"]] = {}


def register(cls):
    MODEL_TYPES[cls.model_type] = cls
    return cls


class TrainedModel:
    """Base for all classifiers.

    Subclasses implement ``predict_proba`` on a ``(n, d)`` matrix and the
    ``state``/``from_state`` pair used by persistence.
    """

    model_type: ClassVar[str] = ""
    classes: tuple
    grid: GridSpec | None
    kind: SpectrumKind | None

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, x) -> Prediction:
        if isinstance(x, Spectrum):
            x = x.values
        proba = self.predict_proba(np.asarray(x, dtype=float)[None, :])
        return Prediction(proba[0], self.classes)

    def predict_many(self, x: np.ndarray) -> list[Prediction]:
        return [Prediction(row, self.classes) for row in self.predict_proba(np.asarray(x))]

    def state(self) -> tuple[dict, dict[str, np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def from_state(cls, meta: Mapping, arrays: Mapping[str, np.ndarray]) -> "TrainedModel":
        raise NotImplementedError

    def _contract(self) -> dict:
        return {
            "classes": list(self.classes),
            "grid": self.grid.to_dict() if self.grid else None,
            "kind": self.kind.value if self.kind else None,
        }

    @staticmethod
    def _read_contract(meta: Mapping) -> dict:
        return {
            "classes": tuple(meta["classes"]),
            "grid": GridSpec.from_dict(meta["grid"]) if meta.get("grid") else None,
            "kind": SpectrumKind.parse(meta["kind"]) if meta.get("kind") else None,
        }


def _as_storable(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
        return arr.astype("<i4")
    return arr.astype("<f4")


def dumps_model(model: TrainedModel) -> bytes:
    meta, arrays = model.state()
    entries = []
    payload = bytearray()
    for name, arr in arrays.items():
        a = _as_storable(arr)
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "offset": len(payload)})
        payload += a.tobytes(order="C")
    descriptor = json.dumps({"version": FORMAT_VERSION, "model_type": model.model_type,
                             "meta": meta, "arrays": entries}, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(descriptor)) + descriptor + bytes(payload)


def loads_model(data: bytes) -> TrainedModel:
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a spectramin model file (bad magic)")
    (n,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    if len(data) < start + n:
        raise ModelFormatError("model file truncated inside descriptor")
    try:
        desc = json.loads(data[start: start + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model descriptor: {exc}") from None
    if "version" not in desc:
        raise ModelFormatError("model descriptor lacks a version")
    if desc["version"] != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {desc['version']!r}")
    payload = data[start + n:]
    arrays = {}
    for e in desc["arrays"]:
        if e["dtype"] not in _ALLOWED_DTYPES:
            raise ModelFormatError(f"unsupported array dtype {e['dtype']!r}")
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + count * dt.itemsize
        if end > len(payload):
            raise ModelFormatError(f"model file truncated in array {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(payload, dt, count, e["offset"]).reshape(e["shape"]).copy()
    cls = MODEL_TYPES.get(desc["model_type"])
    if cls is None:
        raise ModelFormatError(f"unknown model type {desc['model_type']!r}")
    return cls.from_state(desc["meta"], arrays)


def save_model(model: TrainedModel, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, dumps_model(model))


def load_model(path: str | os.PathLike) -> TrainedModel:
    return loads_model(Path(path).read_bytes())


def prefixed(arrays: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}{k}": v for k, v in arrays.items()}


def unprefixed(arrays: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def param_arrays(params: Sequence[np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}{i}": p for i, p in enumerate(params)}


def read_params(arrays: Mapping[str, np.ndarray], prefix: str, n: int) -> list[np.ndarray]:
    return [arrays[f"{prefix}{i}"].astype(np.float32) for i in range(n)]
