"""Versioned on-disk format for fitted artifacts.

Artifacts are stored as JSON documents carrying a format version and a
content checksum.  Every floating point number is written as its shortest
round-trip decimal string, so loading a saved model reproduces the original
bits exactly and predictions are identical before and after a save/load
cycle.  Files are written to a temporary path and renamed into place, so a
crash mid-save never leaves a partial artifact behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from importlib import import_module
from typing import Any, Callable

import numpy as np

from .errors import ChecksumError, FormatVersionError, PersistenceError

FORMAT_VERSION = 1

# kind name -> (class, from_payload); populated by the persistable decorator
_REGISTRY: dict[str, tuple[type, Callable[[dict], Any]]] = {}

# modules whose import registers artifact classes
_ARTIFACT_MODULES = (
    "topicsurv.preprocess",
    "topicsurv.lda",
    "topicsurv.superpc",
    "topicsurv.cox",
    "topicsurv.mtlr",
    "topicsurv.pipeline",
)


def persistable(kind: str):
    """Class decorator registering ``to_payload``/``from_payload`` codecs."""

    def register(cls):
        cls._persist_kind = kind
        _REGISTRY[kind] = (cls, cls.from_payload)
        return cls

    return register


def _ensure_registry() -> None:
    for name in _ARTIFACT_MODULES:
        import_module(name)


def encode_float(x: float) -> str:
    return repr(float(x))


def decode_float(s: str) -> float:
    return float(s)


def encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a)
    if a.dtype.kind == "f":
        data = [repr(float(x)) for x in a.ravel()]
        dtype = "f8"
    elif a.dtype.kind in "iu":
        data = [int(x) for x in a.ravel()]
        dtype = "i8"
    else:
        raise PersistenceError(f"cannot encode array of dtype {a.dtype}")
    return {"shape": list(a.shape), "dtype": dtype, "data": data}


def decode_array(obj: dict) -> np.ndarray:
    dtype = np.float64 if obj["dtype"] == "f8" else np.int64
    if obj["dtype"] == "f8":
        flat = np.array([float(s) for s in obj["data"]], dtype=np.float64)
    else:
        flat = np.array(obj["data"], dtype=np.int64)
    return flat.reshape(obj["shape"]).astype(dtype)


def _canonical(document: dict) -> bytes:
    return json.dumps(document, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _checksum(kind: str, payload: dict) -> str:
    body = _canonical({"kind": kind, "format_version": FORMAT_VERSION, "payload": payload})
    return hashlib.sha256(body).hexdigest()


def save_model(artifact: Any, path: str) -> None:
    """Write a fitted artifact to ``path`` atomically."""
    kind = getattr(artifact, "_persist_kind", None)
    if kind is None:
        raise PersistenceError(
            f"object of type {type(artifact).__name__} is not a persistable artifact"
        )
    payload = artifact.to_payload()
    document = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "checksum": _checksum(kind, payload),
        "payload": payload,
    }
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            json.dump(document, handle, sort_keys=True, indent=1)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def load_model(path: str) -> Any:
    """Read an artifact back; validates version and checksum before decoding."""
    _ensure_registry()
    try:
        with open(path) as handle:
            document = json.load(handle)
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PersistenceError(f"{path}: not a valid artifact file: {exc}") from exc

    for key in ("format_version", "kind", "checksum", "payload"):
        if key not in document:
            raise PersistenceError(f"{path}: missing field {key!r}")
    if document["format_version"] != FORMAT_VERSION:
        raise FormatVersionError(
            f"{path}: format version {document['format_version']} is not "
            f"supported (expected {FORMAT_VERSION})"
        )
    kind = document["kind"]
    if kind not in _REGISTRY:
        raise PersistenceError(f"{path}: unknown artifact kind {kind!r}")
    expected = _checksum(kind, document["payload"])
    if document["checksum"] != expected:
        raise ChecksumError(f"{path}: checksum mismatch, file is corrupt or edited")
    _, from_payload = _REGISTRY[kind]
    return from_payload(document["payload"])
