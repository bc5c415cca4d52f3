"""Model directories: ``manifest.json`` plus ``tensors.bin`` (little-endian float32)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import LAYER_TENSORS, ModelBundle

MANIFEST = "manifest.json"
PAYLOAD = "tensors.bin"
FORMAT_NAME = "weightmark-model"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


def expected_shapes(s: int, d: int, d_ff: int, n_layers: int) -> dict:
    shapes = {"W_e": (s, d)}
    per_layer = {
        "W_q": (d, d), "W_k": (d, d), "W_v": (d, d), "W_o": (d, d),
        "W_1": (d, d_ff), "W_2": (d_ff, d),
        "gamma1": (1, d), "beta1": (1, d), "gamma2": (1, d), "beta2": (1, d),
    }
    for i in range(n_layers):
        for name in LAYER_TENSORS:
            shapes[f"layers.{i}.{name}"] = per_layer[name]
    shapes["W_c"] = (d, s)
    return shapes


def save_model(model: ModelBundle, path, metadata: dict | None = None) -> Path:
    """Write ``model`` to directory ``path``; output bytes depend only on the inputs."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, a in model.named_tensors():
        raw = np.ascontiguousarray(a, dtype=_DTYPE).tobytes()
        entries.append({"name": name, "rows": a.shape[0], "cols": a.shape[1], "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dtype": "float32-le",
        "dims": model.dims,
        "tensors": entries,
    }
    if metadata:
        manifest["metadata"] = metadata
    (path / PAYLOAD).write_bytes(b"".join(chunks))
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                 encoding="utf-8")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        text = (path / MANIFEST).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: no {MANIFEST}") from exc
    if not text.strip():
        raise FormatError(f"{path / MANIFEST}: empty file")
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path / MANIFEST}: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT_NAME:
        raise FormatError(f"{path / MANIFEST}: not a {FORMAT_NAME} manifest")
    return manifest


def load_model(path) -> ModelBundle:
    path = Path(path)
    manifest = read_manifest(path)
    try:
        dims = manifest["dims"]
        s, d, d_ff, n_layers = (int(dims[k]) for k in ("s", "d", "d_ff", "n_layers"))
        listed = {e["name"]: e for e in manifest["tensors"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path / MANIFEST}: missing field ({exc})") from exc

    try:
        payload = (path / PAYLOAD).read_bytes()
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: no {PAYLOAD}") from exc

    tensors, total = {}, 0
    for name, shape in expected_shapes(s, d, d_ff, n_layers).items():
        entry = listed.get(name)
        if entry is None:
            raise FormatError(f"{path}: tensor {name} missing from manifest")
        if (entry.get("rows"), entry.get("cols")) != shape:
            raise FormatError(
                f"{path}: {name} declared {entry.get('rows')}x{entry.get('cols')}, "
                f"expected {shape[0]}x{shape[1]}")
        nbytes = shape[0] * shape[1] * _DTYPE.itemsize
        start = entry.get("offset")
        if not isinstance(start, int) or start < 0 or start + nbytes > len(payload):
            raise FormatError(f"{path}: payload truncated at tensor {name}")
        tensors[name] = (np.frombuffer(payload, dtype=_DTYPE, count=shape[0] * shape[1],
                                       offset=start)
                         .reshape(shape).astype(np.float64))
        total += nbytes
    if total != len(payload):
        raise FormatError(f"{path}: payload has {len(payload)} bytes, manifest accounts for {total}")
    try:
        return ModelBundle.from_named(tensors, n_layers)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
