"""Writers for the model manifest/blob pair and the .rten tensor container.

These are intentionally self-contained: the formats themselves are the
contract with the measurement engine, so this module mirrors the published
layout rather than importing anyone else's serializer.

  <prefix>.manifest.json   format_version, input_shape, output_dim, layers
  <prefix>.weights.bin     all parameters, little-endian float64, row-major

Every tensor is an {offset, length} range into the blob; offsets are 8-byte
aligned and ranges never overlap. Standalone tensors (.rten):

  magic "RTEN" | u32 version | u8 dtype (0 = float64) | u8 ndim |
  ndim x u64 dims | payload, little-endian, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ExportError

FORMAT_VERSION = 1
RTEN_MAGIC = b"RTEN"
RTEN_VERSION = 1
_ALIGN = 8


def _as_f64(arr, where: str) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype="<f8")
    if out.size and not np.isfinite(out).all():
        raise ExportError(f"{where}: non-finite parameter values")
    return out


def _tensor_entry(arr: np.ndarray, blob: bytearray) -> dict:
    while len(blob) % _ALIGN:
        blob.append(0)
    offset = len(blob)
    data = arr.tobytes()
    blob.extend(data)
    return {"offset": offset, "length": len(data)}


def write_model(records: list[dict], input_shape, output_dim,
                manifest_path, blob_path) -> None:
    """Serialize layer records to a manifest + weight blob.

    Records carry a "kind" plus either numpy tensors ("weight"/"bias") or
    plain integer fields; tensors are appended to the blob and replaced by
    offset ranges in the manifest.
    """
    if not records:
        raise ExportError("refusing to write a model with no layers")
    blob = bytearray()
    entries = []
    for i, rec in enumerate(records):
        kind = rec["kind"]
        entry: dict = {"kind": kind}
        if kind == "dense":
            w = _as_f64(rec["weight"], f"layer {i} weight")
            b = _as_f64(rec["bias"], f"layer {i} bias")
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ExportError(f"layer {i}: dense shapes {w.shape}/{b.shape}")
            entry["in"] = int(w.shape[1])
            entry["out"] = int(w.shape[0])
            entry["weight"] = _tensor_entry(w, blob)
            entry["bias"] = _tensor_entry(b, blob)
        elif kind == "conv2d":
            w = _as_f64(rec["weight"], f"layer {i} weight")
            b = _as_f64(rec["bias"], f"layer {i} bias")
            if w.ndim != 4 or w.shape[2] != w.shape[3] or b.shape != (w.shape[0],):
                raise ExportError(f"layer {i}: conv shapes {w.shape}/{b.shape}")
            entry["in_channels"] = int(w.shape[1])
            entry["out_channels"] = int(w.shape[0])
            entry["kernel"] = int(w.shape[2])
            entry["stride"] = int(rec.get("stride", 1))
            entry["padding"] = int(rec.get("padding", 0))
            entry["weight"] = _tensor_entry(w, blob)
            entry["bias"] = _tensor_entry(b, blob)
        elif kind == "avgpool2d":
            entry["kernel"] = int(rec["kernel"])
            entry["stride"] = int(rec.get("stride", rec["kernel"]))
        elif kind in ("save", "add"):
            entry["tag"] = str(rec["tag"])
        elif kind not in ("relu", "flatten"):
            raise ExportError(f"layer {i}: no manifest encoding for kind {kind!r}")
        entries.append(entry)
    manifest = {
        "format_version": FORMAT_VERSION,
        "input_shape": [int(s) for s in input_shape],
        "output_dim": int(output_dim),
        "layers": entries,
    }
    Path(manifest_path).write_text(json.dumps(manifest, indent=1) + "\n")
    Path(blob_path).write_bytes(bytes(blob))


def write_tensor(path, arr) -> None:
    arr = _as_f64(arr, str(path))
    header = RTEN_MAGIC + struct.pack("<IBB", RTEN_VERSION, 0, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    Path(path).write_bytes(header + dims + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:4] != RTEN_MAGIC:
        raise ExportError(f"{path}: not a tensor container (bad magic)")
    version, dtype, ndim = struct.unpack_from("<IBB", raw, 4)
    if version != RTEN_VERSION or dtype != 0:
        raise ExportError(f"{path}: unsupported container version/dtype")
    dims_end = 10 + 8 * ndim
    if len(raw) < dims_end:
        raise ExportError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", raw, 10) if ndim else ()
    count = 1
    for d in dims:
        count *= d
    if len(raw) != dims_end + 8 * count:
        raise ExportError(f"{path}: payload size does not match dims {dims}")
    return np.frombuffer(raw, dtype="<f8", count=count, offset=dims_end).reshape(dims).copy()
