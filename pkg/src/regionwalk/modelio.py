"""Model and tensor serialization.

Models are stored as a JSON manifest plus a raw weight blob:

  <name>.manifest.json   layer descriptors, input shape, output dim
  <name>.weights.bin     all parameters, little-endian float64, row-major

Each parameter tensor is addressed by byte offset/length into the blob.
Offsets are 8-byte aligned and ranges never overlap, so the blob can be
mapped or sliced without copies. The loader re-validates everything; a
malformed or truncated file is a FormatError naming the offending layer,
never a crash downstream.

Standalone tensors use a small binary container (extension .rten):

  magic "RTEN" | u32 version | u8 dtype (0 = float64) | u8 ndim |
  ndim x u64 dims | payload, little-endian, row-major

Zero-size dims are legal (an empty tensor has an empty payload).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .net import LAYER_KINDS, LayerSpec, Network

FORMAT_VERSION = 1
RTEN_MAGIC = b"RTEN"
RTEN_VERSION = 1
_ALIGN = 8


def _tensor_entry(arr: np.ndarray, blob: bytearray) -> dict:
    # pad to alignment, then append raw little-endian float64 bytes
    while len(blob) % _ALIGN:
        blob.append(0)
    offset = len(blob)
    data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    blob.extend(data)
    return {"offset": offset, "length": len(data)}


def save_model(net: Network, manifest_path, blob_path) -> None:
    """Write a network to manifest + blob. Refuses degenerate networks."""
    if not net.layers:
        raise FormatError("refusing to save a network with no layers")
    blob = bytearray()
    entries = []
    for layer in net.layers:
        k = layer.kind
        entry: dict = {"kind": k}
        if k == "dense":
            entry["in"] = int(layer.weight.shape[1])
            entry["out"] = int(layer.weight.shape[0])
            entry["weight"] = _tensor_entry(layer.weight, blob)
            entry["bias"] = _tensor_entry(layer.bias, blob)
        elif k == "conv2d":
            entry["in_channels"] = int(layer.weight.shape[1])
            entry["out_channels"] = int(layer.weight.shape[0])
            entry["kernel"] = int(layer.weight.shape[2])
            entry["stride"] = int(layer.stride)
            entry["padding"] = int(layer.padding)
            entry["weight"] = _tensor_entry(layer.weight, blob)
            entry["bias"] = _tensor_entry(layer.bias, blob)
        elif k == "avgpool2d":
            entry["kernel"] = int(layer.kernel)
            entry["stride"] = int(layer.stride)
        elif k in ("save", "add"):
            entry["tag"] = layer.tag
        entries.append(entry)
    manifest = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(net.input_shape),
        "output_dim": int(net.output_dim),
        "layers": entries,
    }
    Path(manifest_path).write_text(json.dumps(manifest, indent=1) + "\n")
    Path(blob_path).write_bytes(bytes(blob))


def _read_tensor(blob: bytes, entry, shape: tuple[int, ...], where: str,
                 claimed: list[tuple[int, int]]) -> np.ndarray:
    if not isinstance(entry, dict) or "offset" not in entry or "length" not in entry:
        raise FormatError(f"{where}: malformed tensor entry")
    offset, length = int(entry["offset"]), int(entry["length"])
    count = int(np.prod(shape)) if shape else 1
    if offset < 0 or offset % _ALIGN:
        raise FormatError(f"{where}: offset {offset} not {_ALIGN}-byte aligned")
    if length != 8 * count:
        raise FormatError(f"{where}: length {length} does not match shape {shape}")
    if offset + length > len(blob):
        raise FormatError(f"{where}: tensor extends past end of blob")
    for lo, hi in claimed:
        if offset < hi and lo < offset + length:
            raise FormatError(f"{where}: tensor overlaps another at [{lo},{hi})")
    claimed.append((offset, offset + length))
    arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
    arr = arr.astype(np.float64, copy=True)
    if not np.isfinite(arr).all():
        raise FormatError(f"{where}: non-finite parameter values")
    return arr


def load_model(manifest_path, blob_path) -> Network:
    """Load and fully validate a manifest + blob pair."""
    try:
        manifest = json.loads(Path(manifest_path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read manifest: {e}") from e
    try:
        blob = Path(blob_path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read blob: {e}") from e

    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {manifest.get('format_version')!r}")
    for key in ("input_shape", "output_dim", "layers"):
        if key not in manifest:
            raise FormatError(f"manifest missing {key!r}")
    if not manifest["layers"]:
        raise FormatError("manifest has no layers")

    claimed: list[tuple[int, int]] = []
    layers: list[LayerSpec] = []
    for i, entry in enumerate(manifest["layers"]):
        kind = entry.get("kind")
        where = f"layer {i} ({kind})"
        if kind not in LAYER_KINDS:
            raise FormatError(f"layer {i}: unsupported layer kind {kind!r}")
        if kind == "dense":
            shape_w = (int(entry["out"]), int(entry["in"]))
            w = _read_tensor(blob, entry.get("weight"), shape_w, where + " weight", claimed)
            b = _read_tensor(blob, entry.get("bias"), (shape_w[0],), where + " bias", claimed)
            layers.append(LayerSpec("dense", weight=w, bias=b))
        elif kind == "conv2d":
            shape_w = (int(entry["out_channels"]), int(entry["in_channels"]),
                       int(entry["kernel"]), int(entry["kernel"]))
            w = _read_tensor(blob, entry.get("weight"), shape_w, where + " weight", claimed)
            b = _read_tensor(blob, entry.get("bias"), (shape_w[0],), where + " bias", claimed)
            layers.append(LayerSpec("conv2d", weight=w, bias=b,
                                    stride=int(entry.get("stride", 1)),
                                    padding=int(entry.get("padding", 0))))
        elif kind == "avgpool2d":
            layers.append(LayerSpec("avgpool2d", kernel=int(entry["kernel"]),
                                    stride=int(entry.get("stride", entry["kernel"]))))
        elif kind in ("save", "add"):
            tag = entry.get("tag")
            if not tag:
                raise FormatError(f"{where}: missing tag")
            layers.append(LayerSpec(kind, tag=str(tag)))
        else:
            layers.append(LayerSpec(kind))

    net = Network(layers, manifest["input_shape"])
    if net.output_dim != int(manifest["output_dim"]):
        raise FormatError(
            f"manifest output_dim {manifest['output_dim']} disagrees with layers ({net.output_dim})"
        )
    return net


def model_paths(prefix) -> tuple[Path, Path]:
    """Conventional manifest/blob paths for a model name prefix."""
    p = Path(prefix)
    return p.with_name(p.name + ".manifest.json"), p.with_name(p.name + ".weights.bin")


def write_tensor(path, arr: np.ndarray) -> None:
    """Write one float64 tensor to the binary container format."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    if not np.isfinite(arr).all():
        raise FormatError(f"{path}: refusing to write non-finite values")
    header = RTEN_MAGIC + struct.pack("<IBB", RTEN_VERSION, 0, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    Path(path).write_bytes(header + dims + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    """Read one tensor, validating header, size, and finiteness."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read tensor: {e}") from e
    if len(raw) < 10 or raw[:4] != RTEN_MAGIC:
        raise FormatError(f"{path}: not a tensor container (bad magic)")
    version, dtype, ndim = struct.unpack_from("<IBB", raw, 4)
    if version != RTEN_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    if dtype != 0:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    dims_end = 10 + 8 * ndim
    if len(raw) < dims_end:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", raw, 10) if ndim else ()
    count = 1
    for d in dims:
        count *= d
    if len(raw) != dims_end + 8 * count:
        raise FormatError(f"{path}: payload size does not match dims {dims}")
    arr = np.frombuffer(raw, dtype="<f8", count=count, offset=dims_end).reshape(dims)
    arr = arr.astype(np.float64, copy=True)
    if arr.size and not np.isfinite(arr).all():
        raise FormatError(f"{path}: non-finite values")
    return arr
