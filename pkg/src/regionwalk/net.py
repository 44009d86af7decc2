"""Inference engine for piecewise-affine ReLU networks.

A network is a flat chain of layers in double precision. Residual
connections are expressed with save/add taps instead of a graph: save
stores the running tensor under a tag, add sums a previously saved tag
back in. ReLU layers own no parameters and may appear anywhere in the
chain, including first.

Inputs with the same activation pattern (the concatenated on/off bits of
every ReLU) see the same affine map, so the pattern doubles as a region
identifier. forward_frozen evaluates that affine map directly by pinning
the masks, which is what turns region bookkeeping into closed-form
deviation integrals downstream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError

AFFINE_KINDS = ("dense", "conv2d")
LAYER_KINDS = ("dense", "conv2d", "avgpool2d", "flatten", "relu", "save", "add")


@dataclass(eq=False)
class LayerSpec:
    """One layer of the chain. Unused fields stay at their defaults."""

    kind: str
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    kernel: int = 0
    tag: str | None = None


def dense(weight, bias) -> LayerSpec:
    w = np.asarray(weight, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    return LayerSpec("dense", weight=w, bias=b)


def conv2d(weight, bias, stride: int = 1, padding: int = 0) -> LayerSpec:
    w = np.asarray(weight, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    return LayerSpec("conv2d", weight=w, bias=b, stride=stride, padding=padding)


def avgpool2d(kernel: int, stride: int | None = None) -> LayerSpec:
    return LayerSpec("avgpool2d", kernel=kernel, stride=kernel if stride is None else stride)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def relu() -> LayerSpec:
    return LayerSpec("relu")


def save(tag: str) -> LayerSpec:
    return LayerSpec("save", tag=tag)


def add(tag: str) -> LayerSpec:
    return LayerSpec("add", tag=tag)


class ActivationPattern:
    """Immutable bit vector naming a linear region.

    One bit per ReLU input entry, 1 iff the preactivation is strictly
    positive (exact zeros map to 0). Equality short-circuits on a 64-bit
    digest before falling back to a full bit comparison.
    """

    __slots__ = ("bits", "digest")

    def __init__(self, bits: np.ndarray):
        bits = np.ascontiguousarray(np.asarray(bits).ravel(), dtype=bool)
        bits.flags.writeable = False
        self.bits = bits
        payload = len(bits).to_bytes(8, "little") + np.packbits(bits).tobytes()
        self.digest = int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")

    def __len__(self) -> int:
        return self.bits.shape[0]

    def __hash__(self) -> int:
        return self.digest

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActivationPattern):
            return NotImplemented
        if self.digest != other.digest:
            return False
        return bool(np.array_equal(self.bits, other.bits))

    def __repr__(self) -> str:
        return f"ActivationPattern({len(self)} bits, digest={self.digest:#018x})"


@dataclass
class ForwardResult:
    logits: np.ndarray
    pattern: ActivationPattern
    preacts: list[np.ndarray]


class Network:
    """Validated layer chain with fixed input shape.

    Shapes are propagated at construction; incompatibilities, non-finite
    parameters, and dangling add tags are rejected up front so evaluation
    never has to re-check them.
    """

    def __init__(self, layers, input_shape):
        layers = tuple(layers)
        if not layers:
            raise InputError("network needs at least one layer")
        self.input_shape = tuple(int(s) for s in input_shape)
        if not self.input_shape or any(s <= 0 for s in self.input_shape):
            raise InputError(f"bad input shape {input_shape}")
        self.layers = layers
        self.shapes: list[tuple[int, ...]] = []  # output shape per layer
        self.relu_layers: list[int] = []
        self.relu_sizes: list[int] = []
        self.relu_offsets: list[int] = []
        self._validate()
        self.neuron_count = int(sum(self.relu_sizes))
        self.depth = sum(1 for l in layers if l.kind in AFFINE_KINDS)
        self.output_dim = self.shapes[-1][0]

    def _validate(self) -> None:
        shape = self.input_shape
        saved: dict[str, tuple[int, ...]] = {}
        offset = 0
        for i, layer in enumerate(self.layers):
            k = layer.kind
            if k not in LAYER_KINDS:
                raise InputError(f"layer {i}: unknown kind {k!r}")
            if k in AFFINE_KINDS:
                if layer.weight is None or layer.bias is None:
                    raise InputError(f"layer {i} ({k}): missing parameters")
                if not (np.isfinite(layer.weight).all() and np.isfinite(layer.bias).all()):
                    raise InputError(f"layer {i} ({k}): non-finite parameters")
            elif layer.weight is not None or layer.bias is not None:
                raise InputError(f"layer {i} ({k}): carries parameters")

            if k == "dense":
                if layer.weight.ndim != 2 or layer.bias.shape != (layer.weight.shape[0],):
                    raise InputError(f"layer {i} (dense): bad parameter shapes")
                if len(shape) != 1 or shape[0] != layer.weight.shape[1]:
                    raise InputError(f"layer {i} (dense): expects {layer.weight.shape[1]} inputs, got {shape}")
                shape = (layer.weight.shape[0],)
            elif k == "conv2d":
                w = layer.weight
                if w.ndim != 4 or layer.bias.shape != (w.shape[0],):
                    raise InputError(f"layer {i} (conv2d): bad parameter shapes")
                if len(shape) != 3 or shape[0] != w.shape[1]:
                    raise InputError(f"layer {i} (conv2d): expects {w.shape[1]} channels, got {shape}")
                if layer.stride < 1 or layer.padding < 0:
                    raise InputError(f"layer {i} (conv2d): bad stride/padding")
                h = (shape[1] + 2 * layer.padding - w.shape[2]) // layer.stride + 1
                wd = (shape[2] + 2 * layer.padding - w.shape[3]) // layer.stride + 1
                if h <= 0 or wd <= 0:
                    raise InputError(f"layer {i} (conv2d): empty output {h}x{wd}")
                shape = (w.shape[0], h, wd)
            elif k == "avgpool2d":
                if len(shape) != 3:
                    raise InputError(f"layer {i} (avgpool2d): expects CHW input, got {shape}")
                if layer.kernel < 1 or layer.stride < 1:
                    raise InputError(f"layer {i} (avgpool2d): bad kernel/stride")
                h = (shape[1] - layer.kernel) // layer.stride + 1
                wd = (shape[2] - layer.kernel) // layer.stride + 1
                if h <= 0 or wd <= 0:
                    raise InputError(f"layer {i} (avgpool2d): empty output {h}x{wd}")
                shape = (shape[0], h, wd)
            elif k == "flatten":
                shape = (int(np.prod(shape)),)
            elif k == "relu":
                self.relu_layers.append(i)
                size = int(np.prod(shape))
                self.relu_sizes.append(size)
                self.relu_offsets.append(offset)
                offset += size
            elif k == "save":
                if not layer.tag:
                    raise InputError(f"layer {i} (save): missing tag")
                if layer.tag in saved:
                    raise InputError(f"layer {i} (save): duplicate tag {layer.tag!r}")
                saved[layer.tag] = shape
            elif k == "add":
                if layer.tag not in saved:
                    raise InputError(f"layer {i} (add): tag {layer.tag!r} never saved")
                if saved[layer.tag] != shape:
                    raise InputError(
                        f"layer {i} (add): tag {layer.tag!r} has shape {saved[layer.tag]}, current is {shape}"
                    )
            self.shapes.append(shape)
        if len(shape) != 1:
            raise InputError(f"network must end in a flat vector, got {shape}")

    def __repr__(self) -> str:
        kinds = ",".join(l.kind for l in self.layers)
        return f"Network({self.input_shape}->{self.output_dim}, V={self.neuron_count}, [{kinds}])"


def _conv2d_apply(layer: LayerSpec, x: np.ndarray, with_bias: bool) -> np.ndarray:
    if layer.padding:
        p = layer.padding
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(x, layer.weight.shape[-2:], axis=(2, 3))
    win = win[:, :, :: layer.stride, :: layer.stride]
    out = np.einsum("bchwij,ocij->bohw", win, layer.weight, optimize=True)
    if with_bias:
        out = out + layer.bias[None, :, None, None]
    return out


def _avgpool_apply(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    k = layer.kernel
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, :: layer.stride, :: layer.stride]
    return win.mean(axis=(-2, -1))


def _apply_layer(layer: LayerSpec, t: np.ndarray, with_bias: bool) -> np.ndarray:
    k = layer.kind
    if k == "dense":
        out = t @ layer.weight.T
        if with_bias:
            out = out + layer.bias
        return out
    if k == "conv2d":
        return _conv2d_apply(layer, t, with_bias)
    if k == "avgpool2d":
        return _avgpool_apply(layer, t)
    if k == "flatten":
        return t.reshape(t.shape[0], -1)
    raise AssertionError(k)


def _joint_pass(net: Network, x: np.ndarray, d: np.ndarray | None = None,
                keep_relu_inputs: bool = False, check_finite: bool = False,
                resolve: float = 0.0):
    """Batched chain evaluation, optionally dragging a direction along.

    x: (B, *input_shape). d, when given, is propagated through the linear
    part of every layer (no biases) and clamped by x's masks at each ReLU,
    so it tracks the directional image of the input direction under the
    current region's affine map.

    resolve shifts gating off the hyperplanes: masks become
    (x + resolve * d) > 0 and gate both paths, so a point sitting within
    |resolve| of a boundary is classified by the region just ahead of
    (resolve > 0) or behind (resolve < 0) it along d. Zero keeps the plain
    strict x > 0 gating. Downstream preactivations and slopes then belong
    to the resolved region, which is what a boundary walk needs: a landing
    residue of the wrong sign on a crossed hyperplane would otherwise leak
    the stale region's affine map into every deeper layer. Requires d.

    Returns (logits (B,K), bits (B,V), relu_inputs). relu_inputs is a list
    of (x_in, d_in) pairs as seen by each ReLU, flattened per sample; d_in
    is None when d is None.
    """
    if resolve != 0.0 and d is None:
        raise InputError("resolve requires a direction")
    b = x.shape[0]
    taps_x: dict[str, np.ndarray] = {}
    taps_d: dict[str, np.ndarray] = {}
    bit_parts: list[np.ndarray] = []
    relu_inputs: list[tuple[np.ndarray, np.ndarray | None]] = []
    for i, layer in enumerate(net.layers):
        k = layer.kind
        if k == "relu":
            if keep_relu_inputs:
                relu_inputs.append((x.reshape(b, -1),
                                    None if d is None else d.reshape(b, -1)))
            if resolve != 0.0:
                mask = (x + resolve * d) > 0
            else:
                mask = x > 0
            bit_parts.append(mask.reshape(b, -1))
            x = np.where(mask, x, 0.0)
            if d is not None:
                d = np.where(mask, d, 0.0)
        elif k == "save":
            taps_x[layer.tag] = x
            if d is not None:
                taps_d[layer.tag] = d
        elif k == "add":
            x = x + taps_x[layer.tag]
            if d is not None:
                d = d + taps_d[layer.tag]
        else:
            x = _apply_layer(layer, x, with_bias=True)
            if d is not None:
                d = _apply_layer(layer, d, with_bias=False)
        if check_finite and not np.isfinite(x).all():
            raise NumericError(f"non-finite value after layer {i} ({k})")
    if bit_parts:
        bits = np.concatenate(bit_parts, axis=1)
    else:
        bits = np.zeros((b, 0), dtype=bool)
    return x, bits, relu_inputs


def _frozen_pass(net: Network, bits: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate with ReLU masks pinned to the given bits. bits: (B, V) or (V,)."""
    b = x.shape[0]
    bits = np.asarray(bits, dtype=bool)
    if bits.ndim == 1:
        bits = np.broadcast_to(bits, (b, bits.shape[0]))
    if bits.shape != (b, net.neuron_count):
        raise InputError(f"pattern has {bits.shape[-1]} bits, network has {net.neuron_count}")
    taps: dict[str, np.ndarray] = {}
    r = 0
    for layer in net.layers:
        k = layer.kind
        if k == "relu":
            mask = bits[:, net.relu_offsets[r]: net.relu_offsets[r] + net.relu_sizes[r]]
            x = np.where(mask.reshape(x.shape), x, 0.0)
            r += 1
        elif k == "save":
            taps[layer.tag] = x
        elif k == "add":
            x = x + taps[layer.tag]
        else:
            x = _apply_layer(layer, x, with_bias=True)
    return x


def _as_batch(net: Network, x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != net.input_shape:
        raise InputError(f"{name} has shape {arr.shape}, network expects {net.input_shape}")
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite values")
    return arr[None]


def forward(net: Network, x) -> ForwardResult:
    """Full evaluation of one input.

    Returns logits, the activation pattern, and the flattened preactivation
    of every ReLU in chain order. Raises NumericError naming the layer if
    anything overflows to non-finite along the way.
    """
    xb = _as_batch(net, x)
    logits, bits, relu_in = _joint_pass(net, xb, None, keep_relu_inputs=True, check_finite=True)
    return ForwardResult(logits=logits[0], pattern=ActivationPattern(bits[0]),
                         preacts=[p[0] for p, _ in relu_in])


def forward_batch(net: Network, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and pattern bits for a stack of inputs, (B, *input_shape)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.shape[1:] != net.input_shape:
        raise InputError(f"batch has shape {xs.shape[1:]}, network expects {net.input_shape}")
    logits, bits, _ = _joint_pass(net, xs)
    return logits, bits


def forward_frozen(net: Network, pattern, x) -> np.ndarray:
    """Evaluate the affine map of a region at x, masks taken from pattern.

    pattern may be an ActivationPattern or a raw bit vector. x need not lie
    inside the region; the map is extended affinely.
    """
    bits = pattern.bits if isinstance(pattern, ActivationPattern) else np.asarray(pattern, dtype=bool)
    xb = _as_batch(net, x)
    return _frozen_pass(net, bits, xb)[0]


def forward_frozen_batch(net: Network, bits: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Frozen evaluation for stacked (bits, x) rows. bits: (B, V), xs: (B, *input_shape)."""
    xs = np.asarray(xs, dtype=np.float64)
    return _frozen_pass(net, bits, xs)


def forward_pair(net: Network, x, d) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Joint pass of a point and a direction.

    Returns per-layer outputs (xs, ds). ds[i] is the image of d after layer
    i with biases dropped and ReLUs replaced by x's masks, so for any layer
    ds[i] equals the directional derivative of the frozen map at x. Raises
    InputError when d is all-zero.
    """
    xb = _as_batch(net, x)
    db = _as_batch(net, d, "d")
    if not np.any(db):
        raise InputError("direction d is all-zero")
    xs_out: list[np.ndarray] = []
    ds_out: list[np.ndarray] = []
    xt, dt = xb, db
    taps_x: dict[str, np.ndarray] = {}
    taps_d: dict[str, np.ndarray] = {}
    for layer in net.layers:
        k = layer.kind
        if k == "relu":
            mask = xt > 0
            xt = np.where(mask, xt, 0.0)
            dt = np.where(mask, dt, 0.0)
        elif k == "save":
            taps_x[layer.tag] = xt
            taps_d[layer.tag] = dt
        elif k == "add":
            xt = xt + taps_x[layer.tag]
            dt = dt + taps_d[layer.tag]
        else:
            xt = _apply_layer(layer, xt, with_bias=True)
            dt = _apply_layer(layer, dt, with_bias=False)
        xs_out.append(xt[0])
        ds_out.append(dt[0])
    return xs_out, ds_out


def pattern_at(net: Network, x) -> ActivationPattern:
    """Activation pattern of a single input."""
    xb = _as_batch(net, x)
    _, bits, _ = _joint_pass(net, xb)
    return ActivationPattern(bits[0])
