"""Reference architectures and checkpoint-to-record conversion.

Both classifiers are built from one flat op plan (conv / relu / avgpool /
save / add / flatten / dense) that drives the torch forward pass AND the
manifest export, so the two can never drift apart. Only ops with an exact
manifest encoding are allowed; anything that would break piecewise
affinity in the measurement engine (normalization layers, max pooling) is
rejected with a reason instead of being silently approximated.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import ExportError

VGG8_PLAN = (64, "P", 128, "P", 256, 256, "P", 512, 512, "P")
RESNET_WIDTHS = (64, 128, 256, 512)
BLOCKS_PER_STAGE = 2


def _conv(cin: int, cout: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, kernel_size=3, stride=stride, padding=1, bias=True)


class _PlanNet(nn.Module):
    """A network defined entirely by its op plan."""

    def __init__(self):
        super().__init__()
        self.convs = nn.ModuleList()
        self.fcs = nn.ModuleList()
        self.plan: list[tuple] = []

    def _add_conv(self, cin, cout, stride=1):
        m = _conv(cin, cout, stride)
        self.convs.append(m)
        self.plan.append(("conv", m))

    def _add_fc(self, fin, fout):
        m = nn.Linear(fin, fout, bias=True)
        self.fcs.append(m)
        self.plan.append(("dense", m))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        saved: dict[str, torch.Tensor] = {}
        for op in self.plan:
            kind = op[0]
            if kind == "conv" or kind == "dense":
                x = op[1](x)
            elif kind == "relu":
                x = torch.relu(x)
            elif kind == "pool":
                x = torch.nn.functional.avg_pool2d(x, op[1], op[2])
            elif kind == "flatten":
                x = x.flatten(1)
            elif kind == "save":
                saved[op[1]] = x
            elif kind == "add":
                x = x + saved.pop(op[1])
            else:
                raise AssertionError(kind)
        return x


class Vgg8(_PlanNet):
    """Six 3x3 convolutions in four pooled blocks, then a two-layer head."""

    head_key = "fcs.1.bias"

    def __init__(self, classes: int, in_channels: int = 3, input_size: int = 32):
        super().__init__()
        if input_size % 16 or input_size < 16:
            raise ExportError(f"input size {input_size} not a multiple of 16")
        cin = in_channels
        for step in VGG8_PLAN:
            if step == "P":
                self.plan.append(("pool", 2, 2))
            else:
                self._add_conv(cin, step)
                self.plan.append(("relu",))
                cin = step
        side = input_size // 16
        self.plan.append(("flatten",))
        self._add_fc(512 * side * side, 512)
        self.plan.append(("relu",))
        self._add_fc(512, classes)

    @staticmethod
    def input_size_from(sd: dict) -> int:
        fin = sd["fcs.0.weight"].shape[1]
        side = round((fin / 512) ** 0.5)
        if 512 * side * side != fin:
            raise ExportError(f"head input {fin} is not 512*s*s for any s")
        return 16 * side


class ResNet18Flat(_PlanNet):
    """Stem + four stages of two identity-skip blocks, widened by strided
    transition convs, global average pool, linear head.

    Skips are pure identities (save/add); projection shortcuts have no
    manifest encoding, so stage transitions happen between blocks instead
    of inside them.
    """

    head_key = "fcs.0.bias"

    def __init__(self, classes: int, in_channels: int = 3, input_size: int = 32):
        super().__init__()
        if input_size % 8 or input_size < 8:
            raise ExportError(f"input size {input_size} not a multiple of 8")
        self._add_conv(in_channels, RESNET_WIDTHS[0])
        self.plan.append(("relu",))
        for i, w in enumerate(RESNET_WIDTHS):
            if i:
                self._add_conv(RESNET_WIDTHS[i - 1], w, stride=2)
                self.plan.append(("relu",))
            for j in range(BLOCKS_PER_STAGE):
                tag = f"s{i}b{j}"
                self.plan.append(("save", tag))
                self._add_conv(w, w)
                self.plan.append(("relu",))
                self._add_conv(w, w)
                self.plan.append(("add", tag))
                self.plan.append(("relu",))
        side = input_size // 8
        self.plan.append(("pool", side, side))
        self.plan.append(("flatten",))
        self._add_fc(RESNET_WIDTHS[-1], classes)


ARCHS = {"vgg8": Vgg8, "resnet18": ResNet18Flat}

_BATCHNORM_STAT_SUFFIXES = ("running_mean", "running_var", "num_batches_tracked")


def build(arch: str, classes: int, in_channels: int = 3,
          input_size: int = 32) -> _PlanNet:
    if arch not in ARCHS:
        raise ExportError(f"unknown architecture {arch!r} (have {sorted(ARCHS)})")
    if classes < 2:
        raise ExportError(f"need at least 2 classes, got {classes}")
    return ARCHS[arch](classes, in_channels=in_channels, input_size=input_size).double()


def seed_parameters(module: nn.Module, seed: int) -> nn.Module:
    """Deterministic He-style float64 init from a numpy generator.

    Used for fixtures and tests; independent of torch's RNG so reference
    outputs stay stable across torch versions.
    """
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if p.ndim > 1:
                fan_in = int(np.prod(p.shape[1:]))
                arr = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=tuple(p.shape))
            else:
                arr = rng.normal(0.0, 0.05, size=tuple(p.shape))
            p.copy_(torch.from_numpy(arr))
    return module


def reject_unsupported(module: nn.Module) -> None:
    """Fail with a reason on ops the measurement engine cannot trace."""
    norms = (nn.modules.batchnorm._BatchNorm, nn.GroupNorm, nn.LayerNorm,
             nn.InstanceNorm1d, nn.InstanceNorm2d, nn.InstanceNorm3d)
    pools = (nn.MaxPool1d, nn.MaxPool2d, nn.MaxPool3d,
             nn.AdaptiveMaxPool1d, nn.AdaptiveMaxPool2d, nn.AdaptiveMaxPool3d)
    for name, m in module.named_modules():
        if isinstance(m, norms):
            raise ExportError(
                f"module {name or '<root>'}: normalization layers have no affine "
                "manifest encoding; fold them into the neighboring conv or "
                "retrain without normalization")
        if isinstance(m, pools):
            raise ExportError(
                f"module {name or '<root>'}: max pooling adds activation "
                "boundaries the region walk does not model; use average pooling")


def load_checkpoint(path) -> dict[str, torch.Tensor]:
    """Read a checkpoint into a plain state dict, rejecting unsupported ops."""
    try:
        obj = torch.load(path, map_location="cpu", weights_only=True)
    except Exception:
        try:
            obj = torch.load(path, map_location="cpu", weights_only=False)
        except Exception as e:
            raise ExportError(f"cannot read checkpoint {path}: {e}") from e
    if isinstance(obj, nn.Module):
        reject_unsupported(obj)
        sd = obj.state_dict()
    elif isinstance(obj, dict):
        inner = obj.get("state_dict")
        sd = inner if isinstance(inner, dict) else obj
    else:
        raise ExportError(f"checkpoint {path} holds {type(obj).__name__}, "
                          "expected a module or state dict")
    for key in sd:
        if str(key).endswith(_BATCHNORM_STAT_SUFFIXES):
            raise ExportError(
                f"checkpoint carries batchnorm statistics ({key}); the model is "
                "not piecewise-affine as stored. Fold the statistics into the "
                "neighboring conv weights or retrain without normalization.")
    bad = [k for k, v in sd.items() if not torch.is_tensor(v)]
    if bad:
        raise ExportError(f"state dict entries are not tensors: {bad[:3]}")
    return {k: v.detach().cpu() for k, v in sd.items()}


def module_from_state(arch: str, sd: dict[str, torch.Tensor],
                      input_size: int | None = None) -> _PlanNet:
    """Rebuild the reference module for a state dict and load it strictly."""
    if arch not in ARCHS:
        raise ExportError(f"unknown architecture {arch!r} (have {sorted(ARCHS)})")
    cls = ARCHS[arch]
    try:
        classes = int(sd[cls.head_key].shape[0])
        in_channels = int(sd["convs.0.weight"].shape[1])
    except KeyError as e:
        raise ExportError(f"checkpoint does not look like {arch}: missing {e}") from e
    if arch == "vgg8":
        derived = Vgg8.input_size_from(sd)
        if input_size is not None and input_size != derived:
            raise ExportError(f"--input-size {input_size} contradicts checkpoint "
                              f"head (expects {derived})")
        input_size = derived
    elif input_size is None:
        input_size = 32
    module = build(arch, classes, in_channels=in_channels, input_size=input_size)
    try:
        module.load_state_dict({k: v.double() for k, v in sd.items()}, strict=True)
    except RuntimeError as e:
        raise ExportError(f"checkpoint does not match {arch}: {e}") from e
    return module


def export_records(module: _PlanNet, in_channels: int,
                   input_size: int) -> tuple[list[dict], tuple, int]:
    """Flatten a plan module into manifest records plus shape metadata."""
    records: list[dict] = []
    output_dim = None
    for op in module.plan:
        kind = op[0]
        if kind == "conv":
            m = op[1]
            records.append({"kind": "conv2d",
                            "weight": m.weight.detach().numpy(),
                            "bias": m.bias.detach().numpy(),
                            "stride": int(m.stride[0]),
                            "padding": int(m.padding[0])})
        elif kind == "dense":
            m = op[1]
            records.append({"kind": "dense",
                            "weight": m.weight.detach().numpy(),
                            "bias": m.bias.detach().numpy()})
            output_dim = int(m.weight.shape[0])
        elif kind == "pool":
            records.append({"kind": "avgpool2d", "kernel": op[1], "stride": op[2]})
        elif kind in ("relu", "flatten"):
            records.append({"kind": kind})
        elif kind in ("save", "add"):
            records.append({"kind": kind, "tag": op[1]})
        else:
            raise AssertionError(kind)
    assert output_dim is not None
    return records, (in_channels, input_size, input_size), output_dim
