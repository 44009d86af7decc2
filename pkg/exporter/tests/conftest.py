import json
from pathlib import Path

import pytest
import torch

from netexport import archs, cli

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_meta(arch: str) -> dict:
    return json.loads((FIXTURES / arch / "meta.json").read_text())


def rebuild_module(meta: dict):
    """The exact module the shipped reference logits were computed from."""
    return archs.seed_parameters(
        archs.build(meta["arch"], meta["classes"],
                    in_channels=meta["in_channels"],
                    input_size=meta["input_size"]),
        meta["seed"])


@pytest.fixture(scope="session", params=["vgg8", "resnet18"])
def exported(request, tmp_path_factory):
    """Checkpoint -> CLI export, shared across tests: (meta, module, out dir)."""
    meta = fixture_meta(request.param)
    module = rebuild_module(meta)
    out = tmp_path_factory.mktemp(f"export_{meta['arch']}")
    ckpt = out / "ckpt.pt"
    torch.save(module.state_dict(), ckpt)
    rc = cli.main(["--checkpoint", str(ckpt), "--arch", meta["arch"],
                   "--out", str(out)])
    assert rc == 0
    return meta, module, out
