"""Command line entry point.

    export --checkpoint ckpt.pt --arch vgg8 --out outdir [--prefix model]
           [--input-size N]

Writes <out>/<prefix>.manifest.json and <out>/<prefix>.weights.bin.
Exit codes: 0 ok, 1 usage, 2 unreadable or unsupported checkpoint.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import archs, formats
from .errors import ExportError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="export",
                description="Export a torch ReLU classifier checkpoint to the "
                            "manifest/blob model format")
    p.add_argument("--checkpoint", required=True, help="torch .pt/.pth file")
    p.add_argument("--arch", required=True, choices=sorted(archs.ARCHS))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--prefix", default="model", help="output file prefix")
    p.add_argument("--input-size", type=int, default=None,
                   help="spatial input size (inferred for vgg8; default 32)")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        sd = archs.load_checkpoint(args.checkpoint)
        module = archs.module_from_state(args.arch, sd, input_size=args.input_size)
        in_channels = int(sd["convs.0.weight"].shape[1])
        input_size = (archs.Vgg8.input_size_from(sd) if args.arch == "vgg8"
                      else (args.input_size or 32))
        records, input_shape, output_dim = archs.export_records(
            module, in_channels, input_size)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = out / f"{args.prefix}.manifest.json"
        blob = out / f"{args.prefix}.weights.bin"
        formats.write_model(records, input_shape, output_dim, manifest, blob)
    except (ExportError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    n_params = sum(r["weight"].size + r["bias"].size
                   for r in records if "weight" in r)
    print(f"{args.arch}: {len(records)} layers, {n_params} parameters, "
          f"input {tuple(input_shape)}, {output_dim} classes -> {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
