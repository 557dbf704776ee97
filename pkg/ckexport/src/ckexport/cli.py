"""Command line: export --checkpoint P --layers L1,L2 --batch data.tnsr --out dir.

Exit codes: 0 success, 2 bad arguments (including unknown/non-conv layers),
4 unreadable checkpoint or batch file.
"""

import argparse
import json
import sys

from .exporter import (
    ExportSpec,
    LayerNotFoundError,
    NotAConvError,
    UnsupportedConvError,
    export,
)
from .tensorfile import TensorFileError, read_tensor


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ckexport",
        description="export conv layers from a torch checkpoint as tensor-file fixtures",
    )
    parser.add_argument("--checkpoint", required=True, help="torch checkpoint (saved module)")
    parser.add_argument(
        "--layers", required=True, help="comma-separated conv layer names to export"
    )
    parser.add_argument("--batch", required=True, help="calibration batch tensor file (N,C,H,W)")
    parser.add_argument("--out", required=True, help="output fixture directory")
    parser.add_argument(
        "--tap",
        choices=("post", "pre"),
        default="post",
        help="capture activations after (default) or before the following nonlinearity",
    )
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    names = [n.strip() for n in args.layers.split(",") if n.strip()]
    try:
        batch = read_tensor(args.batch)
    except TensorFileError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 4
    if batch.ndim != 4:
        sys.stderr.write(f"error: batch must be 4-D (N,C,H,W), got {batch.ndim}-D\n")
        return 2
    try:
        spec = ExportSpec(
            checkpoint=args.checkpoint,
            layer_names=names,
            batch_size=batch.shape[0],
            out_dir=args.out,
        )
        summary = export(spec, batch, tap=args.tap)
    except (LayerNotFoundError, NotAConvError, UnsupportedConvError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (FileNotFoundError, TypeError, TensorFileError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 4
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
