"""Command-line surface: gen, compress, verify, report, bootstrap, sweep.

Exit codes: 0 success, 2 usage error, 3 verification failure, 4 data or
format error. Every command is deterministic given its flags and seed; JSON
goes to stdout, diagnostics to stderr.
"""

import argparse
import csv
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from . import fixtures, metrics, tensorio
from .clustering import SlicConfig, derived_seed
from .compress import (
    compress_dense,
    compress_global_svd,
    compress_hierarchical,
    compress_tucker2,
    factored_forward,
    rank_for_budget,
    reconstruct_weights,
)
from .errors import DataError, FormatError, ParameterError, SccompError
from .linalg import RankPolicy
from .metrics import PredictionSet, bootstrap_se, cost_report, format_percent
from .tensors import conv2d_forward, im2col, reshape_to_matrix

UNCAPPED_RANK = 2**31


def _emit(doc):
    sys.stdout.write(json.dumps(doc, indent=2) + "\n")


def _fail(message):
    sys.stderr.write(f"error: {message}\n")


def _derived_probe(c_in, h, w):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([20127])))
    return rng.standard_normal((c_in, h, w))


def _layer_inputs(manifest, weights, override=None):
    """Probe input for every layer: the model input chained forward."""
    if override is not None:
        x = override
    else:
        x = manifest.load_input()
    if x is None:
        h, w = tensorio.probe_input_dims(manifest.layers[0], weights[0].kernel_size)
        x = _derived_probe(weights[0].c_in, h, w)
    inputs = []
    for w_t in weights:
        inputs.append(x)
        x = conv2d_forward(x, w_t)
    return inputs


def cmd_gen(args):
    if args.planted_rank is not None and args.planted_rank < 1:
        raise ParameterError("--planted-rank must be positive")
    if args.groups is not None and args.groups < 1:
        raise ParameterError("--groups must be positive")
    try:
        result = fixtures.gen_model(
            args.out,
            layers=args.layers,
            c_in=args.c_in,
            c_out=args.c_out,
            height=args.height,
            width=args.width,
            kernel_size=args.kernel,
            stride=args.stride,
            padding=args.padding,
            seed=args.seed,
            planted_rank=args.planted_rank,
            groups=args.groups,
        )
    except SccompError as exc:
        # every gen input arrives via flags, so any rejection is a usage error
        raise ParameterError(str(exc)) from exc
    _emit(
        {
            "manifest": str(result["manifest"]),
            "layers": len(result["weights"]),
            "seed": args.seed,
        }
    )
    return 0


def _compress_layers(manifest, weights, args):
    method = args.method
    named = []
    hyper = {"seed": args.seed}
    for li, (layer, w) in enumerate(zip(manifest.layers, weights)):
        if method == "hierarchical":
            if layer.activations is None:
                raise ParameterError(
                    f"{layer.name}: hierarchical compression needs activation files"
                )
            policy = RankPolicy(
                tau=args.tau, r_max=args.rmax if args.rmax else UNCAPPED_RANK
            )
            comp = compress_hierarchical(
                w,
                manifest.load_features(layer),
                SlicConfig(s=args.superpixels),
                args.spatial_clusters,
                args.channel_clusters,
                policy,
                seed=_layer_seed(args.seed, li),
            )
            hyper.update(
                {
                    "tau": args.tau,
                    "r_max": args.rmax or 0,
                    "superpixels": args.superpixels,
                    "spatial_clusters": args.spatial_clusters,
                    "channel_clusters": args.channel_clusters,
                }
            )
        elif method == "global-svd":
            d = w.c_in * w.kernel_size * w.kernel_size
            if args.budget:
                target = round(w.c_out * d / args.budget)
                rank = rank_for_budget(w.c_out, w.c_in, w.kernel_size, max(1, target))
            else:
                rank = min(w.c_out, d)
            comp = compress_global_svd(w, rank)
            hyper.update({"budget": args.budget or 0.0})
        elif method == "tucker2":
            d = w.c_in * w.kernel_size * w.kernel_size
            target = round(w.c_out * d / args.budget) if args.budget else None
            comp = compress_tucker2(w, target)
            hyper.update({"budget": args.budget or 0.0})
        else:
            comp = compress_dense(w)
        named.append((layer.name, comp))
    return named, hyper


def _layer_seed(seed, layer_index):
    return derived_seed(seed, 2, layer_index)


def cmd_compress(args):
    manifest = tensorio.load_manifest(args.model)
    weights = tensorio.validate_manifest(manifest)
    named, hyper = _compress_layers(manifest, weights, args)
    tensorio.save_archive(args.out, named, args.method, hyper)
    report = cost_report(
        weights,
        [c for _, c in named],
        [layer.output_dims for layer in manifest.layers],
        names=[layer.name for layer in manifest.layers],
    )
    _emit({"archive": str(Path(args.out)), "method": args.method, **report.to_dict()})
    return 0


def _verify_layer(name, w_orig, comp, probe):
    checks = {}
    w_hat = reconstruct_weights(comp)
    orig_mat = reshape_to_matrix(w_orig)
    hat_mat = reshape_to_matrix(w_hat)
    denom = np.linalg.norm(orig_mat)
    weight_err = float(np.linalg.norm(orig_mat - hat_mat) / (denom or 1.0))
    checks["weight_rel_error"] = weight_err

    checks["bias_ok"] = bool(np.array_equal(comp.bias, w_orig.bias))

    if comp.method in ("hierarchical", "global-svd"):
        covered = np.sort(np.concatenate([c.channel_indices for c in comp.clusters]))
        checks["partition_ok"] = bool(np.array_equal(covered, np.arange(comp.c_out)))
        ortho = 0.0
        for c in comp.clusters:
            u, v = c.factors.u, c.factors.v
            ortho = max(
                ortho,
                float(np.abs(u.T @ u - np.eye(u.shape[1])).max()),
                float(np.abs(v.T @ v - np.eye(v.shape[1])).max()),
            )
        checks["max_orthonormality_dev"] = ortho
        # Factors travel as 32-bit floats, so orthonormality is checked at
        # storage precision, not working precision.
        checks["orthonormal_ok"] = ortho <= 1e-4
    else:
        checks["partition_ok"] = True
        checks["orthonormal_ok"] = True

    dense_hat = conv2d_forward(probe, w_hat)
    fact = factored_forward(comp, probe)
    dev_internal = float(np.abs(fact - dense_hat).max())
    scale = float(np.abs(dense_hat).max()) or 1.0
    checks["factored_vs_reconstructed_rel"] = dev_internal / scale
    checks["equivalence_ok"] = dev_internal / scale <= 1e-6

    dense_orig = conv2d_forward(probe, w_orig)
    dev = float(np.linalg.norm(fact - dense_orig))
    bound = float(
        np.linalg.norm(orig_mat - hat_mat)
        * np.linalg.norm(im2col(probe, comp.kernel_size, comp.stride, comp.padding))
    )
    checks["forward_deviation"] = dev
    checks["deviation_bound"] = bound
    checks["bound_ok"] = dev <= bound * (1.0 + 1e-9) + 1e-9

    ok = all(
        checks[key]
        for key in ("bias_ok", "partition_ok", "orthonormal_ok", "equivalence_ok", "bound_ok")
    )
    return {"name": name, "ok": ok, **checks}


def cmd_verify(args):
    try:
        manifest = tensorio.load_manifest(args.model)
        weights = tensorio.validate_manifest(manifest)
        method, hyper, named = tensorio.load_archive(args.archive)
        if len(named) != len(manifest.layers):
            raise FormatError(
                f"archive has {len(named)} layers, manifest has {len(manifest.layers)}"
            )
        override = tensorio.read_tensor(args.input) if args.input else None
        probes = _layer_inputs(manifest, weights, override)
        layers = []
        for (name, comp), layer, w_orig, probe in zip(
            named, manifest.layers, weights, probes
        ):
            if name != layer.name:
                raise FormatError(
                    f"archive layer {name!r} does not match manifest layer {layer.name!r}"
                )
            if (comp.c_out, comp.c_in, comp.kernel_size) != (
                w_orig.c_out,
                w_orig.c_in,
                w_orig.kernel_size,
            ):
                raise FormatError(f"{name}: archive and manifest dims differ")
            layers.append(_verify_layer(name, w_orig, comp, probe))
    except SccompError as exc:
        _fail(str(exc))
        _emit({"ok": False, "error": str(exc)})
        return 3
    ok = all(layer["ok"] for layer in layers)
    _emit({"ok": ok, "method": method, "layers": layers})
    if not ok:
        _fail("verification tolerances violated")
        return 3
    return 0


def cmd_report(args):
    manifest = tensorio.load_manifest(args.model)
    weights = tensorio.validate_manifest(manifest)
    method, hyper, named = tensorio.load_archive(args.archive)
    if len(named) != len(manifest.layers):
        raise FormatError(
            f"archive has {len(named)} layers, manifest has {len(manifest.layers)}"
        )
    latencies = None
    if args.measure_latency:
        probes = _layer_inputs(manifest, weights)
        comps = [c for _, c in named]

        def run_orig():
            for w_t, probe in zip(weights, probes):
                conv2d_forward(probe, w_t)

        def run_comp():
            for comp, probe in zip(comps, probes):
                factored_forward(comp, probe)

        latencies = metrics.measure_latency(run_orig, run_comp)[:2]
    report = cost_report(
        weights,
        [c for _, c in named],
        [layer.output_dims for layer in manifest.layers],
        latencies=latencies,
        names=[layer.name for layer in manifest.layers],
    )
    _emit({"method": method, **report.to_dict()})
    return 0


def cmd_bootstrap(args):
    pairs, c_cls = tensorio.read_predictions(args.predictions)
    result = bootstrap_se(
        PredictionSet(pairs=pairs, c_cls=c_cls),
        metric=args.metric,
        b=args.B,
        seed=args.seed,
    )
    doc = result.to_dict()
    doc["metric"] = args.metric
    doc["formatted"] = format_percent(result.theta_hat, result.se)
    _emit(doc)
    return 0


def cmd_sweep(args):
    manifest = tensorio.load_manifest(args.model)
    weights = tensorio.validate_manifest(manifest)
    features = [manifest.load_features(layer) for layer in manifest.layers]
    dims = [layer.output_dims for layer in manifest.layers]

    rows = []
    for ks, l, tau, rmax in itertools.product(args.ks, args.l, args.tau, args.rmax):
        comps = []
        err_num = 0.0
        err_den = 0.0
        for li, (w, f) in enumerate(zip(weights, features)):
            comp = compress_hierarchical(
                w,
                f,
                SlicConfig(s=args.superpixels),
                ks,
                l,
                RankPolicy(tau=tau, r_max=rmax),
                seed=_layer_seed(args.seed, li),
            )
            w_hat = reconstruct_weights(comp)
            err_num += float(np.sum((w.w - w_hat.w) ** 2))
            err_den += float(np.sum(w.w**2))
            comps.append(comp)
        error = float(np.sqrt(err_num / err_den)) if err_den else 0.0
        if error < 1e-12:
            error = 0.0
        report = cost_report(weights, comps, dims)
        rows.append(
            {
                "ks": ks,
                "l": l,
                "tau": tau,
                "rmax": rmax,
                "error": error,
                "p_comp": report.p_comp,
                "flops_comp": report.flops_comp,
            }
        )

    for row in rows:
        row["pareto"] = int(
            not any(
                other["error"] <= row["error"]
                and other["flops_comp"] <= row["flops_comp"]
                and (
                    other["error"] < row["error"]
                    or other["flops_comp"] < row["flops_comp"]
                )
                for other in rows
            )
        )

    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["ks", "l", "tau", "rmax", "error", "p_comp", "flops_comp", "pareto"],
        )
        writer.writeheader()
        writer.writerows(rows)
    _emit(
        {
            "configs": len(rows),
            "pareto": sum(row["pareto"] for row in rows),
            "out": str(out),
        }
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sccomp",
        description="Clustered low-rank compression toolkit for conv layers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic model fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--c-in", type=int, default=3)
    p.add_argument("--c-out", type=int, default=8)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--padding", type=int, default=0)
    p.add_argument("--planted-rank", type=int, default=None)
    p.add_argument("--groups", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("compress", help="compress a model into an archive")
    p.add_argument("--model", required=True)
    p.add_argument(
        "--method",
        required=True,
        choices=["hierarchical", "global-svd", "tucker2", "dense"],
    )
    p.add_argument("--tau", type=float, default=0.95)
    p.add_argument("--rmax", type=int, default=0, help="0 means uncapped")
    p.add_argument("--superpixels", type=int, default=4)
    p.add_argument("--spatial-clusters", type=int, default=2)
    p.add_argument("--channel-clusters", type=int, default=2)
    p.add_argument("--budget", type=float, default=0.0, help="target compression ratio")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("verify", help="check an archive against its source model")
    p.add_argument("--archive", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--input", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="parameter/FLOPs accounting for an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--measure-latency", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bootstrap", help="bootstrap SE of a classification metric")
    p.add_argument("--predictions", required=True)
    p.add_argument("--B", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--metric", default="accuracy", choices=sorted(metrics.METRIC_SELECTORS)
    )
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("sweep", help="hyper-parameter sweep with Pareto flags")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--superpixels", type=int, default=4)
    p.add_argument("--ks", type=int, nargs="+", required=True)
    p.add_argument("--l", type=int, nargs="+", required=True)
    p.add_argument("--tau", type=float, nargs="+", required=True)
    p.add_argument("--rmax", type=int, nargs="+", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        _fail(str(exc))
        return 2
    except (FormatError, DataError) as exc:
        _fail(str(exc))
        return 4
    except SccompError as exc:
        _fail(str(exc))
        return 4


if __name__ == "__main__":
    sys.exit(main())
