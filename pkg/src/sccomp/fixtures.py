"""Synthetic layer and model generators for tests and the gen command.

All generation flows through one seeded PCG64 stream per call, so a fixed
seed reproduces every byte of a fixture directory.
"""

from pathlib import Path

import numpy as np

from .errors import ParameterError
from .tensors import FeatureTensor, WeightTensor, conv_output_dims, conv2d_forward
from . import tensorio


def make_weight(
    rng, c_out, c_in, kernel_size, stride=1, padding=0, planted_rank=None
) -> WeightTensor:
    """Random kernel bank; planted_rank bounds the weight matrix rank exactly."""
    d = c_in * kernel_size * kernel_size
    if planted_rank is not None:
        if not 1 <= planted_rank <= min(c_out, d):
            raise ParameterError(
                f"planted rank {planted_rank} out of range 1..{min(c_out, d)}"
            )
        left = rng.standard_normal((c_out, planted_rank))
        right = rng.standard_normal((planted_rank, d))
        mat = left @ right / np.sqrt(d)
    else:
        mat = rng.standard_normal((c_out, d)) / np.sqrt(d)
    bias = 0.1 * rng.standard_normal(c_out)
    return WeightTensor(
        w=mat.reshape(c_out, c_in, kernel_size, kernel_size),
        bias=bias,
        stride=stride,
        padding=padding,
    )


def make_group_features(rng, c_out, h, w, groups):
    """Feature tensor whose channels form exact co-activation groups.

    Channels are split into contiguous blocks; every channel in a block is an
    identical copy of that block's pattern, so any clustering over raw rows
    can separate the blocks perfectly. Patterns get distinct offsets to keep
    them apart everywhere. Returns (features, group channel lists).
    """
    if not 1 <= groups <= c_out:
        raise ParameterError(f"group count {groups} out of range 1..{c_out}")
    sizes = [c_out // groups + (1 if g < c_out % groups else 0) for g in range(groups)]
    f = np.empty((c_out, h, w))
    members = []
    start = 0
    for g, size in enumerate(sizes):
        pattern = rng.standard_normal((h, w)) + 3.0 * g
        f[start : start + size] = pattern
        members.append(list(range(start, start + size)))
        start += size
    return FeatureTensor(f), members


def gen_model(
    out_dir,
    layers=1,
    c_in=3,
    c_out=8,
    height=8,
    width=8,
    kernel_size=3,
    stride=1,
    padding=0,
    seed=0,
    planted_rank=None,
    groups=None,
):
    """Generate a conv chain fixture directory and its manifest.

    Layer 0 maps c_in -> c_out; later layers map c_out -> c_out. Activations
    are the chained forward outputs of a random probe input, except in groups
    mode where they are planted co-activation patterns. Returns a dict with
    the manifest path and the in-memory objects, handy for tests.
    """
    if min(layers, c_in, c_out, height, width, kernel_size, stride) < 1 or padding < 0:
        raise ParameterError("all dims must be positive (padding non-negative)")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    probe = rng.standard_normal((c_in, height, width))
    tensorio.write_tensor(probe, out_dir / "input.tnsr")

    entries = []
    weights = []
    features = []
    planted = []
    x = probe
    h_in, w_in = height, width
    for i in range(layers):
        w = make_weight(
            rng,
            c_out,
            c_in if i == 0 else c_out,
            kernel_size,
            stride,
            padding,
            planted_rank=planted_rank,
        )
        dims = conv_output_dims(h_in, w_in, kernel_size, stride, padding)
        x = conv2d_forward(x, w)
        if groups is None:
            f, group_members = FeatureTensor(x), None
        else:
            f, group_members = make_group_features(rng, c_out, dims[0], dims[1], groups)
        weight_file = f"layer{i}_w.tnsr"
        bias_file = f"layer{i}_b.tnsr"
        act_file = f"layer{i}_act.tnsr"
        tensorio.write_tensor(w.w, out_dir / weight_file)
        tensorio.write_tensor(w.bias, out_dir / bias_file)
        tensorio.write_tensor(f.f, out_dir / act_file)
        entries.append(
            {
                "name": f"conv{i}",
                "weights": weight_file,
                "bias": bias_file,
                "stride": stride,
                "padding": padding,
                "output_dims": list(dims),
                "activations": act_file,
                "planted_groups": group_members,
            }
        )
        weights.append(w)
        features.append(f)
        planted.append(group_members)
        h_in, w_in = dims

    manifest_path = tensorio.save_manifest(
        out_dir / "model.json", entries, input_file="input.tnsr"
    )
    return {
        "manifest": manifest_path,
        "weights": weights,
        "features": features,
        "planted_groups": planted,
        "probe": probe,
    }
