"""Pull conv weights, biases, and calibration activations out of a checkpoint.

Activations are captured with forward hooks while the calibration batch runs
once through the model. The default tap point is post-nonlinearity: when the
module called immediately after a requested conv is an elementwise activation,
its output is recorded; otherwise (and always with tap="pre") the conv's own
output is used.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .tensorfile import write_tensor


class LayerNotFoundError(ValueError):
    pass


class NotAConvError(TypeError):
    pass


class UnsupportedConvError(ValueError):
    pass


# elementwise nonlinearities a "post" tap may absorb
ACTIVATION_TYPES = (
    nn.ReLU,
    nn.ReLU6,
    nn.LeakyReLU,
    nn.PReLU,
    nn.ELU,
    nn.GELU,
    nn.SiLU,
    nn.Sigmoid,
    nn.Tanh,
    nn.Hardtanh,
    nn.Softplus,
)


@dataclass(frozen=True)
class ExportSpec:
    checkpoint: Path
    layer_names: tuple
    batch_size: int
    out_dir: Path

    def __post_init__(self):
        object.__setattr__(self, "checkpoint", Path(self.checkpoint))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        object.__setattr__(self, "layer_names", tuple(self.layer_names))
        if not self.layer_names:
            raise LayerNotFoundError("at least one layer name is required")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be positive, got {self.batch_size}")


def load_checkpoint(path):
    try:
        model = torch.load(Path(path), map_location="cpu", weights_only=False)
    except OSError as exc:
        raise FileNotFoundError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(model, nn.Module):
        raise TypeError(f"checkpoint {path} does not hold a module, got {type(model).__name__}")
    return model


def resolve_conv(model, name):
    """Find the named submodule and insist it is a plain 2-D convolution."""
    modules = dict(model.named_modules())
    if name not in modules:
        raise LayerNotFoundError(
            f"layer {name!r} not found in checkpoint; available: "
            + ", ".join(sorted(k for k in modules if k))
        )
    mod = modules[name]
    if not isinstance(mod, nn.Conv2d):
        raise NotAConvError(f"layer {name!r} is {type(mod).__name__}, not Conv2d")
    kh, kw = mod.kernel_size
    if kh != kw:
        raise UnsupportedConvError(f"layer {name!r} has non-square kernel {mod.kernel_size}")
    if mod.stride[0] != mod.stride[1]:
        raise UnsupportedConvError(f"layer {name!r} has asymmetric stride {mod.stride}")
    if isinstance(mod.padding, str) or mod.padding[0] != mod.padding[1]:
        raise UnsupportedConvError(f"layer {name!r} has unsupported padding {mod.padding!r}")
    if mod.dilation != (1, 1) or mod.groups != 1:
        raise UnsupportedConvError(f"layer {name!r} uses dilation/groups")
    return mod


def trace_forward(model, batch):
    """Run the batch once, recording every leaf module's output in call order."""
    calls = []
    handles = []
    for _, mod in model.named_modules():
        if next(mod.children(), None) is None:
            handles.append(
                mod.register_forward_hook(lambda m, i, o, rec=calls: rec.append((m, o)))
            )
    try:
        model.eval()
        with torch.no_grad():
            model(batch)
    finally:
        for h in handles:
            h.remove()
    return calls


def captured_activation(calls, conv, tap):
    """The conv's traced output, or the following nonlinearity's for tap='post'."""
    for pos, (mod, out) in enumerate(calls):
        if mod is conv:
            if tap == "post" and pos + 1 < len(calls):
                nxt_mod, nxt_out = calls[pos + 1]
                if isinstance(nxt_mod, ACTIVATION_TYPES) and nxt_out.shape == out.shape:
                    return nxt_out
            return out
    raise LayerNotFoundError("requested conv never ran on the calibration batch")


def export(spec: ExportSpec, batch, tap="post"):
    """Write per-layer weight/bias/activation tensor files plus the manifest.

    batch is an (N, C, H, W) array; returns a summary dict. Tensor values are
    written straight from the framework's float32 storage, so reading a file
    back reproduces the checkpoint tensor bit for bit.
    """
    if tap not in ("post", "pre"):
        raise ValueError(f"tap must be 'post' or 'pre', got {tap!r}")
    batch = np.asarray(batch, dtype=np.float32)
    if batch.ndim != 4:
        raise ValueError(f"calibration batch must be 4-D (N,C,H,W), got {batch.ndim}-D")
    if batch.shape[0] != spec.batch_size:
        raise ValueError(
            f"batch file holds {batch.shape[0]} samples, spec says {spec.batch_size}"
        )

    model = load_checkpoint(spec.checkpoint)
    convs = [(name, resolve_conv(model, name)) for name in spec.layer_names]
    calls = trace_forward(model, torch.from_numpy(batch))

    out_dir = spec.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for li, (name, conv) in enumerate(convs):
        weight = conv.weight.detach().cpu().numpy()
        bias = (
            conv.bias.detach().cpu().numpy()
            if conv.bias is not None
            else np.zeros(weight.shape[0], dtype=np.float32)
        )
        act = captured_activation(calls, conv, tap).detach().cpu().numpy()
        files = {
            "weights": f"layer{li}_w.tnsr",
            "bias": f"layer{li}_b.tnsr",
            "activations": f"layer{li}_act.tnsr",
        }
        write_tensor(weight, out_dir / files["weights"])
        write_tensor(bias, out_dir / files["bias"])
        write_tensor(act, out_dir / files["activations"])
        entries.append(
            {
                "name": name,
                **files,
                "stride": int(conv.stride[0]),
                "padding": int(conv.padding[0]),
                "output_dims": [int(act.shape[2]), int(act.shape[3])],
            }
        )

    doc = {"format": "conv-model", "version": 1, "layers": entries}
    # the calibration input doubles as the verification probe, but only when
    # the first exported layer actually consumes the model input
    if batch.shape[1] == convs[0][1].in_channels:
        write_tensor(batch[0], out_dir / "input.tnsr")
        doc["input"] = "input.tnsr"
    manifest_path = out_dir / "model.json"
    manifest_path.write_text(json.dumps(doc, indent=2) + "\n")
    return {
        "manifest": str(manifest_path),
        "layers": [e["name"] for e in entries],
        "batch_size": int(batch.shape[0]),
        "tap": tap,
    }
