"""On-disk formats: binary tensor files, model manifests, compressed archives,
and the predictions CSV.

Tensor file layout (little-endian throughout):
  bytes 0-3   magic "TNSR"
  byte  4     version, currently 1
  byte  5     ndim, 1 to 4
  bytes 6-11  reserved, must be zero
  next        ndim uint32 dims
  rest        row-major float32 payload, exactly 4*prod(dims) bytes

Manifests and archive metadata are JSON; numeric payloads always live in
tensor files next to them. Paths inside JSON are relative to the JSON file.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compress import ClusterFactors, CompressedLayer
from .errors import DataError, FormatError, ShapeError
from .linalg import SvdFactors, TuckerFactors
from .tensors import FeatureTensor, WeightTensor, conv_output_dims

MAGIC = b"TNSR"
VERSION = 1


def write_tensor(t, path):
    """Write an array of 1 to 4 axes as a float32 tensor file."""
    arr = np.asarray(t, dtype=np.float64)
    if not 1 <= arr.ndim <= 4:
        raise ShapeError(f"tensor files hold 1 to 4 axes, got {arr.ndim}")
    if arr.size == 0:
        raise ShapeError("tensor files cannot hold empty axes")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", VERSION, arr.ndim))
        fh.write(b"\x00" * 6)
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return path


def read_tensor(path):
    """Read a tensor file back as a float64 array."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header")
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    version, ndim = blob[4], blob[5]
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if not 1 <= ndim <= 4:
        raise FormatError(f"{path}: ndim {ndim} outside 1..4")
    if blob[6:12] != b"\x00" * 6:
        raise FormatError(f"{path}: reserved bytes not zero")
    head = 12 + 4 * ndim
    if len(blob) < head:
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{ndim}I", blob[12:head])
    if any(d == 0 for d in dims):
        raise FormatError(f"{path}: zero-sized axis in {dims}")
    count = int(np.prod(dims))
    if len(blob) != head + 4 * count:
        raise FormatError(
            f"{path}: payload is {len(blob) - head} bytes, expected {4 * count}"
        )
    return np.frombuffer(blob[head:], dtype="<f4").reshape(dims).astype(np.float64)


@dataclass(frozen=True)
class ManifestLayer:
    name: str
    weights: str
    bias: str
    stride: int
    padding: int
    output_dims: tuple
    activations: str = None
    planted_groups: tuple = None


@dataclass(frozen=True)
class ModelManifest:
    """Layer chain description; file paths resolve against base_dir."""

    layers: tuple
    base_dir: Path
    input_file: str = None

    def path(self, rel):
        return self.base_dir / rel

    def load_weights(self, layer: ManifestLayer) -> WeightTensor:
        w = read_tensor(self.path(layer.weights))
        if w.ndim != 4:
            raise FormatError(f"{layer.name}: weights must be 4-D, got {w.ndim}-D")
        bias = read_tensor(self.path(layer.bias))
        if bias.ndim != 1:
            raise FormatError(f"{layer.name}: bias must be 1-D")
        return WeightTensor(w=w, bias=bias, stride=layer.stride, padding=layer.padding)

    def load_features(self, layer: ManifestLayer) -> FeatureTensor:
        if layer.activations is None:
            raise DataError(f"{layer.name}: manifest lists no activation file")
        return FeatureTensor.from_batch(read_tensor(self.path(layer.activations)))

    def load_input(self):
        if self.input_file is None:
            return None
        return read_tensor(self.path(self.input_file))


def save_manifest(manifest_path, layers, input_file=None):
    """Write a manifest JSON; layer dicts must already use relative paths."""
    manifest_path = Path(manifest_path)
    doc = {"format": "conv-model", "version": 1, "layers": []}
    if input_file is not None:
        doc["input"] = input_file
    for layer in layers:
        entry = {
            "name": layer["name"],
            "weights": layer["weights"],
            "bias": layer["bias"],
            "stride": layer["stride"],
            "padding": layer["padding"],
            "output_dims": list(layer["output_dims"]),
        }
        if layer.get("activations"):
            entry["activations"] = layer["activations"]
        if layer.get("planted_groups"):
            entry["planted_groups"] = [list(g) for g in layer["planted_groups"]]
        doc["layers"].append(entry)
    manifest_path.write_text(json.dumps(doc, indent=2) + "\n")
    return manifest_path


def load_manifest(path) -> ModelManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("format") != "conv-model":
        raise FormatError(f"{path}: not a model manifest")
    layers = []
    for i, entry in enumerate(doc.get("layers", [])):
        try:
            layers.append(
                ManifestLayer(
                    name=str(entry.get("name", f"layer{i}")),
                    weights=entry["weights"],
                    bias=entry["bias"],
                    stride=int(entry.get("stride", 1)),
                    padding=int(entry.get("padding", 0)),
                    output_dims=tuple(int(x) for x in entry["output_dims"]),
                    activations=entry.get("activations"),
                    planted_groups=tuple(
                        tuple(int(c) for c in g) for g in entry["planted_groups"]
                    )
                    if entry.get("planted_groups")
                    else None,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: layer {i} is malformed: {exc}") from exc
    if not layers:
        raise FormatError(f"{path}: manifest lists no layers")
    return ModelManifest(layers=tuple(layers), base_dir=path.parent, input_file=doc.get("input"))


def validate_manifest(manifest: ModelManifest):
    """Check referenced files load and dims stay consistent along the chain.

    Returns the loaded WeightTensor list so callers avoid a second pass.
    """
    weights = []
    prev = None
    for layer in manifest.layers:
        w = manifest.load_weights(layer)
        if len(layer.output_dims) != 2 or min(layer.output_dims) < 1:
            raise FormatError(f"{layer.name}: bad output dims {layer.output_dims}")
        if layer.activations is not None:
            f = manifest.load_features(layer)
            if f.c_out != w.c_out:
                raise FormatError(
                    f"{layer.name}: activations have {f.c_out} channels, "
                    f"layer has {w.c_out}"
                )
            if f.grid_shape != tuple(layer.output_dims):
                raise FormatError(
                    f"{layer.name}: activation grid {f.grid_shape} does not match "
                    f"output dims {tuple(layer.output_dims)}"
                )
        if prev is not None and w.c_in != prev.c_out:
            raise FormatError(
                f"{layer.name}: expects {w.c_in} input channels, previous layer "
                f"emits {prev.c_out}"
            )
        weights.append(w)
        prev = w
    return weights


def _factor_files(prefix, idx):
    return (
        f"{prefix}_c{idx}_u.tnsr",
        f"{prefix}_c{idx}_s.tnsr",
        f"{prefix}_c{idx}_v.tnsr",
    )


def save_archive(out_dir, named_layers, method, hyperparameters=None):
    """Write compressed layers plus metadata JSON into a directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": "compressed-archive",
        "version": 1,
        "method": method,
        "hyperparameters": dict(hyperparameters or {}),
        "layers": [],
    }
    for li, (name, layer) in enumerate(named_layers):
        prefix = f"layer{li}"
        bias_file = f"{prefix}_bias.tnsr"
        write_tensor(layer.bias, out_dir / bias_file)
        entry = {
            "name": name,
            "method": layer.method,
            "c_out": layer.c_out,
            "c_in": layer.c_in,
            "kernel_size": layer.kernel_size,
            "stride": layer.stride,
            "padding": layer.padding,
            "bias": bias_file,
        }
        if layer.method in ("hierarchical", "global-svd"):
            entry["clusters"] = []
            for ci, cluster in enumerate(layer.clusters):
                u_file, s_file, v_file = _factor_files(prefix, ci)
                write_tensor(cluster.factors.u, out_dir / u_file)
                write_tensor(cluster.factors.sigma, out_dir / s_file)
                write_tensor(cluster.factors.v, out_dir / v_file)
                entry["clusters"].append(
                    {
                        "spatial_cluster_id": cluster.spatial_cluster_id,
                        "channel_cluster_id": cluster.channel_cluster_id,
                        "channels": [int(c) for c in cluster.channel_indices],
                        "rank": cluster.rank,
                        "u": u_file,
                        "sigma": s_file,
                        "v": v_file,
                    }
                )
        elif layer.method == "tucker2":
            t = layer.tucker
            files = {
                "core": f"{prefix}_core.tnsr",
                "u1": f"{prefix}_u1.tnsr",
                "u2": f"{prefix}_u2.tnsr",
            }
            write_tensor(t.core, out_dir / files["core"])
            write_tensor(t.u1, out_dir / files["u1"])
            write_tensor(t.u2, out_dir / files["u2"])
            entry["tucker"] = {"r_out": t.r_out, "r_in": t.r_in, **files}
        else:
            weights_file = f"{prefix}_weights.tnsr"
            write_tensor(layer.weights, out_dir / weights_file)
            entry["weights"] = weights_file
        doc["layers"].append(entry)
    (out_dir / "archive.json").write_text(json.dumps(doc, indent=2) + "\n")
    return out_dir


def load_archive(archive_dir):
    """Load an archive directory back into (method, hyperparameters, layers).

    layers is a list of (name, CompressedLayer).
    """
    archive_dir = Path(archive_dir)
    meta_path = archive_dir / "archive.json"
    try:
        doc = json.loads(meta_path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read {meta_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: invalid JSON: {exc}") from exc
    if doc.get("format") != "compressed-archive":
        raise FormatError(f"{meta_path}: not a compressed archive")

    layers = []
    for entry in doc.get("layers", []):
        try:
            name = entry["name"]
            method = entry["method"]
            bias = read_tensor(archive_dir / entry["bias"])
            common = dict(
                c_out=int(entry["c_out"]),
                c_in=int(entry["c_in"]),
                kernel_size=int(entry["kernel_size"]),
                stride=int(entry["stride"]),
                padding=int(entry["padding"]),
                bias=bias,
            )
            if method in ("hierarchical", "global-svd"):
                clusters = []
                for c in entry["clusters"]:
                    factors = SvdFactors(
                        u=read_tensor(archive_dir / c["u"]),
                        sigma=read_tensor(archive_dir / c["sigma"]),
                        v=read_tensor(archive_dir / c["v"]),
                    )
                    clusters.append(
                        ClusterFactors(
                            channel_indices=np.asarray(c["channels"], dtype=np.int64),
                            factors=factors,
                            spatial_cluster_id=int(c["spatial_cluster_id"]),
                            channel_cluster_id=int(c["channel_cluster_id"]),
                        )
                    )
                layer = CompressedLayer(method=method, clusters=tuple(clusters), **common)
            elif method == "tucker2":
                t = entry["tucker"]
                layer = CompressedLayer(
                    method="tucker2",
                    tucker=TuckerFactors(
                        core=read_tensor(archive_dir / t["core"]),
                        u1=read_tensor(archive_dir / t["u1"]),
                        u2=read_tensor(archive_dir / t["u2"]),
                    ),
                    **common,
                )
            elif method == "dense":
                layer = CompressedLayer(
                    method="dense",
                    weights=read_tensor(archive_dir / entry["weights"]),
                    **common,
                )
            else:
                raise FormatError(f"{meta_path}: unknown layer method {method!r}")
        except KeyError as exc:
            raise FormatError(f"{meta_path}: missing field {exc}") from exc
        layers.append((name, layer))
    if not layers:
        raise FormatError(f"{meta_path}: archive lists no layers")
    return doc.get("method", "unknown"), doc.get("hyperparameters", {}), layers


def probe_input_dims(layer: ManifestLayer, kernel_size: int):
    """Input (h, w) that reproduces the layer's recorded output dims."""
    h_out, w_out = layer.output_dims
    h = (h_out - 1) * layer.stride + kernel_size - 2 * layer.padding
    w = (w_out - 1) * layer.stride + kernel_size - 2 * layer.padding
    if h < 1 or w < 1:
        raise FormatError(f"{layer.name}: output dims imply an empty input")
    check = conv_output_dims(h, w, kernel_size, layer.stride, layer.padding)
    if check != (h_out, w_out):
        raise FormatError(f"{layer.name}: output dims inconsistent with geometry")
    return h, w


def read_predictions(path, c_cls=None):
    """Parse a 'true,pred' CSV of zero-based labels into an (n, 2) int array."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].strip().lower().replace(" ", "") != "true,pred":
        raise DataError(f"{path}: first line must be the header 'true,pred'")
    pairs = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected two comma-separated fields")
        try:
            t, pr = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: labels must be integers") from None
        if t < 0 or pr < 0:
            raise DataError(f"{path}:{lineno}: labels must be non-negative")
        pairs.append((t, pr))
    if not pairs:
        raise DataError(f"{path}: no prediction rows")
    arr = np.asarray(pairs, dtype=np.int64)
    limit = int(arr.max()) + 1 if c_cls is None else int(c_cls)
    bad = np.flatnonzero(arr.max(axis=1) >= limit)
    if bad.size:
        raise DataError(f"{path}:{int(bad[0]) + 2}: label outside 0..{limit - 1}")
    return arr, limit


def write_predictions(path, pairs):
    path = Path(path)
    rows = ["true,pred"] + [f"{int(t)},{int(p)}" for t, p in pairs]
    path.write_text("\n".join(rows) + "\n")
    return path
