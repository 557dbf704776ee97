import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from sccomp.tensorio import load_manifest, read_tensor, write_predictions


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "sccomp", *map(str, args)],
        capture_output=True,
        text=True,
        cwd=cwd,
    )


def dir_digest(d):
    chunks = []
    for path in sorted(d.rglob("*")):
        if path.is_file():
            chunks.append(path.name.encode())
            chunks.append(path.read_bytes())
    return hashlib.md5(b"".join(chunks)).hexdigest()


def gen(out, **kw):
    args = ["gen", "--out", out]
    for key, val in kw.items():
        args += [f"--{key.replace('_', '-')}", str(val)]
    return run_cli(*args)


def test_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        proc = gen(d, seed=7, layers=2, c_out=6)
        assert proc.returncode == 0, proc.stderr
        payload = json.loads(proc.stdout)
        assert payload["layers"] == 2
    assert dir_digest(a) == dir_digest(b)
    proc = gen(tmp_path / "c", seed=8, layers=2, c_out=6)
    assert proc.returncode == 0
    assert dir_digest(a) != dir_digest(tmp_path / "c")


def test_gen_planted_rank(tmp_path):
    proc = gen(tmp_path / "m", seed=3, c_out=8, planted_rank=2)
    assert proc.returncode == 0, proc.stderr
    w = read_tensor(tmp_path / "m" / "layer0_w.tnsr")
    mat = w.reshape(w.shape[0], -1)
    s = np.linalg.svd(mat, compute_uv=False)
    assert s[2] / s[0] < 1e-5


def test_gen_groups_recorded(tmp_path):
    proc = gen(tmp_path / "m", seed=4, c_out=8, groups=2)
    assert proc.returncode == 0, proc.stderr
    manifest = load_manifest(tmp_path / "m" / "model.json")
    groups = manifest.layers[0].planted_groups
    assert groups is not None and len(groups) == 2
    members = sorted(c for g in groups for c in g)
    assert members == list(range(8))


def test_gen_rejects_bad_dims(tmp_path):
    proc = gen(tmp_path / "m", c_out=0)
    assert proc.returncode == 2
    proc = gen(tmp_path / "m", kernel=9, height=4, width=4)
    assert proc.returncode == 2


def test_usage_errors_exit_2(tmp_path):
    assert run_cli("compress").returncode == 2
    assert run_cli("no-such-command").returncode == 2
    assert run_cli().returncode == 2


def compress(model_dir, out, method="hierarchical", **kw):
    args = [
        "compress",
        "--model",
        model_dir / "model.json",
        "--method",
        method,
        "--out",
        out,
    ]
    for key, val in kw.items():
        args += [f"--{key.replace('_', '-')}", str(val)]
    return run_cli(*args)


def test_compress_verify_lossless_cycle(tmp_path):
    model = tmp_path / "model"
    assert gen(model, seed=11, c_out=8, layers=2).returncode == 0
    arch = tmp_path / "arch"
    proc = compress(model, arch, tau=1.0, rmax=0)
    assert proc.returncode == 0, proc.stderr
    report = json.loads(proc.stdout)
    assert report["method"] == "hierarchical"
    assert (arch / "archive.json").exists()

    proc = run_cli("verify", "--archive", arch, "--model", model / "model.json")
    assert proc.returncode == 0, proc.stdout + proc.stderr
    payload = json.loads(proc.stdout)
    assert payload["ok"] is True
    for layer in payload["layers"]:
        assert layer["weight_rel_error"] <= 1e-6
        assert layer["partition_ok"] and layer["bias_ok"]


def test_verify_catches_corrupted_factor(tmp_path):
    model = tmp_path / "model"
    assert gen(model, seed=12, c_out=8).returncode == 0
    arch = tmp_path / "arch"
    assert compress(model, arch, tau=1.0, rmax=0).returncode == 0

    u_files = sorted(arch.glob("layer0_c*_u.tnsr"))
    blob = bytearray(u_files[0].read_bytes())
    # flip payload floats well past any tolerance
    payload = np.frombuffer(bytes(blob[16:]), dtype="<f4") + 0.5
    blob[16:] = payload.tobytes()
    u_files[0].write_bytes(bytes(blob))

    proc = run_cli("verify", "--archive", arch, "--model", model / "model.json")
    assert proc.returncode == 3
    payload = json.loads(proc.stdout)
    assert payload["ok"] is False


def test_verify_dimension_mismatch_fails(tmp_path):
    model_a = tmp_path / "a"
    model_b = tmp_path / "b"
    assert gen(model_a, seed=13, c_out=8).returncode == 0
    assert gen(model_b, seed=13, c_out=6).returncode == 0
    arch = tmp_path / "arch"
    assert compress(model_a, arch, method="global-svd").returncode == 0
    proc = run_cli("verify", "--archive", arch, "--model", model_b / "model.json")
    assert proc.returncode == 3


def test_format_errors_exit_4(tmp_path):
    model = tmp_path / "model"
    assert gen(model, seed=14).returncode == 0
    (model / "layer0_w.tnsr").write_bytes(b"XXXX garbage")
    proc = compress(model, tmp_path / "arch")
    assert proc.returncode == 4
    proc = run_cli(
        "verify", "--archive", tmp_path / "nowhere", "--model", model / "model.json"
    )
    assert proc.returncode in (3, 4)


def test_compress_hierarchical_requires_activations(tmp_path):
    model = tmp_path / "model"
    assert gen(model, seed=15).returncode == 0
    doc = json.loads((model / "model.json").read_text())
    for layer in doc["layers"]:
        layer.pop("activations", None)
    (model / "model.json").write_text(json.dumps(doc))
    proc = compress(model, tmp_path / "arch")
    assert proc.returncode == 2
    # but global-svd has no such requirement
    proc = compress(model, tmp_path / "arch2", method="global-svd")
    assert proc.returncode == 0, proc.stderr


def test_compress_budget_controls_rank(tmp_path):
    model = tmp_path / "model"
    assert gen(model, seed=16, c_out=8).returncode == 0
    arch = tmp_path / "arch"
    proc = compress(model, arch, method="global-svd", budget=3.0)
    assert proc.returncode == 0, proc.stderr
    report = json.loads(proc.stdout)
    # c_out=8, d=27: budget 3x picks rank 2, so 70 deployed params
    assert report["p_comp"] == 70
    assert report["cr_model"] == pytest.approx(216 / 70, rel=1e-9)


def test_report_matches_compress_output(tmp_path):
    model = tmp_path / "model"
    assert gen(model, seed=17, c_out=8, layers=2).returncode == 0
    arch = tmp_path / "arch"
    comp = json.loads(compress(model, arch, method="tucker2", budget=2.0).stdout)
    proc = run_cli("report", "--archive", arch, "--model", model / "model.json")
    assert proc.returncode == 0, proc.stderr
    rep = json.loads(proc.stdout)
    assert rep["p_comp"] == comp["p_comp"]
    assert rep["flops_comp"] == comp["flops_comp"]
    assert len(rep["layers"]) == 2
    assert rep["speedup"] is None

    timed = run_cli(
        "report", "--archive", arch, "--model", model / "model.json", "--measure-latency"
    )
    assert timed.returncode == 0
    trep = json.loads(timed.stdout)
    assert trep["t_orig_ms"] > 0 and trep["t_comp_ms"] > 0


def test_bootstrap_cli_deterministic(tmp_path):
    rng = np.random.Generator(np.random.PCG64(80))
    pairs = rng.integers(0, 3, size=(60, 2))
    pairs[:40, 1] = pairs[:40, 0]
    path = write_predictions(tmp_path / "preds.csv", pairs)
    runs = [
        run_cli("bootstrap", "--predictions", path, "--B", 200, "--seed", 9)
        for _ in range(2)
    ]
    assert all(p.returncode == 0 for p in runs)
    assert runs[0].stdout == runs[1].stdout
    payload = json.loads(runs[0].stdout)
    assert payload["B"] == 200
    assert 0 < payload["se"] < 1
    assert "±" in payload["formatted"]

    macro = run_cli(
        "bootstrap", "--predictions", path, "--B", 200, "--seed", 9, "--metric", "macro_f1"
    )
    assert json.loads(macro.stdout)["metric"] == "macro_f1"


def test_bootstrap_bad_csv_exit_4(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("true,pred\n0,x\n")
    proc = run_cli("bootstrap", "--predictions", path)
    assert proc.returncode == 4


def test_sweep_csv_and_pareto(tmp_path):
    model = tmp_path / "model"
    assert gen(model, seed=18, c_out=8).returncode == 0
    out = tmp_path / "sweep.csv"
    proc = run_cli(
        "sweep",
        "--model",
        model / "model.json",
        "--out",
        out,
        "--ks",
        1,
        2,
        "--l",
        1,
        2,
        "--tau",
        0.8,
        1.0,
        "--rmax",
        8,
    )
    assert proc.returncode == 0, proc.stderr
    summary = json.loads(proc.stdout)
    assert summary["configs"] == 8

    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    assert {"ks", "l", "tau", "rmax", "error", "p_comp", "flops_comp", "pareto"} <= set(
        rows[0]
    )
    # no Pareto row is dominated by any other row
    pts = [(float(r["error"]), int(r["flops_comp"]), int(r["pareto"])) for r in rows]
    for err, flops, flag in pts:
        dominated = any(
            (e2 <= err and f2 <= flops and (e2 < err or f2 < flops)) for e2, f2, _ in pts
        )
        if flag:
            assert not dominated
    assert any(flag for _, _, flag in pts)
    # tau=1.0, uncapped-enough rank rows are lossless and one of them is Pareto
    lossless = [r for r in rows if float(r["error"]) == 0.0]
    assert lossless
    assert any(int(r["pareto"]) for r in lossless)


def test_help_screens():
    assert run_cli("--help").returncode == 0
    for sub in ("gen", "compress", "verify", "report", "bootstrap", "sweep"):
        proc = run_cli(sub, "--help")
        assert proc.returncode == 0
        assert sub in proc.stdout or "usage" in proc.stdout
