import numpy as np
import pytest

from sccomp.clustering import SlicConfig
from sccomp.compress import (
    compress_dense,
    compress_global_svd,
    compress_hierarchical,
    compress_tucker2,
)
from sccomp.errors import DataError, ParameterError, ShapeError
from sccomp.fixtures import make_weight
from sccomp.linalg import RankPolicy
from sccomp.metrics import (
    PredictionSet,
    bootstrap_se,
    classification_report,
    compressed_flops,
    compressed_params,
    cost_report,
    format_percent,
    measure_latency,
    original_flops,
    original_params,
)
from sccomp.tensors import FeatureTensor, conv2d_forward


def count_deployment_floats(layer):
    """Independent tally of stored multiplicands in the deployed form."""
    if layer.method == "tucker2":
        t = layer.tucker
        return t.u1.size + t.core.size + t.u2.size
    if layer.method == "dense":
        return layer.weights.size
    total = 0
    for c in layer.clusters:
        # deployment merges sigma into u, so u contributes n*r and v d*r
        total += c.factors.u.shape[0] * c.rank + c.factors.v.shape[0] * c.rank
    return total


def count_macs_per_pixel(layer):
    """Multiply-accumulates per output position, counted factor by factor."""
    d = layer.c_in * layer.kernel_size**2
    if layer.method == "tucker2":
        t = layer.tucker
        return t.r_in * layer.c_in + t.r_out * t.r_in * layer.kernel_size**2 + layer.c_out * t.r_out
    if layer.method == "dense":
        return layer.c_out * d
    return sum(c.rank * d + c.factors.u.shape[0] * c.rank for c in layer.clusters)


def test_worked_example_single_layer():
    rng = np.random.Generator(np.random.PCG64(60))
    w = make_weight(rng, 8, 3, 3)
    comp = compress_global_svd(w, 2)
    rep = cost_report([w], [comp], [(4, 4)])
    assert rep.p_orig == 216
    assert rep.p_comp == 70
    assert rep.cr_model == pytest.approx(216 / 70, rel=1e-12)
    assert rep.flops_orig == 3456
    assert rep.flops_comp == 1120
    assert rep.delta_p_pct == pytest.approx((1 - 70 / 216) * 100, rel=1e-12)
    layer = rep.layers[0]
    assert layer.p_comp == 70 and layer.flops_ratio == pytest.approx(3456 / 1120)


def test_cost_counts_match_instrumented_oracle():
    rng = np.random.Generator(np.random.PCG64(61))
    for trial in range(50):
        c_out = int(rng.integers(3, 12))
        c_in = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        h = int(rng.integers(k + 3, k + 8))
        w_dim = int(rng.integers(k + 3, k + 8))
        weight = make_weight(rng, c_out, c_in, k)
        x = rng.standard_normal((c_in, h, w_dim))
        act = FeatureTensor(conv2d_forward(x, weight))
        h_out, w_out = act.grid_shape
        method = trial % 4
        if method == 0:
            comp = compress_global_svd(weight, int(rng.integers(1, min(c_out, c_in * k * k) + 1)))
        elif method == 1:
            comp = compress_hierarchical(
                weight, act, SlicConfig(s=4), 2, 2, RankPolicy(tau=0.8, r_max=4), seed=trial
            )
        elif method == 2:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                comp = compress_tucker2(weight, c_out * c_in * k * k // 2)
        else:
            comp = compress_dense(weight)
        assert compressed_params(comp) == count_deployment_floats(comp)
        assert compressed_flops(comp, h_out, w_out) == count_macs_per_pixel(comp) * h_out * w_out
        assert original_params(c_out, c_in, k) == c_out * c_in * k * k
        assert original_flops(c_out, c_in, k, h_out, w_out) == c_out * c_in * k * k * h_out * w_out


def test_dense_passthrough_ratio_is_one():
    rng = np.random.Generator(np.random.PCG64(62))
    w = make_weight(rng, 4, 2, 3)
    rep = cost_report([w], [compress_dense(w)], [(5, 5)])
    assert rep.cr_model == 1.0
    assert rep.flops_ratio == 1.0
    assert rep.delta_p_pct == 0.0


def test_cost_report_model_totals_are_sums():
    rng = np.random.Generator(np.random.PCG64(63))
    weights = [make_weight(rng, 6, 3, 3), make_weight(rng, 8, 6, 3)]
    comps = [compress_global_svd(weights[0], 2), compress_global_svd(weights[1], 3)]
    rep = cost_report(weights, comps, [(6, 6), (4, 4)], names=["a", "b"])
    assert rep.p_orig == sum(l.p_orig for l in rep.layers)
    assert rep.p_comp == sum(l.p_comp for l in rep.layers)
    assert rep.cr_model == pytest.approx(rep.p_orig / rep.p_comp)
    assert [l.name for l in rep.layers] == ["a", "b"]
    # model CR is a ratio of sums, not a mean of layer CRs
    mean_of_ratios = np.mean([l.cr_layer for l in rep.layers])
    assert rep.cr_model != pytest.approx(mean_of_ratios)


def test_cost_report_validation():
    rng = np.random.Generator(np.random.PCG64(64))
    w = make_weight(rng, 4, 2, 3)
    comp = compress_dense(w)
    with pytest.raises(ParameterError):
        cost_report([], [], [])
    with pytest.raises(ParameterError):
        cost_report([w], [comp, comp], [(4, 4)])
    other = compress_dense(make_weight(rng, 5, 2, 3))
    with pytest.raises(ShapeError):
        cost_report([w], [other], [(4, 4)])


def test_cost_report_latency_fields():
    rng = np.random.Generator(np.random.PCG64(65))
    w = make_weight(rng, 4, 2, 3)
    rep = cost_report([w], [compress_dense(w)], [(4, 4)], latencies=(10.0, 4.0))
    assert rep.speedup == 2.5
    assert rep.delta_t_pct == pytest.approx(60.0)
    plain = cost_report([w], [compress_dense(w)], [(4, 4)])
    assert plain.speedup is None and plain.t_orig_ms is None


def test_measure_latency_orders_slow_vs_fast():
    import time

    t_o, t_c, speedup = measure_latency(
        lambda: time.sleep(0.003), lambda: time.sleep(0.0005), warmup=1, trials=5
    )
    assert t_o > t_c
    assert speedup > 1.0
    with pytest.raises(ParameterError):
        measure_latency(lambda: None, lambda: None, trials=0)


def test_classification_hand_counted():
    # true/pred in zero-based labels; class 0: P=1, R=1/2, F1=2/3;
    # class 1: P=2/3, R=1, F1=4/5; accuracy 3/4
    p = PredictionSet(pairs=np.array([[0, 0], [0, 1], [1, 1], [1, 1]]), c_cls=2)
    rep = classification_report(p)
    assert rep.accuracy == pytest.approx(0.75)
    assert rep.precision[0] == pytest.approx(1.0)
    assert rep.recall[0] == pytest.approx(0.5)
    assert rep.f1[0] == pytest.approx(2 / 3)
    assert rep.precision[1] == pytest.approx(2 / 3)
    assert rep.recall[1] == pytest.approx(1.0)
    assert rep.f1[1] == pytest.approx(0.8)
    assert rep.macro_f1 == pytest.approx((2 / 3 + 0.8) / 2)
    assert rep.weighted_f1 == pytest.approx(0.5 * 2 / 3 + 0.5 * 0.8)
    assert rep.support.tolist() == [2, 2]
    assert not rep.degenerate.any()


def test_weighted_recall_equals_accuracy():
    rng = np.random.Generator(np.random.PCG64(66))
    for _ in range(100):
        c = int(rng.integers(2, 8))
        n = int(rng.integers(5, 60))
        pairs = rng.integers(0, c, size=(n, 2))
        rep = classification_report(PredictionSet(pairs=pairs, c_cls=c))
        assert rep.weighted_recall == pytest.approx(rep.accuracy, abs=1e-12)


def test_f1_between_precision_and_recall():
    rng = np.random.Generator(np.random.PCG64(67))
    for _ in range(50):
        c = int(rng.integers(2, 6))
        pairs = rng.integers(0, c, size=(int(rng.integers(8, 40)), 2))
        rep = classification_report(PredictionSet(pairs=pairs, c_cls=c))
        for i in range(c):
            lo = min(rep.precision[i], rep.recall[i])
            hi = max(rep.precision[i], rep.recall[i])
            assert lo - 1e-12 <= rep.f1[i] <= hi + 1e-12


def test_degenerate_class_flags():
    # class 2 never appears in true or pred: all three denominators are zero
    p = PredictionSet(pairs=np.array([[0, 0], [1, 0], [1, 1]]), c_cls=3)
    rep = classification_report(p)
    assert rep.degenerate[2]
    assert rep.precision[2] == 0.0 and rep.recall[2] == 0.0 and rep.f1[2] == 0.0
    # predicted-only class: recall denominator is zero
    q = PredictionSet(pairs=np.array([[0, 0], [0, 2]]), c_cls=3)
    assert classification_report(q).degenerate[2]


def test_prediction_set_validation():
    with pytest.raises(ShapeError):
        PredictionSet(pairs=np.zeros((0, 2), dtype=int), c_cls=2)
    with pytest.raises(ShapeError):
        PredictionSet(pairs=np.zeros((4, 3), dtype=int), c_cls=2)
    with pytest.raises(DataError):
        PredictionSet(pairs=np.array([[0, 5]]), c_cls=2)
    with pytest.raises(DataError):
        PredictionSet(pairs=np.array([[-1, 0]]), c_cls=2)


def test_bootstrap_all_correct_has_zero_se():
    pairs = np.stack([np.arange(10) % 3, np.arange(10) % 3], axis=1)
    res = bootstrap_se(PredictionSet(pairs=pairs, c_cls=3), "accuracy", b=50, seed=3)
    assert res.theta_hat == 1.0
    assert res.se == 0.0
    assert res.bar_theta == 1.0


def test_bootstrap_matches_analytic_binomial_se():
    # 200 samples at 80% accuracy: SE ~ sqrt(p(1-p)/n) = 0.02828
    n, correct = 200, 160
    true = np.zeros(n, dtype=int)
    pred = np.concatenate([np.zeros(correct, dtype=int), np.ones(n - correct, dtype=int)])
    p = PredictionSet(pairs=np.stack([true, pred], axis=1), c_cls=2)
    res = bootstrap_se(p, "accuracy", b=2000, seed=11)
    analytic = np.sqrt(0.8 * 0.2 / n)
    assert res.theta_hat == pytest.approx(0.8)
    assert abs(res.se - analytic) <= 0.15 * analytic


def test_bootstrap_deterministic_and_order_free():
    rng = np.random.Generator(np.random.PCG64(68))
    pairs = rng.integers(0, 3, size=(40, 2))
    p = PredictionSet(pairs=pairs, c_cls=3)
    a = bootstrap_se(p, "macro_f1", b=64, seed=5, keep_replicates=True)
    b = bootstrap_se(p, "macro_f1", b=64, seed=5, keep_replicates=True)
    assert a.se == b.se and a.replicates == b.replicates
    # replicate i is seeded by (seed, i), so a longer run extends the short one
    c = bootstrap_se(p, "macro_f1", b=32, seed=5, keep_replicates=True)
    assert c.replicates == a.replicates[:32]
    shifted = bootstrap_se(p, "macro_f1", b=64, seed=6)
    assert shifted.se != a.se


def test_bootstrap_converges_with_more_replicates():
    rng = np.random.Generator(np.random.PCG64(69))
    pairs = rng.integers(0, 2, size=(100, 2))
    pairs[:70, 1] = pairs[:70, 0]
    p = PredictionSet(pairs=pairs, c_cls=2)
    coarse = bootstrap_se(p, "accuracy", b=200, seed=1).se
    fine = bootstrap_se(p, "accuracy", b=2000, seed=1).se
    assert abs(fine - coarse) <= 0.2 * fine
    assert fine > 0


def test_bootstrap_accepts_callable_and_rejects_unknown():
    p = PredictionSet(pairs=np.array([[0, 0], [1, 0], [1, 1]]), c_cls=2)
    res = bootstrap_se(p, lambda q: float(q.n), b=8, seed=0)
    assert res.theta_hat == 3.0 and res.se == 0.0
    with pytest.raises(ParameterError):
        bootstrap_se(p, "no_such_metric", b=8)
    with pytest.raises(ParameterError):
        bootstrap_se(p, "accuracy", b=1)


def test_format_percent():
    assert format_percent(0.8776, 0.0152) == "87.76 ± 1.52"
    assert format_percent(1.0, 0.0) == "100.00 ± 0.00"
