import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from jgc.dataset import TimeSeriesDataset, build_design, input_layout
from jgc.inference import (AnalysisConfig, GcResult, ImportanceScores, ImportanceTensor,
                           analyze_dataset, analyze_target, importance_scores,
                           importance_timeseries, infer_signs, load_result, merge_lag_classes,
                           moving_average, regime_contrast, save_result, threshold_select,
                           trace_key)
from jgc.network import GatedMlpParams, TrainConfig
from jgc.simulators import simulate_nonlinear_map

K0, K1, K2, K3 = (0, 1), (1, 1), (2, 1), (3, 1)


def scores(d):
    return ImportanceScores(dict(d), {k: v for k, v in d.items()})


def tensor(J, N, eta, target=0, contemporaneous=False, time_input=False):
    return ImportanceTensor(np.asarray(J, float), input_layout(N, eta, target, contemporaneous,
                                                               time_input), target)


# ------------------------------------------------------------------- scores

def test_constant_column_scores_its_magnitude():
    J = tensor(np.tile([[-0.3, 2.0]], (5, 1)), N=2, eta=1)
    s = importance_scores(J)
    assert s.entries == {(0, 1): 0.3, (1, 1): 2.0}
    assert s.signed_means == {(0, 1): -0.3, (1, 1): 2.0}


def test_alternating_column_cancels():
    J = tensor(np.array([[1.0], [-1.0], [1.0], [-1.0]]), N=1, eta=1)
    assert importance_scores(J).entries == {(0, 1): 0.0}
    assert importance_scores(J, "mean_abs").entries == {(0, 1): 1.0}


def test_scores_match_direct_recomputation():
    rng = np.random.default_rng(0)
    # N=1, eta=3: columns (var0, lag1..3)
    J = rng.standard_normal((11, 3))
    s = importance_scores(tensor(J, N=1, eta=3))
    for a in range(3):
        mu = sum(J[t, a] for t in range(11)) / 11
        assert s.entries[(0, a + 1)] == pytest.approx(abs(mu), abs=1e-15)
        assert s.signed_means[(0, a + 1)] == pytest.approx(mu, abs=1e-15)


def test_merge_examples():
    m = merge_lag_classes({(0, 0): 0.3, (0, 1): 0.2})
    assert m.entries[(0, 1)] == pytest.approx(0.5)
    m = merge_lag_classes({(0, 1): 0.2, (0, 2): 0.1})
    assert m.entries == {(0, 1): 0.2, (0, 2): 0.1}
    raw = {(0, a): 1.0 for a in range(1, 6)}
    raw[(0, 0)] = 1.0
    assert sorted(k[1] for k in merge_lag_classes(raw).entries) == [1, 2, 3, 4, 5]
    m = merge_lag_classes({(0, 0): 0.3, (0, 1): 0.2}, {(0, 0): -0.3, (0, 1): 0.2})
    assert m.signed_means[(0, 1)] == pytest.approx(-0.1)


def test_time_input_and_target_self_contemporaneous_are_absent():
    idx = input_layout(3, 2, target=1, contemporaneous=True, time_input=True)
    J = np.random.default_rng(1).standard_normal((6, len(idx)))
    s = importance_scores(ImportanceTensor(J, idx, 1))
    assert set(s.entries) == {(i, a) for i in range(3) for a in (1, 2)}
    # target 1 has no lag-0 column, so its merged class is just lag 1
    assert s.entries[(1, 1)] == pytest.approx(abs(J[:, 2].mean()))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.booleans(), st.integers(0, 1000))
def test_merge_conserves_mass(N, eta, contemp, seed):
    idx = input_layout(N, eta, 0, contemp, True)
    J = np.random.default_rng(seed).standard_normal((5, len(idx)))
    raw = np.abs(J.mean(axis=0))[:-1]
    s = importance_scores(ImportanceTensor(J, idx, 0))
    assert sum(s.entries.values()) == pytest.approx(raw.sum(), rel=1e-12)


# --------------------------------------------------------- thresholding oracle

def algorithm_oracle(runs, epsilon, passes=2):
    """Literal transcription: cutoff, order, then repeated intersect-and-truncate."""
    o = []
    for r in runs:
        top = max(r.values()) if r else 0.0
        kept = {k: v for k, v in r.items() if v >= epsilon * top and v > 0}
        order = sorted(kept.items(), key=lambda kv: (-kv[1], kv[0]))
        o.append([k for k, _ in order])
    for _ in range(passes):
        inter = set(o[0])
        for lst in o[1:]:
            inter = inter & set(lst)
        new = []
        for lst in o:
            keep = []
            for k in lst:
                if k not in inter:
                    break
                keep.append(k)
            new.append(keep)
        o = new
    out = set(o[0])
    for lst in o[1:]:
        out &= set(lst)
    return out


def test_identical_runs():
    s = scores({K0: 1.0, K1: 0.5, K2: 0.0})
    assert threshold_select(s, s, s) == {K0, K1}


def test_hand_trace_cutoff_and_intersection():
    s1 = scores({K0: 1.0, K1: 0.6, K2: 0.5, K3: 0.0})
    s2 = scores({K0: 1.0, K1: 0.55, K2: 0.0, K3: 0.5})
    s3 = scores({K0: 1.0, K1: 0.6, K2: 0.5, K3: 0.002})
    assert threshold_select(s1, s2, s3, epsilon=0.01) == {K0, K1}


def test_hand_trace_two_passes():
    # o1 = [k0, k2, k1], o2 = [k0, k1], o3 = [k0, k1, k2]
    s1 = scores({K0: 1.0, K2: 0.8, K1: 0.6})
    s2 = scores({K0: 1.0, K1: 0.6, K2: 0.0})
    s3 = scores({K0: 1.0, K1: 0.8, K2: 0.6})
    assert threshold_select(s1, s2, s3, epsilon=0.01) == {K0}


def test_threshold_edge_cases():
    empty = ImportanceScores({}, {})
    assert threshold_select(empty, empty, empty) == set()
    zero = scores({K0: 0.0, K1: 0.0})
    assert threshold_select(zero, zero, zero) == set()
    with pytest.raises(ValueError):
        threshold_select(scores({K0: 1.0}), scores({K1: 1.0}), scores({K0: 1.0}))
    with pytest.raises(ValueError):
        threshold_select(scores({K0: 1.0}), epsilon=0.01)
    with pytest.raises(ValueError):
        threshold_select(zero, zero, epsilon=1.0)


KEYS = [(i, a) for i in range(3) for a in range(1, 4)]
score_value = st.one_of(st.just(0.0), st.floats(0, 1), st.sampled_from([0.25, 0.5]))
triples = st.lists(st.lists(score_value, min_size=len(KEYS), max_size=len(KEYS)),
                   min_size=3, max_size=3)


def as_runs(raw):
    return [scores(dict(zip(KEYS, r))) for r in raw]


def post_cutoff(r, eps):
    top = max(r.entries.values())
    return {k for k, v in r.entries.items() if v > 0 and v >= eps * top}


@settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(triples, st.sampled_from([0.01, 0.05, 0.2, 0.5]))
def test_threshold_fuzz_properties(raw, eps):
    runs = as_runs(raw)
    out = threshold_select(*runs, epsilon=eps)
    assert out == algorithm_oracle([r.entries for r in runs], eps)
    # subset of every run's post-cutoff keys
    for r in runs:
        assert out <= post_cutoff(r, eps)
    # permutation invariance
    for perm in itertools.permutations(runs):
        assert threshold_select(*perm, epsilon=eps) == out
    # raising the cutoff never adds keys
    for higher in (eps * 2, eps * 10):
        if higher < 1:
            assert threshold_select(*runs, epsilon=higher) <= out


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 1), min_size=1, max_size=9, unique=True), st.data())
def test_shared_order_returns_full_set(vals, data):
    keys = KEYS[:len(vals)]
    base = dict(zip(keys, vals))
    # rescale each run by a positive factor: the order and key set stay identical
    runs = [scores({k: v * data.draw(st.floats(0.5, 2)) for k, v in base.items()})
            for _ in range(3)]
    eps = 0.001
    assert threshold_select(*runs, epsilon=eps) == set(keys)


# ------------------------------------------------------------------------ signs

def signed(values):
    return [ImportanceScores({K0: abs(v)}, {K0: v}) for v in values]


def test_sign_examples():
    assert infer_signs(signed([0.2, 0.1, 0.3]), {K0})[0] == {K0: "+"}
    assert infer_signs(signed([-0.2, -0.1, -0.3]), {K0})[0] == {K0: "-"}
    assert infer_signs(signed([0.2, -0.05, -0.05]), {K0})[0] == {K0: "+"}
    signs, zero = infer_signs(signed([0.1, -0.1, 0.0]), {K0})
    assert signs == {K0: "+"} and zero == [K0]


def linear_params(gate, u, v):
    D = len(gate)
    return GatedMlpParams(np.array(gate, float), [np.array(u, float).reshape(D, 1),
                                                  np.array([[v]], float)],
                          [np.zeros(1), np.zeros(1)], "identity")


def test_sign_flips_with_negated_target_on_linear_network():
    # a linear net fitted to -y is the negated net; its signed means flip exactly
    x = np.random.default_rng(0).standard_normal((30, 2))
    ds = TimeSeriesDataset.from_array(x)
    d = build_design(ds, 0, 1, contemporaneous=False)
    p = linear_params([0.5, -1.5], [1.0, 2.0], 0.7)
    q = linear_params([0.5, -1.5], [1.0, 2.0], -0.7)
    a = importance_scores(ImportanceTensor.from_network(p, d))
    b = importance_scores(ImportanceTensor.from_network(q, d))
    assert all(b.signed_means[k] == -a.signed_means[k] for k in a.entries)


# ------------------------------------------------------------------ traces

def test_moving_average_examples():
    np.testing.assert_allclose(moving_average([0, 0, 3, 0, 0], 3), [0, 1, 1, 1, 0])
    x = np.random.default_rng(0).standard_normal((6, 2))
    assert np.array_equal(moving_average(x, 1), x)
    np.testing.assert_allclose(moving_average(np.full(7, 2.5), 5), 2.5)
    with pytest.raises(ValueError):
        moving_average(x, 2)
    with pytest.raises(ValueError):
        moving_average(x, 0)


def test_timeseries_merges_lag_zero_and_one():
    idx = input_layout(2, 2, target=0, contemporaneous=True, time_input=True)
    J = np.random.default_rng(0).standard_normal((4, len(idx)))
    T = ImportanceTensor(J, idx, 0, np.arange(2, 6))
    times, keys, vals = importance_timeseries(T)
    assert list(times) == [2, 3, 4, 5]
    assert keys == [(0, 1), (0, 2), (1, 1), (1, 2)]
    # var1 lag1 is column 2, var1 lag0 is column 4
    np.testing.assert_allclose(vals[:, 2], J[:, 2] + J[:, 4])
    np.testing.assert_allclose(vals[:, 0], J[:, 0])
    assert [trace_key(*k) for k in keys] == ["var0@0u1", "var0@lag2", "var1@0u1", "var1@lag2"]


def test_regime_contrast():
    t = np.arange(10)
    v = np.where((t >= 3) & (t < 6), 4.0, -1.0)
    assert regime_contrast(v, t, 3, 6) == 4.0
    with pytest.raises(ValueError):
        regime_contrast(v, t, 0, 10)


# ------------------------------------------------------------ full pipeline

def quick(**kw):
    base = dict(eta=2, lam=0.5, train=TrainConfig(epochs=40, hidden=(8, 8)))
    base.update(kw)
    return AnalysisConfig(**base)


def test_analyze_target_equals_dataset_slice():
    x = np.random.default_rng(0).standard_normal((80, 3))
    ds = TimeSeriesDataset.from_array(x)
    cfg = quick()
    all_ = analyze_dataset(ds, cfg)
    one = analyze_target(ds, 2, cfg)
    assert one.to_dict() == all_[2].to_dict()
    assert [r.target for r in all_] == [0, 1, 2]


def test_result_invariants_and_json(tmp_path):
    x = np.random.default_rng(1).standard_normal((60, 2))
    r = analyze_target(TimeSeriesDataset.from_array(x), 0, quick())
    assert set(r.signs) == set(r.selected)
    assert r.tau_hat == max((k[1] for k in r.selected), default=0) <= 2
    assert len(r.runs) == 3
    save_result(tmp_path / "r.json", r)
    back = load_result(tmp_path / "r.json")
    assert back.to_dict() == r.to_dict()
    with pytest.raises(ValueError):
        GcResult(0, {(0, 1)}, {}, r.runs, 1)


def test_config_validation():
    for bad in (dict(eta=0), dict(lam=-1), dict(epsilon=0), dict(epsilon=1), dict(runs=1),
                dict(statistic="median")):
        with pytest.raises(ValueError):
            quick(**bad)


def test_nonlinear_map_target_y():
    ds, _ = simulate_nonlinear_map(tau=10, seed=0)
    r = analyze_target(ds, 1, AnalysisConfig(eta=15, lam=1.0))
    assert r.selected == {(1, 1), (0, 10)}
    assert r.tau_hat == 10
