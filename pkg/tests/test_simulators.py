import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jgc.simulators import (MERGED_LAG, Edge, GroundTruthGraph, LvSpec, SimulationError, VarSpec,
                            box_muller, companion_radius, integrate_lorenz96, lag_class,
                            load_truth, lorenz96_graph, lorenz96_rhs, lv_first_integral,
                            lv_graph, lv_parents, make_rng, random_var_coefs, save_truth,
                            simulate_lorenz96,
                            simulate_lotka_volterra, simulate_nonlinear_map,
                            simulate_piecewise_var, simulate_var, union_graph, var_graph)


def lag1_autocorr(x):
    x = x - x.mean()
    return float(x[1:] @ x[:-1] / (x @ x))


def jacobian_support(f, x, h=1e-6):
    """Nonzero pattern of df/dx at x by central differences: [dst, src]."""
    n = len(x)
    J = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        J[:, k] = (f(x + e) - f(x - e)) / (2 * h)
    return np.abs(J) > 1e-8


# ---------------------------------------------------------------- graph type

def test_graph_validation():
    with pytest.raises(ValueError):
        GroundTruthGraph(2, frozenset({Edge(0, 2, 1, "+")}))
    with pytest.raises(ValueError):
        GroundTruthGraph(2, frozenset({Edge(0, 1, 0, "+")}))
    with pytest.raises(ValueError):
        GroundTruthGraph(2, frozenset({Edge(0, 1, 1, "*")}))
    with pytest.raises(ValueError, match="duplicate"):
        GroundTruthGraph(2, frozenset({Edge(0, 1, 1, "+"), Edge(0, 1, 1, "-")}))


def test_lag_class_merges_zero_and_one():
    assert lag_class(0) == lag_class(1) == MERGED_LAG
    assert [lag_class(a) for a in (2, 3, 7)] == [2, 3, 7]


def test_truth_json_round_trip(tmp_path):
    ds, regimes = simulate_piecewise_var(VarSpec(T=300, breaks=(100, 200), seed=4))
    g = union_graph(r[1] for r in regimes)
    save_truth(tmp_path / "t.json", g, regimes)
    g2, r2 = load_truth(tmp_path / "t.json")
    assert g2 == g
    assert r2 == regimes


def test_box_muller_moments():
    z = box_muller(make_rng(1), 200_001)
    assert z.shape == (200_001,)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01


# ----------------------------------------------------------------------- VAR

def test_var_paper_regime_and_determinism():
    spec = VarSpec(n=10, T=500, tau=5, seed=3)
    ds, g = simulate_var(spec)
    assert (ds.T, ds.N) == (500, 10)
    ds2, g2 = simulate_var(VarSpec(n=10, T=500, tau=5, seed=3))
    assert ds == ds2 and g == g2
    assert simulate_var(VarSpec(seed=4))[0] != ds


def test_var_graph_matches_coefficients_and_is_stable():
    A = random_var_coefs(make_rng(2), 6, 3, 0.3, (0.2, 0.8))
    assert companion_radius(A) < 1
    g = var_graph(A)
    want = set()
    for a in range(3):
        for dst in range(6):
            for src in range(6):
                c = A[a, dst, src]
                if c != 0:
                    want.add(Edge(src, dst, lag_class(a + 1), "+" if c > 0 else "-"))
    assert set(g.edges) == want


def test_var_signs_are_mixed():
    signs = {e.sign for s in range(5) for e in simulate_var(VarSpec(seed=s))[1].edges}
    assert signs == {"+", "-"}


def test_var_zero_coefficients_give_noise_and_empty_truth():
    spec = VarSpec(n=3, T=400, tau=2, coefs=[np.zeros((2, 3, 3))], seed=1)
    ds, g = simulate_var(spec)
    assert not g.edges
    assert abs(np.corrcoef(ds.values.T)[0, 1]) < 0.15


def test_var_ar1_autocorrelation():
    spec = VarSpec(n=1, T=5000, tau=1, coefs=[np.full((1, 1, 1), 0.5)], seed=7)
    ds, g = simulate_var(spec)
    assert abs(lag1_autocorr(ds.values[:, 0]) - 0.5) < 0.1
    assert g.edges == frozenset({Edge(0, 0, MERGED_LAG, "+")})


def test_var_spec_validation():
    for bad in (dict(tau=0), dict(p=0.0), dict(p=1.0), dict(breaks=(600,)),
                dict(breaks=(300, 200), T=900)):
        with pytest.raises(ValueError):
            VarSpec(**bad).validate()


def test_piecewise_defaults_have_three_regimes():
    ds, regimes = simulate_piecewise_var(VarSpec(n=10, tau=5, T=900, breaks=(300, 600), seed=0))
    assert [r[0] for r in regimes] == [(0, 300), (300, 600), (600, 900)]
    supports = [r[1].lag_keys() for r in regimes]
    assert supports[0] != supports[1] != supports[2]


def test_piecewise_without_breaks_is_plain_var():
    a = simulate_var(VarSpec(seed=9))
    b, regimes = simulate_piecewise_var(VarSpec(seed=9))
    assert a[0] == b and a[1] == regimes[0][1]


def test_piecewise_ar1_sign_flip():
    coefs = [np.full((1, 1, 1), 0.9), np.full((1, 1, 1), -0.9)]
    ds, _ = simulate_piecewise_var(VarSpec(n=1, tau=1, T=2000, breaks=(1000,), coefs=coefs, seed=5))
    x = ds.values[:, 0]
    assert lag1_autocorr(x[:1000]) > 0.5
    assert lag1_autocorr(x[1000:]) < -0.5


# ------------------------------------------------------------------ Lorenz96

def test_lorenz_paper_setup():
    ds, g = simulate_lorenz96(N=20, F=10, dt_sample=0.1, T=500, seed=0)
    assert (ds.T, ds.N) == (500, 20)
    assert np.all(np.isfinite(ds.values))
    assert len(g.edges) == 80


def test_lorenz_zero_fixed_point():
    out = integrate_lorenz96(np.zeros(6), 0.0, 0.1, 20)
    assert np.all(out == 0)
    ds, _ = simulate_lorenz96(N=6, F=0.0, T=20, x0=np.zeros(6))
    assert np.all(ds.values == 0)


def test_lorenz_truth_matches_rhs_structure():
    x = make_rng(0).standard_normal(8) + 3
    support = jacobian_support(lambda v: lorenz96_rhs(v, 10.0), x)
    want = {(src, dst) for dst, src in zip(*np.nonzero(support))}
    assert {(e.src, e.dst) for e in lorenz96_graph(8).edges} == want
    assert all(e.lag == MERGED_LAG and e.sign == "?" for e in lorenz96_graph(8).edges)


def test_lorenz_rejects_small_n():
    with pytest.raises(ValueError):
        simulate_lorenz96(N=3)


def test_lorenz_rk4_fourth_order():
    x0 = simulate_lorenz96(N=20, F=10, T=2, seed=1)[0].values[-1]
    ref = integrate_lorenz96(x0, 10.0, 0.1, 1, substeps=640)[-1]
    errs = [np.abs(integrate_lorenz96(x0, 10.0, 0.1, 1, substeps=s)[-1] - ref).max()
            for s in (10, 20, 40)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(12 < r < 20 for r in ratios), ratios
    assert errs[0] < 1e-4


def test_lorenz_halved_step_agrees_on_short_horizon():
    x0 = simulate_lorenz96(N=20, F=10, T=2, seed=1)[0].values[-1]
    a = integrate_lorenz96(x0, 10.0, 0.1, 5, substeps=10)
    b = integrate_lorenz96(x0, 10.0, 0.1, 5, substeps=20)
    assert np.abs(a - b).max() < 1e-3


@pytest.mark.xfail(strict=True, reason="chaotic divergence amplifies the step error well past "
                   "1e-5 within 50 samples; convergence order is tested instead")
def test_lorenz_halved_step_agrees_over_50_samples():
    x0 = simulate_lorenz96(N=20, F=10, T=2, seed=1)[0].values[-1]
    a = integrate_lorenz96(x0, 10.0, 0.1, 50, substeps=10)
    b = integrate_lorenz96(x0, 10.0, 0.1, 50, substeps=20)
    assert np.abs(a - b).max() < 1e-5


# -------------------------------------------------------------- nonlinear map

def test_map_first_iterates_match_hand_oracle():
    ds, _ = simulate_nonlinear_map(tau=2, T=5, seed=0, x0=0.4, y0=0.3, burn_in=0)
    hist = make_rng(0).random(1)[0]  # x(-1)
    x, y = [hist, 0.4], [None, 0.3]
    for _ in range(3):
        xp, yp, xlag = x[-1], y[-1], x[-2]
        x.append(xp * (3.78 - 3.78 * xp - 0.07 * yp))
        y.append(yp * (3.77 - 3.77 * yp - 0.08 * xlag))
    assert list(ds.values[:3, 0]) == x[2:5]
    assert list(ds.values[:3, 1]) == y[2:5]


def test_map_zero_y_is_absorbing():
    ds, _ = simulate_nonlinear_map(tau=10, T=300, seed=1, y0=0.0)
    assert np.all(ds.values[:, 1] == 0)


def test_map_truth_and_range():
    ds, g = simulate_nonlinear_map(tau=10, seed=0)
    assert g.lag_keys() == {(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 10)}
    assert ds.values.min() > 0 and ds.values.max() < 1


def test_map_rejects_bad_initial_state():
    with pytest.raises(ValueError):
        simulate_nonlinear_map(x0=1.5)
    with pytest.raises(ValueError):
        simulate_nonlinear_map(tau=10, T=10)


# ------------------------------------------------------------- Lotka-Volterra

def test_lv_paper_defaults():
    spec = LvSpec()
    assert (spec.n, spec.T, spec.alpha, spec.rho, spec.beta, spec.delta, spec.n_parents) == \
        (20, 2000, 1.1, 1.1, 0.2, 0.2, 2)
    assert spec.eta_lv == 2.75e-5
    ds, g = simulate_lotka_volterra(LvSpec(T=300))
    assert ds.values.min() > 0
    cross = [e for e in g.edges if e.src != e.dst]
    assert {e.sign for e in cross if e.src >= 10} == {"-"}
    assert {e.sign for e in cross if e.src < 10} == {"+"}
    # every prey has two predator parents and every predator two prey parents
    for j in range(20):
        assert sum(1 for e in cross if e.dst == j) == 2


def test_lv_truth_matches_rhs_structure():
    spec = LvSpec(n=8)
    m = 4
    prey_pa, _ = lv_parents(m, 2)
    P = np.zeros((m, m))
    for i, pa in enumerate(prey_pa):
        P[i, pa] = 1

    def rhs(s):
        x, y = s[:m], s[m:]
        return np.concatenate([1.1 * x - 0.2 * x * (P @ y) - 2.75e-5 * x * x,
                               0.2 * y * (P.T @ x) - 1.1 * y])

    support = jacobian_support(rhs, np.linspace(2, 5, 8))
    want = {(src, dst) for dst, src in zip(*np.nonzero(support))}
    assert {(e.src, e.dst) for e in lv_graph(spec).edges} == want


def test_lv_decoupled_system():
    ds, g = simulate_lotka_volterra(LvSpec(n=4, beta=0.0, delta=0.0, T=200, n_parents=1))
    assert all(e.src == e.dst for e in g.edges)
    prey, pred = ds.values[:, :2], ds.values[:, 2:]
    assert np.all(np.diff(prey, axis=0) > 0)
    assert np.all(np.diff(pred, axis=0) < 0)


def test_lv_two_species_first_integral():
    spec = LvSpec(n=2, n_parents=1, eta_lv=0.0, T=500, dt=0.001, stride=100, burn_in=0,
                  x0=[6.0, 4.0])
    ds, _ = simulate_lotka_volterra(spec)
    V = lv_first_integral(ds.values[:, 0], ds.values[:, 1], 1.1, 0.2, 0.2, 1.1)
    assert np.abs(V - V[0]).max() / abs(V[0]) < 1e-3


def test_lv_negative_population_reported():
    with pytest.raises(SimulationError, match="step 1"):
        simulate_lotka_volterra(LvSpec(n=2, n_parents=1, T=5, x0=[-1.0, 1.0]))


def test_lv_spec_validation():
    for bad in (dict(n=3), dict(alpha=0.0), dict(beta=-0.1), dict(n_parents=0),
                dict(n=4, n_parents=3)):
        with pytest.raises(ValueError):
            LvSpec(**bad).validate()


# ----------------------------------------------------------------- properties

@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_simulators_are_deterministic_and_finite(seed):
    for sim in (lambda s: simulate_var(VarSpec(n=4, T=60, tau=2, seed=s)),
                lambda s: simulate_lorenz96(N=5, T=30, seed=s),
                lambda s: simulate_nonlinear_map(tau=3, T=40, seed=s)):
        a, b = sim(seed), sim(seed)
        assert a[0] == b[0] and a[1] == b[1]
        assert np.all(np.isfinite(a[0].values))
