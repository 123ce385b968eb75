import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from aoi_eh.env import ChannelModel, ParamSchedule, SourceEnv, SourceModel, Wave, build_kernel
from aoi_eh.learning import (ConfidenceRegion, aec_swucrl2_run, aec_threshold, confidence_radius,
                             episode_boundary, evi, full_costs, inner_min, stationary_policy_run,
                             sw_estimates, window_from_budgets)
from aoi_eh.stationary import extract_policy_and_thresholds, value_iteration

from oracles import average_cost, enumerate_inner_min, lattice_inner_min, undiscounted_vi


# ---------------------------------------------------------------- estimates

def _history(arrivals, states=None, actions=None):
    T = len(arrivals)
    pad = lambda x: np.concatenate([[0], x, [0]]).astype(np.int64)
    states = np.zeros(T + 1, dtype=int) if states is None else np.asarray(states)
    actions = np.zeros(T, dtype=int) if actions is None else np.asarray(actions)
    return np.concatenate([[0], states]).astype(np.int64), pad(actions), pad(arrivals)


def test_lambda_hat_hand_example():
    s, a, arr = _history([1, 0, 1])
    stats = sw_estimates(s, a, arr, W=10, tau=4, n_states=2, n_actions=2)
    assert stats.lam_hat == pytest.approx(2 / 3)
    assert (stats.e, stats.n) == (2, 3)


def test_unvisited_pairs_use_uniform_rows():
    s, a, arr = _history([1, 0, 1], states=[0, 0, 0, 0])
    stats = sw_estimates(s, a, arr, W=10, tau=4, n_states=3, n_actions=2)
    assert stats.N_plus[1, 0] == 1 and stats.N[1, 0] == 0
    np.testing.assert_allclose(stats.w_hat[1, 1], 1 / 3)
    np.testing.assert_allclose(stats.w_hat[0, 0], [1, 0, 0])


def test_window_left_edge():
    s, a, arr = _history([1, 1, 1, 0, 0, 0])
    stats = sw_estimates(s, a, arr, W=2, tau=7, n_states=1, n_actions=2)
    assert stats.left == 5 and stats.n == 2 and stats.e == 0


def test_stationary_stream_estimate():
    rng = np.random.default_rng(11)
    lam = 0.35
    s, a, arr = _history((rng.random(1000) < lam).astype(int))
    stats = sw_estimates(s, a, arr, W=1001, tau=1001, n_states=1, n_actions=2)
    assert stats.n == 1000
    assert abs(stats.lam_hat - lam) <= 3 * math.sqrt(lam * (1 - lam) / 1000)


def test_transition_estimate_rows_are_distributions():
    rng = np.random.default_rng(3)
    states = rng.integers(0, 4, 51)
    actions = rng.integers(0, 2, 50)
    s, a, arr = _history(np.zeros(50, dtype=int), states, actions)
    stats = sw_estimates(s, a, arr, W=100, tau=51, n_states=4, n_actions=2)
    np.testing.assert_allclose(stats.w_hat.sum(axis=2), 1.0)
    assert stats.N.sum() == 50


# ---------------------------------------------------------------- confidence radius

def test_radius_clipped_example():
    raw = math.sqrt(14 * 160 * math.log(2 * 2 * 4 / 0.05) / 1)
    assert raw == pytest.approx(113.7, abs=0.1)
    assert confidence_radius(160, 2, 4, 0.05, 1) == 2.0


def test_radius_vanishes_with_counts():
    assert confidence_radius(4, 2, 4, 0.05, 1e12) < 1e-3


def test_radius_square_root_scaling():
    r1 = confidence_radius(2, 2, 3, 0.5, 1000)
    r4 = confidence_radius(2, 2, 3, 0.5, 4000)
    assert r1 < 2
    assert r4 == pytest.approx(r1 / 2)


@pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 2.0])
def test_radius_rejects_bad_delta(delta):
    with pytest.raises(ValueError):
        confidence_radius(4, 2, 4, delta, 1)


# ---------------------------------------------------------------- episode boundary

def test_boundary_at_window_multiple():
    assert episode_boundary(10, 10, np.zeros(4), np.ones(4), 0)


def test_boundary_fresh_episode():
    assert not episode_boundary(3, 10, np.zeros(4), np.ones(4), 2)


def test_boundary_doubling_reached():
    f = np.array([0, 3, 0])
    N_plus = np.array([1, 3, 1])
    assert episode_boundary(7, 100, f, N_plus, 1)


# ---------------------------------------------------------------- inner minimisation

def test_inner_min_zero_radius():
    w = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(inner_min(w, 0.0, np.array([3.0, 1.0, 2.0])), w)


def test_inner_min_full_radius():
    w = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(inner_min(w, 2.0, np.array([3.0, 1.0, 2.0])), [0, 1, 0])


def _lp_inner_min(w_hat, r, h):
    n = len(h)
    # variables x = (w, t) with t >= |w - w_hat|
    c = np.concatenate([h, np.zeros(n)])
    I = np.eye(n)
    A_ub = np.block([[I, -I], [-I, -I], [np.zeros((1, n)), np.ones((1, n))]])
    b_ub = np.concatenate([w_hat, -w_hat, [r]])
    A_eq = np.concatenate([np.ones(n), np.zeros(n)])[None]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * (2 * n))
    return res.fun


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 31), r=st.floats(0, 2))
def test_inner_min_matches_linear_program(seed, r):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    w = rng.dirichlet(np.ones(n))
    h = rng.uniform(-5, 5, n)
    out = inner_min(w, r, h)
    assert out.min() >= -1e-12
    assert out.sum() == pytest.approx(1.0)
    assert np.abs(out - w).sum() <= r + 1e-9
    assert out @ h == pytest.approx(_lp_inner_min(w, r, h), abs=1e-7)


def test_inner_min_batch_rows_agree():
    rng = np.random.default_rng(0)
    W = rng.dirichlet(np.ones(5), size=7)
    r = rng.uniform(0, 2, 7)
    h = rng.normal(size=5)
    batch = inner_min(W, r, h)
    for i in range(7):
        np.testing.assert_allclose(batch[i], inner_min(W[i], r[i], h))


@pytest.mark.parametrize("seed", range(3))
def test_lattice_oracle_agrees_with_enumeration(seed):
    rng = np.random.default_rng(seed)
    step = 0.05
    units = rng.multinomial(20, np.ones(6) / 6)
    h = rng.uniform(0, 3, 6)
    r = float(rng.uniform(0, 2))
    assert lattice_inner_min(units, r, h, step) == pytest.approx(
        enumerate_inner_min(units, r, h, step), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_inner_min_against_fine_lattice(seed):
    rng = np.random.default_rng(500 + seed)
    units = rng.multinomial(1000, rng.dirichlet(np.ones(6)))
    w = units / 1000
    h = rng.uniform(0, 3, 6)
    r = float(rng.uniform(0, 2))
    got = inner_min(w, r, h) @ h
    assert abs(got - lattice_inner_min(units, r, h, 1e-3)) <= 5e-3


# ---------------------------------------------------------------- EVI

def test_evi_single_state():
    region = ConfidenceRegion(np.ones((1, 2, 1)), np.zeros((1, 2)))
    res = evi(region, np.array([[1.0, 2.0]]), eps=1e-6)
    assert res.iterations == 1 and res.span == 0.0
    assert res.policy[0] == 0


def test_evi_rejects_bad_precision():
    region = ConfidenceRegion(np.ones((1, 2, 1)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        evi(region, np.array([[1.0, 2.0]]), eps=0.0)


@pytest.mark.parametrize("lam", [0.2, 0.6])
def test_evi_with_exact_kernel_is_value_iteration(lam):
    model = SourceModel(3, 1, 6, ChannelModel([0.8, 0.3]))
    q = np.array([0.4, 0.6])
    P = build_kernel(model, lam, q).dense()
    c = full_costs(model)
    res = evi(ConfidenceRegion(P, np.zeros(c.shape)), c, eps=1e-9)
    ref_pol, _ = undiscounted_vi(P, c, eps=1e-9)
    assert average_cost(P, c, res.policy) == pytest.approx(average_cost(P, c, ref_pol), abs=1e-6)


def test_evi_is_optimistic():
    model = SourceModel(2, 1, 4, ChannelModel([0.7, 0.3]))
    q = np.array([0.5, 0.5])
    P = build_kernel(model, 0.5, q).dense()
    c = full_costs(model)
    ref_pol, _ = undiscounted_vi(P, c, eps=1e-10)
    gain = average_cost(P, c, ref_pol)
    res = evi(ConfidenceRegion(P, np.full(c.shape, 0.3)), c, eps=1e-10)
    # with the truth inside every ball the optimistic gain cannot exceed the true one
    h = res.h
    opt_gain = (res.psi.min(axis=1) - h).mean()
    assert opt_gain <= gain + 1e-6


def test_evi_precision_from_episode_start():
    model = SourceModel(2, 1, 4, ChannelModel([0.7, 0.3]))
    P = build_kernel(model, 0.5, [0.5, 0.5]).dense()
    res = evi(ConfidenceRegion(P, np.full((P.shape[0], 2), 0.1)), full_costs(model), 1 / math.sqrt(17))
    assert res.span <= 1 / math.sqrt(17)


def test_full_radius_evi_samples_whenever_possible():
    model = SourceModel(2, 1, 4, ChannelModel([0.7, 0.3]))
    S = model.n_full_states
    region = ConfidenceRegion(np.full((S, 2, S), 1 / S), np.full((S, 2), 2.0))
    pol = evi(region, full_costs(model), 0.1).policy
    E = np.array([model.full_state(s).E for s in range(S)])
    np.testing.assert_array_equal(pol, (E >= 1).astype(int))


# ---------------------------------------------------------------- threshold and window

def test_threshold_no_history():
    assert aec_threshold(0, 0, 2, 0.8) == pytest.approx(1.25)


def test_threshold_perfect_channel():
    assert aec_threshold(3, 5, 10, 1.0) == 1.0


def test_threshold_all_arrivals():
    assert aec_threshold(9, 9, 5, 0.5) == pytest.approx(2.0)
    assert (9 + 1 + 1) / (5 * 10) < 2


def test_threshold_dead_channel_never_fires():
    assert aec_threshold(1, 4, 3, 0.0) == math.inf


def test_window_fig3():
    assert window_from_budgets(160, 2, 5000, 999.8, 999.8) == 263


def test_window_clamps_to_one():
    S, A, T = 160, 2, 5000
    big = 16 * S ** (4 / 3) * A * T
    assert window_from_budgets(S, A, T, big, 0.0) == 1


def test_window_scaling_with_horizon():
    w1 = 4 * 20 ** (2 / 3) * math.sqrt(2) * math.sqrt(1000) / math.sqrt(50.0)
    assert window_from_budgets(20, 2, 1000, 25, 25) == math.floor(w1)
    assert window_from_budgets(20, 2, 2000, 25, 25) == math.floor(w1 * math.sqrt(2))


def test_window_needs_drift():
    with pytest.raises(ValueError):
        window_from_budgets(20, 2, 100, 0, 0)


# ---------------------------------------------------------------- the learner

def fig3_model():
    return SourceModel(7, 1, 10, ChannelModel([0.8, 0.2]))


def test_starved_source_never_samples():
    model = fig3_model()
    env = SourceEnv(model, ParamSchedule.constant(0.0, [0.5, 0.5]), 50, seed=0, E0=0)
    tr = aec_swucrl2_run(env, model, 50, W=10)
    assert not tr["a"].any()
    assert tr.final_cost == sum(min(t, 10) for t in range(1, 51))


def test_stationary_learner_close_to_value_iteration():
    model = fig3_model()
    lam, q = 0.5, np.array([0.5, 0.5])
    T = 20000
    env = SourceEnv(model, ParamSchedule.constant(lam, q), T, seed=4)
    learned = aec_swucrl2_run(env, model, T, W=T)
    vf = value_iteration(model, lam, q)
    pol, *_ = extract_policy_and_thresholds(vf, model, lam, q)
    ref = stationary_policy_run(env, model, T, pol)
    assert abs(learned.final_cost - ref.final_cost) <= 0.05 * ref.final_cost


def test_trace_schema_and_reproducibility():
    model = fig3_model()
    sch = ParamSchedule.sinusoid(Wave(0.3, 0.2, 4, "cos"), Wave(0.5, 0.2, 4, "sin"))
    a = aec_swucrl2_run(SourceEnv(model, sch, 300, seed=5), model, 300, W=40)
    b = aec_swucrl2_run(SourceEnv(model, sch, 300, seed=5), model, 300, W=40)
    fa, fb = a.frame(), b.frame()
    assert list(fa.columns) == ["algorithm", "t", "source", "episode", "E", "K", "C", "b", "a",
                                "r", "cost", "cum_cost"]
    assert fa.equals(fb)
    assert np.all(np.diff(a.cum_cost[:, 0]) >= 0)
    assert np.all(a["a"] <= a["b"])


def test_episodes_respect_window_and_doubling():
    model = fig3_model()
    sch = ParamSchedule.sinusoid(Wave(0.3, 0.2, 4, "cos"), Wave(0.5, 0.2, 4, "sin"))
    T, W = 600, 50
    tr = aec_swucrl2_run(SourceEnv(model, sch, T, seed=9), model, T, W=W)
    ep = tr["episode"][:, 0]
    E, K, C, a = (tr[c][:, 0] for c in ("E", "K", "C", "a"))
    s = np.array([model.full_index(*x) for x in zip(E, K, C)])
    states = np.concatenate([[0], s, [0]])
    acts = np.concatenate([[0], a, [0]])
    arr = np.zeros(T + 2, dtype=int)
    for e in np.unique(ep):
        slots = np.flatnonzero(ep == e) + 1
        tau = slots[0]
        assert all(t % W != 0 for t in slots[1:])
        stats = sw_estimates(states, acts, arr, W, tau, model.n_full_states, 2)
        f = np.bincount(s[slots - 1] * 2 + a[slots - 1], minlength=stats.N.size)
        assert np.all(f <= stats.N_plus.ravel())
