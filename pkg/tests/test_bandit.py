import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aoi_eh.bandit import (MASTER_STREAM, BorlConfig, Exp3pState, aec_borl_run, borl_config,
                           exp3p_distribution, exp3p_init, exp3p_update, fixed_window_config)
from aoi_eh.env import ChannelModel, ParamSchedule, SourceEnv, SourceModel, Wave
from aoi_eh.learning import aec_swucrl2_run


def fig3():
    model = SourceModel(7, 1, 10, ChannelModel([0.8, 0.2]))
    sch = ParamSchedule.sinusoid(Wave(0.3, 0.2, 4, "cos"), Wave(0.5, 0.2, 4, "sin"))
    return model, sch


def test_block_length_fig3():
    assert borl_config(7, 10, 2, 5000).L == 236


def test_window_set_fig3():
    cfg = borl_config(7, 10, 2, 5000)
    assert cfg.delta_w == math.floor(math.log(236)) == 5
    assert cfg.Q == (1, 2, 8, 26, 79, 236)
    assert cfg.n_arms == 6
    expected = sorted({math.floor(236 ** (k / 5)) for k in range(6)})
    assert list(cfg.Q) == expected


def test_degenerate_horizon():
    cfg = borl_config(7, 10, 2, 1)
    assert cfg.L == 1 and cfg.Q == (1,)


def test_literal_window_exponent():
    cfg = borl_config(7, 10, 2, 5000, delta_w_mode="literal")
    assert cfg.delta_w == 236 and cfg.n_arms == 237
    assert all(1 <= w <= 236 for w in cfg.Q)
    assert cfg.windows.count(1) > 1


def test_exploration_fig3():
    s = exp3p_init(6, 5000, 236)
    assert math.ceil(5000 / 236) == 22
    assert s.exp3_exploration == pytest.approx(1.05 * math.sqrt(6 * math.log(6) / 22))
    assert s.exp3_exploration == pytest.approx(0.734, abs=1e-3)


def test_exploration_clamped():
    raw = 1.05 * math.sqrt(237 * math.log(237) / 22)
    assert raw == pytest.approx(8.06, abs=0.01)
    assert exp3p_init(237, 5000, 236).exp3_exploration == 1.0


def test_initial_distribution_uniform():
    s = exp3p_init(6, 5000, 236)
    assert np.all(s.g == 0)
    np.testing.assert_allclose(exp3p_distribution(s), 1 / 6)


def test_distribution_hand_example():
    s = Exp3pState(np.array([10.0, 0, 0, 0, 0]), 0.1, 0.0, 0.2)
    chi = exp3p_distribution(s)
    assert chi[0] == pytest.approx(0.8 * math.e / (math.e + 4) + 0.04)


@settings(max_examples=100, deadline=None)
@given(g=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=12), a=st.floats(0, 10),
       gam=st.floats(0, 1))
def test_distribution_is_floored_simplex_point(g, a, gam):
    s = Exp3pState(np.array(g), a, 0.0, gam)
    chi = exp3p_distribution(s)
    assert np.all(np.isfinite(chi))
    assert chi.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(chi >= gam / len(g) - 1e-15)


def test_worst_block_only_bias_accrues():
    s = exp3p_init(3, 100, 10)
    chi = exp3p_distribution(s)
    s2 = exp3p_update(s, chi, 1, 10 * 10, 10, 10)
    np.testing.assert_allclose(s2.g, s.exp3_bias / chi)


def test_perfect_block_rewards_chosen_arm():
    s = exp3p_init(3, 100, 10)
    chi = exp3p_distribution(s)
    s2 = exp3p_update(s, chi, 2, 0.0, 10, 10)
    assert s2.g[2] == pytest.approx((s.exp3_bias + 1) / chi[2])
    assert s2.g[0] == pytest.approx(s.exp3_bias / chi[0])


def test_literal_feedback_orientation():
    s = exp3p_init(3, 100, 10)
    chi = exp3p_distribution(s)
    s2 = exp3p_update(s, chi, 0, 25.0, 10, 10, feedback="literal")
    assert s2.g[0] == pytest.approx((s.exp3_bias + 0.25) / chi[0])


def test_out_of_range_cost_rejected():
    s = exp3p_init(3, 100, 10)
    with pytest.raises(ValueError):
        exp3p_update(s, exp3p_distribution(s), 0, 101.0, 10, 10)
    with pytest.raises(ValueError):
        exp3p_update(s, exp3p_distribution(s), 0, -1.0, 10, 10)


def two_arm_toy(seed, blocks=200, L=10, K_max=10):
    rng = np.random.default_rng(np.random.SeedSequence([seed, MASTER_STREAM]))
    s = exp3p_init(2, blocks * L, L)
    for _ in range(blocks):
        chi = exp3p_distribution(s)
        arm = int(rng.choice(2, p=chi))
        s = exp3p_update(s, chi, arm, 0.0 if arm == 0 else L * K_max, L, K_max)
    return exp3p_distribution(s)


def test_two_arm_toy_finds_best_arm():
    assert np.mean([two_arm_toy(seed)[0] for seed in range(10)]) > 0.8


def test_single_arm_master_equals_plain_learner():
    model, sch = fig3()
    T = 400
    env = SourceEnv(model, sch, T, seed=2)
    borl = aec_borl_run(env, model, T, config=fixed_window_config(T, T))
    plain = aec_swucrl2_run(env, model, T, W=T)
    for col in ("E", "K", "a", "r", "cost", "episode"):
        np.testing.assert_array_equal(borl[col], plain[col])


def test_blocks_restart_learner():
    model, sch = fig3()
    T = 1000
    env = SourceEnv(model, sch, T, seed=1)
    tr = aec_borl_run(env, model, T)
    cfg = tr.extra["config"]
    blocks = tr.extra["blocks"]
    assert len(blocks) == math.ceil(T / cfg.L)
    ep = tr["episode"][:, 0]
    starts = np.arange(len(blocks)) * cfg.L + 1
    # a fresh episode begins at every block start
    for t0 in starts[1:]:
        assert ep[t0 - 1] != ep[t0 - 2]
    tot = tr["cost"][:, 0]
    for (_, row), t0 in zip(blocks.iterrows(), starts):
        assert row.block_cost == pytest.approx(tot[t0 - 1:t0 - 1 + cfg.L].sum())
        assert row.W in cfg.Q


def test_borl_reproducible():
    model, sch = fig3()
    a = aec_borl_run(SourceEnv(model, sch, 600, seed=8), model, 600)
    b = aec_borl_run(SourceEnv(model, sch, 600, seed=8), model, 600)
    assert a.frame().equals(b.frame())
    assert a.extra["blocks"].equals(b.extra["blocks"])


def test_config_validation():
    with pytest.raises(ValueError):
        BorlConfig(0, 1, 2, (1,), (1, 1))
    with pytest.raises(ValueError):
        BorlConfig(5, 1, 3, (1,), (1, 1))
