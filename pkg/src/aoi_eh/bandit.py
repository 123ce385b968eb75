"""EXP3.P master over sliding-window sizes, run block by block over a restarted learner."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import pandas as pd

from .env import SourceModel
from .learning import SingleSourceLearner, _as_env
from .trace import RunTrace, TraceBuilder

MASTER_STREAM = 7919


@dataclass(frozen=True)
class BorlConfig:
    """``windows[l]`` is the window of arm ``l``; ``Q`` is its sorted set of distinct values."""

    L: int
    delta_w: int
    n_arms: int
    Q: tuple
    windows: tuple

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("block length must be positive")
        if self.n_arms != len(self.windows):
            raise ValueError("one window per arm")
        if any(not (1 <= w) for w in self.windows):
            raise ValueError("windows must be positive")


def block_length(B: int, K_max: int, A: int, T: int) -> int:
    raw = 3.0 * (B / K_max) ** (2 / 3) * math.sqrt(A) * math.sqrt(T)
    return int(min(max(math.floor(raw), 1), T))


def borl_config(B: int, K_max: int, A: int, T: int, delta_w_mode: str = "log") -> BorlConfig:
    L = block_length(B, K_max, A, T)
    if delta_w_mode == "log":
        dw = int(math.floor(math.log(L)))
    elif delta_w_mode == "literal":
        dw = L
    else:
        raise ValueError(f"unknown delta_w_mode {delta_w_mode!r}")
    if dw == 0:
        windows = (1,)
    else:
        # the small epsilon keeps exact powers such as 8**(1/3) from flooring down
        windows = tuple(int(math.floor(L ** (k / dw) * (1 + 1e-12))) for k in range(dw + 1))
    return BorlConfig(L, dw, dw + 1, tuple(sorted(set(windows))), windows)


def fixed_window_config(L: int, W: int) -> BorlConfig:
    """Degenerate master with a single arm."""
    return BorlConfig(L, 0, 1, (W,), (W,))


@dataclass
class Exp3pState:
    g: np.ndarray
    exp3_learning_rate: float
    exp3_bias: float
    exp3_exploration: float

    @property
    def n_arms(self) -> int:
        return self.g.size


def exp3p_init(n_arms: int, T: int, L: int) -> Exp3pState:
    if n_arms < 1:
        raise ValueError("need at least one arm")
    blocks = math.ceil(T / L)
    ln = math.log(n_arms)
    alpha = 0.95 * math.sqrt(ln / (n_arms * blocks))
    beta = math.sqrt(ln / (n_arms * blocks))
    gamma = min(1.0, 1.05 * math.sqrt(n_arms * ln / blocks))
    return Exp3pState(np.zeros(n_arms), alpha, beta, gamma)


def exp3p_distribution(state: Exp3pState) -> np.ndarray:
    z = state.exp3_learning_rate * state.g
    z = np.exp(z - z.max())
    gam = state.exp3_exploration
    return (1.0 - gam) * z / z.sum() + gam / state.n_arms


def exp3p_update(state: Exp3pState, chi: np.ndarray, chosen: int, block_cost: float, L: int,
                 K_max: float, feedback: str = "reward") -> Exp3pState:
    scale = L * K_max
    if not (0.0 <= block_cost <= scale * (1 + 1e-12)):
        raise ValueError(f"block cost {block_cost} outside [0, {scale}]")
    x = block_cost / scale
    if feedback == "reward":
        G = 1.0 - x
    elif feedback == "literal":
        G = x
    else:
        raise ValueError(f"unknown feedback {feedback!r}")
    gain = np.full(state.n_arms, state.exp3_bias)
    gain[chosen] += G
    return replace(state, g=state.g + gain / chi)


def master_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), MASTER_STREAM]))


def borl_loop(T: int, config: BorlConfig, K_max: float, seed: int,
              run_block: Callable[[int, int, int], float], feedback: str = "reward") -> pd.DataFrame:
    """Drive ``run_block(t0, t1, W) -> normalised-scale block cost`` over all blocks."""
    L = config.L
    state = exp3p_init(config.n_arms, T, L)
    rng = master_rng(seed)
    rows = []
    n_blocks = math.ceil(T / L)
    for theta in range(n_blocks):
        t0, t1 = theta * L + 1, min((theta + 1) * L, T)
        chi = exp3p_distribution(state)
        arm = int(rng.choice(config.n_arms, p=chi))
        W = config.windows[arm]
        cost = run_block(t0, t1, W)
        rows.append({"theta": theta, "l": arm, "W": W, "block_cost": cost})
        state = exp3p_update(state, chi, arm, cost, L, K_max, feedback)
    return pd.DataFrame(rows, columns=["theta", "l", "W", "block_cost"])


def aec_borl_run(env, model: SourceModel, T: int, delta: float = 0.05, seed: int | None = None,
                 use_threshold: bool = True, config: BorlConfig | None = None,
                 delta_w_mode: str = "log", feedback: str = "reward", radius_scale: float = 1.0,
                 algorithm: str | None = None) -> RunTrace:
    env = _as_env(env, model, T, seed)
    seed = env.seed if seed is None else seed
    config = config or borl_config(model.B, model.K_max, 2, T, delta_w_mode)
    builder = TraceBuilder(T, 1)
    cursor = {"state": env.initial_state(), "episode": 0}

    def run_block(t0, t1, W):
        learner = SingleSourceLearner(model, W, delta, use_threshold, radius_scale)
        cursor["state"], cursor["episode"] = learner.run(env, t0, t1, cursor["state"], builder,
                                                         cursor["episode"])
        return float(builder.cols["cost"][t0 - 1:t1, 0].sum())

    blocks = borl_loop(T, config, model.K_max, seed, run_block, feedback)
    name = algorithm or ("AEC-BORL" if use_threshold else "BORL")
    return builder.build(name, seed, {"blocks": blocks, "config": config})
