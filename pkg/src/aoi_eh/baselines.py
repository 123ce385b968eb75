"""Reference policies: sliding-window UCRL2 without the threshold shortcut, its BORL wrapper,
max-age probing, and uniformly random probing."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .bandit import aec_borl_run
from .env import SourceEnv, SourceModel
from .learning import aec_swucrl2_run
from .multi import _as_envs, multi_borl_run, multi_swucrl2_run
from .trace import RunTrace, TraceBuilder

KINDS = ("SWUCRL2", "BORL", "MA_SWUCRL2", "RANDOM")
RANDOM_STREAM = 104729
RANDOM_SAMPLE_P = 0.5


def random_run(envs, models: Sequence[SourceModel], T: int, seed: int | None = None,
               sample_p: float = RANDOM_SAMPLE_P) -> RunTrace:
    """Probe a uniformly random source each slot; sample iff it has energy and ``p(C) >= sample_p``."""
    envs = _as_envs(envs, models, T, seed)
    seed = envs[0].seed if seed is None else seed
    N = len(models)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), RANDOM_STREAM]))
    picks = rng.integers(0, N, size=T)
    builder = TraceBuilder(T, N)
    states = [e.initial_state() for e in envs]
    for t in range(1, T + 1):
        j = int(picks[t - 1])
        for i, mdl in enumerate(models):
            E, K, C = states[i]
            probed = i == j
            a = int(probed and E >= mdl.E_s and mdl.channel.p[C] >= sample_p)
            out = envs[i].step(states[i], a, t)
            builder.record(t, i, 1, E, K, C if probed else -1, int(probed), a, out.r, out.cost)
            states[i] = out.next
    return builder.build("RANDOM", seed)


def run_baseline(kind: str, env, models, T: int, W: int | None = None, delta: float = 0.05,
                 seed: int | None = None, **kw) -> RunTrace:
    """``env``/``models`` may be single objects (single-source kinds) or sequences."""
    if kind not in KINDS:
        raise ValueError(f"unknown baseline {kind!r}; choose from {KINDS}")
    if kind in ("SWUCRL2", "MA_SWUCRL2") and W is None:
        raise ValueError(f"{kind} needs a window size")
    multi = isinstance(models, (list, tuple))
    if kind == "SWUCRL2":
        if multi:
            raise ValueError("SWUCRL2 runs on a single source")
        return aec_swucrl2_run(env, models, T, W, delta, seed, use_threshold=False,
                               algorithm="SW-UCRL2", **kw)
    if kind == "BORL":
        if multi:
            return multi_borl_run(env, models, T, delta, seed, "max_age", False, algorithm="BORL", **kw)
        return aec_borl_run(env, models, T, delta, seed, use_threshold=False, algorithm="BORL", **kw)
    models = list(models) if multi else [models]
    envs = env if isinstance(env, (list, tuple)) else [env]
    if kind == "MA_SWUCRL2":
        return multi_swucrl2_run(envs, models, T, W, delta, seed, "max_age", False,
                                 algorithm="MA-SW-UCRL2", **kw)
    return random_run(envs, models, T, seed, **kw)
