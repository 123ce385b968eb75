"""Several energy-harvesting sources sharing one probe per slot: Whittle-index probing
with windowed estimates, threshold-or-EVI sampling, and the BORL wrapper."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bandit import BorlConfig, block_length, borl_config, borl_loop
from .env import FullState, SourceEnv, SourceModel
from .learning import ConfidenceRegion, aec_threshold, confidence_radius, evi, window_left
from .stationary import ThresholdTables, WhittleTable, subproblem_thresholds
from .trace import RunTrace, TraceBuilder

# per-source actions (b, a)
IDLE, PROBE, SAMPLE = 0, 1, 2
N_ACTIONS = 3


@dataclass
class MultiStats:
    """Window counters for every source, frozen at episode start ``tau``."""

    e: np.ndarray
    n: int
    o: np.ndarray
    n_probe: np.ndarray
    N: list
    w_hat: list
    W: int
    tau: int
    left: int

    @property
    def lam_hat(self) -> np.ndarray:
        return self.e / self.n if self.n else np.zeros_like(self.e, dtype=float)

    @property
    def q_hat(self) -> np.ndarray:
        m = self.o.shape[1]
        safe = np.maximum(self.n_probe, 1)[:, None]
        return np.where(self.n_probe[:, None] > 0, self.o / safe, 1.0 / m)

    def N_plus(self, i: int) -> np.ndarray:
        return np.maximum(self.N[i], 1)

    def radius(self, i: int, delta: float) -> np.ndarray:
        S = self.N[i].shape[0]
        return confidence_radius(S, N_ACTIONS, self.tau, delta, self.N_plus(i))


class MultiHistory:
    """1-based per-slot arrays of shape ``(T + 2, N)``; ``channel`` is -1 when not probed."""

    def __init__(self, T: int, N: int):
        self.states = np.zeros((T + 2, N), dtype=np.int64)
        self.actions = np.zeros((T + 2, N), dtype=np.int64)
        self.arrivals = np.zeros((T + 2, N), dtype=np.int64)
        self.channel = np.full((T + 2, N), -1, dtype=np.int64)


def sw_estimates_multi(hist: MultiHistory, W: int, tau: int, models: Sequence[SourceModel]) -> MultiStats:
    left = window_left(tau, W)
    sl = slice(left, tau)
    n = tau - left
    N_src = len(models)
    m = models[0].m
    e = hist.arrivals[sl].sum(axis=0)
    ch = hist.channel[sl]
    probed = ch >= 0
    o = np.zeros((N_src, m))
    for i in range(N_src):
        o[i] = np.bincount(ch[probed[:, i], i], minlength=m)[:m]
    Ns, ws = [], []
    for i, mdl in enumerate(models):
        S = mdl.n_source_states
        s = hist.states[sl, i]
        a = hist.actions[sl, i]
        s_next = hist.states[left + 1: tau + 1, i]
        sa = s * N_ACTIONS + a
        N = np.bincount(sa, minlength=S * N_ACTIONS).reshape(S, N_ACTIONS)
        counts = np.bincount(sa * S + s_next, minlength=S * N_ACTIONS * S)
        counts = counts.reshape(S, N_ACTIONS, S).astype(float)
        Ns.append(N)
        ws.append(np.where(N[..., None] > 0, counts / np.maximum(N, 1)[..., None], 1.0 / S))
    return MultiStats(e.astype(np.int64), n, o, probed.sum(axis=0), Ns, ws, W, tau, left)


class WhittleCache:
    """Tables keyed on frozen estimates, so repeated estimates reuse earlier work."""

    def __init__(self, discount: float = 0.99, tol: float = 1e-3, maxsize: int = 64):
        self.discount = discount
        self.tol = tol
        self.maxsize = maxsize
        self._tables: OrderedDict = OrderedDict()

    def get(self, model: SourceModel, lam: float, q) -> WhittleTable:
        key = (id(model), float(lam), tuple(np.round(np.asarray(q, dtype=float), 15)))
        tab = self._tables.get(key)
        if tab is None:
            tab = WhittleTable(model, lam, q, self.discount, self.tol)
            self._tables[key] = tab
            if len(self._tables) > self.maxsize:
                self._tables.popitem(last=False)
        else:
            self._tables.move_to_end(key)
        return tab


def whittle_table_episode(model: SourceModel, lam_hat: float, q_hat, discount: float = 0.99,
                          tol: float = 1e-3, fill: bool = True) -> tuple[WhittleTable, ThresholdTables]:
    """Index table and free-probe sampling thresholds for one source's frozen estimates."""
    table = WhittleTable(model, lam_hat, q_hat, discount, tol)
    if fill:
        table.fill()
    return table, subproblem_thresholds(model, lam_hat, q_hat, discount)


def source_costs(model: SourceModel, p: float) -> np.ndarray:
    """``c(s, (b, a))`` over ``(E, K)`` once the probed channel shows success probability ``p``."""
    K = np.tile(np.arange(1, model.K_max + 1, dtype=float), model.B + 1)
    E = np.repeat(np.arange(model.B + 1), model.K_max)
    samp = np.where(E >= model.E_s, K * (1 - p), np.inf)
    return np.stack([K, K, samp], axis=1)


def pick_source(states: Sequence[FullState], models: Sequence[SourceModel], score) -> int | None:
    """Eligible source maximising ``score(i, E, K)``; ties to larger age, then smaller id."""
    best, key = None, None
    for i, (st, mdl) in enumerate(zip(states, models)):
        E, K = st[0], st[1]
        if E < mdl.E_s:
            continue
        k = (score(i, E, K), K, -i)
        if key is None or k > key:
            best, key = i, k
    return best


class MultiSourceLearner:
    """Episode loop over all sources for slots ``t0..t1`` on a restarted local clock.

    ``probe_rule`` is ``"whittle"`` or ``"max_age"``; ``use_threshold`` toggles the
    threshold shortcut ahead of EVI for the probed source.
    """

    def __init__(self, models: Sequence[SourceModel], W: int, delta: float = 0.05,
                 probe_rule: str = "whittle", use_threshold: bool = True, discount: float = 0.99,
                 whittle_tol: float = 1e-3, cache: WhittleCache | None = None,
                 radius_scale: float = 1.0):
        if probe_rule not in ("whittle", "max_age"):
            raise ValueError(f"unknown probe rule {probe_rule!r}")
        self.models = list(models)
        self.W = int(W)
        self.delta = delta
        self.probe_rule = probe_rule
        self.use_threshold = use_threshold
        self.cache = cache or WhittleCache(discount, whittle_tol)
        self.radius_scale = radius_scale
        self.table_log: list = []

    def _region(self, stats: MultiStats, i: int) -> ConfidenceRegion:
        r = np.asarray(stats.radius(i, self.delta), dtype=float)
        if self.radius_scale != 1.0:
            r = np.minimum(2.0, self.radius_scale * r)
        return ConfidenceRegion(stats.w_hat[i], r)

    def run(self, envs: Sequence[SourceEnv], t0: int, t1: int, states0: Sequence[FullState],
            builder: TraceBuilder, episode0: int = 0):
        models, W = self.models, self.W
        N = len(models)
        n_local = t1 - t0 + 1
        hist = MultiHistory(n_local, N)
        states = [FullState(*s) for s in states0]
        for i, mdl in enumerate(models):
            hist.states[1, i] = mdl.source_index(states[i].E, states[i].K)
        episode = episode0
        lt = 1
        while lt <= n_local:
            tau = lt
            episode += 1
            stats = sw_estimates_multi(hist, W, tau, models)
            lam_hat, q_hat = stats.lam_hat, stats.q_hat
            N_plus = [stats.N_plus(i) for i in range(N)]
            f = [np.zeros_like(n_p) for n_p in N_plus]
            tables = [None] * N
            evi_cache: dict = {}

            def index(i, E, K):
                if tables[i] is None:
                    tables[i] = self.cache.get(models[i], lam_hat[i], q_hat[i])
                    self.table_log.append((t0 + tau - 1, i))
                return tables[i](E, K)

            def max_age(i, E, K):
                return 0.0

            score = index if self.probe_rule == "whittle" else max_age
            while lt <= n_local:
                i_star = pick_source(states, models, score)
                acts = [IDLE] * N
                if i_star is not None:
                    E, K, C = states[i_star]
                    mdl = models[i_star]
                    p = mdl.channel.p[C]
                    acts[i_star] = PROBE
                    if self.use_threshold and K >= aec_threshold(int(stats.e[i_star]), stats.n, E, p):
                        acts[i_star] = SAMPLE
                    else:
                        key = (i_star, C)
                        pol = evi_cache.get(key)
                        if pol is None:
                            pol = evi(self._region(stats, i_star), source_costs(mdl, p),
                                      1.0 / math.sqrt(tau)).policy
                            evi_cache[key] = pol
                        if pol[hist.states[lt, i_star]] == SAMPLE:
                            acts[i_star] = SAMPLE
                if lt > tau:
                    if lt % W == 0:
                        break
                    if max(f[i][hist.states[lt, i], acts[i]] - N_plus[i][hist.states[lt, i], acts[i]]
                           for i in range(N)) > 0:
                        break
                t = t0 + lt - 1
                for i, mdl in enumerate(models):
                    a_i = acts[i]
                    E, K, C = states[i]
                    out = envs[i].step(states[i], int(a_i == SAMPLE), t)
                    probed = a_i != IDLE
                    builder.record(t, i, episode, E, K, C if probed else -1, int(probed),
                                   int(a_i == SAMPLE), out.r, out.cost)
                    hist.actions[lt, i] = a_i
                    hist.arrivals[lt, i] = out.arrivals
                    if probed:
                        hist.channel[lt, i] = C
                    f[i][hist.states[lt, i], a_i] += 1
                    states[i] = out.next
                    hist.states[lt + 1, i] = mdl.source_index(out.next.E, out.next.K)
                lt += 1
        return states, episode


def _as_envs(envs, models, T, seed) -> list[SourceEnv]:
    if all(isinstance(e, SourceEnv) for e in envs):
        return list(envs)
    return [SourceEnv(mdl, sch, T, 0 if seed is None else seed, i)
            for i, (mdl, sch) in enumerate(zip(models, envs))]


def multi_swucrl2_run(envs, models: Sequence[SourceModel], T: int, W: int, delta: float = 0.05,
                      seed: int | None = None, probe_rule: str = "whittle", use_threshold: bool = True,
                      discount: float = 0.99, whittle_tol: float = 1e-3, radius_scale: float = 1.0,
                      algorithm: str = "") -> RunTrace:
    envs = _as_envs(envs, models, T, seed)
    builder = TraceBuilder(T, len(models))
    learner = MultiSourceLearner(models, W, delta, probe_rule, use_threshold, discount, whittle_tol,
                                 radius_scale=radius_scale)
    learner.run(envs, 1, T, [e.initial_state() for e in envs], builder)
    return builder.build(algorithm, envs[0].seed, {"W": W, "table_log": learner.table_log})


def wit_swucrl2_run(envs, models: Sequence[SourceModel], N: int | None, T: int, W: int,
                    delta: float = 0.05, seed: int | None = None, **kw) -> RunTrace:
    if N is not None and N != len(models):
        raise ValueError("N must match the number of source models")
    return multi_swucrl2_run(envs, models, T, W, delta, seed, "whittle", True,
                             algorithm="WIT-SW-UCRL2", **kw)


def wit_borl_config(models: Sequence[SourceModel], T: int, delta_w_mode: str = "log") -> BorlConfig:
    B = max(m.B for m in models)
    K = max(m.K_max for m in models)
    return borl_config(B, K, N_ACTIONS, T, delta_w_mode)


def multi_borl_run(envs, models: Sequence[SourceModel], T: int, delta: float = 0.05,
                   seed: int | None = None, probe_rule: str = "whittle", use_threshold: bool = True,
                   config: BorlConfig | None = None, delta_w_mode: str = "log",
                   feedback: str = "reward", discount: float = 0.99, whittle_tol: float = 1e-3,
                   radius_scale: float = 1.0, algorithm: str = "") -> RunTrace:
    envs = _as_envs(envs, models, T, seed)
    seed = envs[0].seed if seed is None else seed
    config = config or wit_borl_config(models, T, delta_w_mode)
    N = len(models)
    K_max = max(m.K_max for m in models)
    builder = TraceBuilder(T, N)
    cache = WhittleCache(discount, whittle_tol)
    cursor = {"states": [e.initial_state() for e in envs], "episode": 0}

    def run_block(t0, t1, W):
        learner = MultiSourceLearner(models, W, delta, probe_rule, use_threshold, discount,
                                     whittle_tol, cache, radius_scale)
        cursor["states"], cursor["episode"] = learner.run(envs, t0, t1, cursor["states"], builder,
                                                          cursor["episode"])
        return float(builder.cols["cost"][t0 - 1:t1].sum() / N)

    blocks = borl_loop(T, config, K_max, seed, run_block, feedback)
    return builder.build(algorithm, seed, {"blocks": blocks, "config": config})


def wit_borl_run(envs, models: Sequence[SourceModel], N: int | None, T: int, delta: float = 0.05,
                 seed: int | None = None, **kw) -> RunTrace:
    if N is not None and N != len(models):
        raise ValueError("N must match the number of source models")
    return multi_borl_run(envs, models, T, delta, seed, "whittle", True, algorithm="WIT-BORL", **kw)
