"""Ground-truth simulator for energy-harvesting sources reporting over fading channels.

States use 0-based channel indices. Energy ``E`` lives in ``0..B`` and age ``K``
in ``1..K_max``. The single-source full state is ``(E, K, C)``; a multi-source
source state drops the channel, which is only revealed by probing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

ARRIVAL, CHANNEL, SUCCESS = 0, 1, 2


@dataclass(frozen=True)
class ChannelModel:
    p: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.p)
        if len(p) < 1:
            raise ValueError("need at least one channel state")
        if any(x < 0.0 or x > 1.0 for x in p):
            raise ValueError(f"success probabilities must lie in [0, 1], got {p}")
        object.__setattr__(self, "p", p)

    @property
    def m(self) -> int:
        return len(self.p)

    @property
    def p_array(self) -> np.ndarray:
        return np.asarray(self.p, dtype=float)


@dataclass(frozen=True)
class SourceModel:
    B: int
    E_s: int
    K_max: int
    channel: ChannelModel

    def __post_init__(self):
        if not (self.B >= self.E_s >= 1):
            raise ValueError(f"need B >= E_s >= 1, got B={self.B}, E_s={self.E_s}")
        if self.K_max < 2:
            raise ValueError(f"K_max must be at least 2, got {self.K_max}")

    @property
    def m(self) -> int:
        return self.channel.m

    @property
    def n_source_states(self) -> int:
        return (self.B + 1) * self.K_max

    @property
    def n_full_states(self) -> int:
        return (self.B + 1) * self.K_max * self.m

    def full_index(self, E, K, C):
        return (E * self.K_max + (K - 1)) * self.m + C

    def source_index(self, E, K):
        return E * self.K_max + (K - 1)

    def full_state(self, s: int) -> "FullState":
        s, C = divmod(int(s), self.m)
        E, k = divmod(s, self.K_max)
        return FullState(E, k + 1, C)


class SourceState(NamedTuple):
    E: int
    K: int


class FullState(NamedTuple):
    E: int
    K: int
    C: int


class Action(NamedTuple):
    b: int
    a: int


@dataclass(frozen=True)
class StepOutcome:
    cost: float
    next: FullState
    r: int
    arrivals: int


# --------------------------------------------------------------------------
# parameter schedules


@dataclass(frozen=True)
class Wave:
    """``offset + amplitude * cos|sin(2 pi t / period)``."""

    offset: float
    amplitude: float = 0.0
    period: float = 1.0
    shape: str = "cos"

    def __post_init__(self):
        if self.shape not in ("cos", "sin"):
            raise ValueError(f"unknown wave shape {self.shape!r}")
        if self.period <= 0:
            raise ValueError("period must be positive")

    def __call__(self, t):
        if self.amplitude == 0.0:
            return np.full(np.shape(t), self.offset, dtype=float)
        fn = np.cos if self.shape == "cos" else np.sin
        return self.offset + self.amplitude * fn(2.0 * np.pi * np.asarray(t, dtype=float) / self.period)

    @property
    def bounds(self) -> tuple[float, float]:
        a = abs(self.amplitude)
        return self.offset - a, self.offset + a


@dataclass(frozen=True)
class ParamSchedule:
    """Time-indexed energy-arrival rate and channel-state distribution.

    ``constant``: ``lam`` is a Wave with zero amplitude and ``q_base`` is the
    fixed distribution. ``sinusoid``: ``q_wave`` drives the probability of
    channel ``q_channel``; the remaining mass is split across the other
    channels in proportion to ``q_base`` restricted to them.
    """

    family: str
    lam: Wave
    q_base: tuple[float, ...]
    q_wave: Wave | None = None
    q_channel: int = -1

    def __post_init__(self):
        if self.family not in ("constant", "sinusoid"):
            raise ValueError(f"unknown schedule family {self.family!r}")
        q = np.asarray(self.q_base, dtype=float)
        if q.ndim != 1 or q.size < 1 or np.any(q < 0):
            raise ValueError("q_base must be a nonnegative vector")
        lo, hi = self.lam.bounds
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"arrival rate leaves [0, 1]: range [{lo}, {hi}]")
        if self.family == "constant":
            if not np.isclose(q.sum(), 1.0, atol=1e-12):
                raise ValueError("q must sum to 1")
        else:
            if self.q_wave is None:
                raise ValueError("sinusoid schedule needs q_wave")
            lo, hi = self.q_wave.bounds
            if lo < 0.0 or hi > 1.0:
                raise ValueError(f"channel probability leaves [0, 1]: range [{lo}, {hi}]")
            if q.size > 1:
                rest = np.delete(q, self.q_channel % q.size)
                if rest.sum() <= 0:
                    raise ValueError("q_base must put weight on the unmodulated channels")
        object.__setattr__(self, "q_base", tuple(float(x) for x in q))

    @property
    def m(self) -> int:
        return len(self.q_base)

    @classmethod
    def constant(cls, lam: float, q: Sequence[float]) -> "ParamSchedule":
        return cls("constant", Wave(float(lam)), tuple(q))

    @classmethod
    def sinusoid(cls, lam: Wave, q_wave: Wave, m: int = 2, channel: int = -1,
                 rest: Sequence[float] | None = None) -> "ParamSchedule":
        base = np.ones(m) if rest is None else np.asarray(rest, dtype=float)
        return cls("sinusoid", lam, tuple(base / base.sum()), q_wave, channel)

    def lambdas(self, t) -> np.ndarray:
        return np.asarray(self.lam(t), dtype=float)

    def qs(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t))
        base = np.asarray(self.q_base)
        if self.family == "constant":
            return np.tile(base, (t.size, 1))
        m = base.size
        j = self.q_channel % m
        qj = self.q_wave(t)
        out = np.empty((t.size, m))
        if m == 1:
            out[:, 0] = 1.0
            return out
        rest = base.copy()
        rest[j] = 0.0
        rest /= rest.sum()
        out[:] = (1.0 - qj)[:, None] * rest[None, :]
        out[:, j] = qj
        return out


def schedule_at(schedule: ParamSchedule, t: int) -> tuple[float, np.ndarray]:
    if t < 1:
        raise ValueError(f"slot index must be >= 1, got {t}")
    return float(schedule.lambdas(t)), schedule.qs(t)[0]


# --------------------------------------------------------------------------
# exact kernels


@dataclass(frozen=True)
class TransitionKernel:
    """Exact next-state law of the single-source chain for frozen ``(lam, q)``.

    Sampling success depends on the *current* channel ``C``; the next channel
    is drawn from ``q`` independently of everything else.
    """

    model: SourceModel
    lam: float
    q: np.ndarray = field(repr=False)

    def row(self, E: int, K: int, C: int, a: int) -> dict:
        """Next-state probabilities keyed by ``(E', K', C')``; coinciding cases are merged."""
        B, Es, Kmax = self.model.B, self.model.E_s, self.model.K_max
        if a == 1 and E < Es:
            raise ValueError("sampling needs E >= E_s")
        lam = self.lam
        k_next = min(K + 1, Kmax)
        if a == 0:
            cases = [((min(E + 1, B), k_next), lam),        # case 1
                     ((E, k_next), 1.0 - lam)]              # case 2
        else:
            p = self.model.channel.p[C]
            up, stay = min(E - Es + 1, B), E - Es
            cases = [((up, 1), lam * p),                      # case 4
                     ((stay, 1), (1.0 - lam) * p),            # case 5
                     ((up, k_next), lam * (1.0 - p)),         # case 6
                     ((stay, k_next), (1.0 - lam) * (1.0 - p))]  # case 7
        row: dict[tuple[int, int, int], float] = {}
        for j, qj in enumerate(self.q):
            for (e, k), w in cases:
                w = qj * w
                if w != 0.0:
                    row[(e, k, j)] = row.get((e, k, j), 0.0) + w
        return row

    def feasible(self) -> np.ndarray:
        m = self.model
        f = np.ones((m.n_full_states, 2), dtype=bool)
        for s in range(m.n_full_states):
            if m.full_state(s).E < m.E_s:
                f[s, 1] = False
        return f

    def dense(self) -> np.ndarray:
        """``(S, 2, S)`` array; infeasible rows are all zero."""
        m = self.model
        S = m.n_full_states
        P = np.zeros((S, 2, S))
        for s in range(S):
            E, K, C = m.full_state(s)
            for a in (0, 1):
                if a == 1 and E < m.E_s:
                    continue
                for (e, k, j), w in self.row(E, K, C, a).items():
                    P[s, a, m.full_index(e, k, j)] += w
        return P


def build_kernel(model: SourceModel, lam: float, q) -> TransitionKernel:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.m,):
        raise ValueError(f"q has shape {q.shape}, model has {model.m} channel states")
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"arrival rate {lam} outside [0, 1]")
    if np.any(q < 0) or not np.isclose(q.sum(), 1.0, atol=1e-12):
        raise ValueError("q must be a probability vector")
    return TransitionKernel(model, float(lam), q)


def build_source_kernel(model: SourceModel, lam: float, q) -> np.ndarray:
    """Per-source law over ``(E, K)`` for actions (0,0), (1,0), (1,1), channel averaged out.

    Returns ``(n, 3, n)``; the (1,1) rows of states with ``E < E_s`` are zero.
    """
    q = np.asarray(q, dtype=float)
    n = model.n_source_states
    B, Es, Kmax = model.B, model.E_s, model.K_max
    P = np.zeros((n, 3, n))
    p_bar = float(q @ model.channel.p_array)
    for E in range(B + 1):
        for K in range(1, Kmax + 1):
            x = model.source_index(E, K)
            kn = min(K + 1, Kmax)
            for act in (0, 1):
                P[x, act, model.source_index(min(E + 1, B), kn)] += lam
                P[x, act, model.source_index(E, kn)] += 1 - lam
            if E >= Es:
                up, stay = min(E - Es + 1, B), E - Es
                P[x, 2, model.source_index(up, 1)] += lam * p_bar
                P[x, 2, model.source_index(stay, 1)] += (1 - lam) * p_bar
                P[x, 2, model.source_index(up, kn)] += lam * (1 - p_bar)
                P[x, 2, model.source_index(stay, kn)] += (1 - lam) * (1 - p_bar)
    return P


# --------------------------------------------------------------------------
# dynamics


def _advance(model: SourceModel, state: FullState, a: int, arrival: int, next_channel: int,
             success_u: float, realized: bool = False) -> StepOutcome:
    E, K, C = state
    if a == 1 and E < model.E_s:
        raise ValueError(f"cannot sample with E={E} < E_s={model.E_s}")
    p = model.channel.p[C]
    r = int(a == 1 and success_u < p)
    if realized:
        cost = float(K) * (1 - r)
    else:
        cost = float(K) * (1.0 - p) if a == 1 else float(K)
    E_next = min(E + arrival - a * model.E_s, model.B)
    K_next = 1 if r else min(K + 1, model.K_max)
    return StepOutcome(cost, FullState(E_next, K_next, int(next_channel)), r, int(arrival))


def _draw_channel(q: np.ndarray, u: float) -> int:
    c = int(np.searchsorted(np.cumsum(q), u, side="right"))
    return min(c, len(q) - 1)


def step(model: SourceModel, schedule: ParamSchedule, state: FullState, action, t: int,
         rng: np.random.Generator, realized: bool = False) -> StepOutcome:
    """One slot: arrival ~ Bernoulli(lam_t), next channel ~ q_{t+1}, success ~ Bernoulli(p(C))."""
    a = action.a if isinstance(action, Action) else int(action)
    lam, _ = schedule_at(schedule, t)
    _, q_next = schedule_at(schedule, t + 1)
    u = rng.random(3)
    return _advance(model, FullState(*state), a, int(u[0] < lam), _draw_channel(q_next, u[1]),
                    u[2], realized)


def source_streams(seed: int, source: int) -> dict[int, np.random.Generator]:
    """Independent generators per purpose, so every algorithm sees the same environment."""
    return {purpose: np.random.default_rng(np.random.SeedSequence([seed, source, purpose]))
            for purpose in (ARRIVAL, CHANNEL, SUCCESS)}


class SourceEnv:
    """One source with its randomness pre-drawn for slots ``1..T+1``.

    Arrivals, channel states and success draws are fixed by ``(seed, source)``
    alone; a policy only decides which of them matter.
    """

    def __init__(self, model: SourceModel, schedule: ParamSchedule, T: int, seed: int = 0,
                 source: int = 0, realized_cost: bool = False, E0: int | None = None,
                 K0: int = 1):
        if schedule.m != model.m:
            raise ValueError("schedule and model disagree on the number of channel states")
        self.model = model
        self.schedule = schedule
        self.T = int(T)
        self.seed = seed
        self.source = source
        self.realized_cost = realized_cost
        self.E0 = model.B if E0 is None else int(E0)
        self.K0 = int(K0)
        t = np.arange(1, self.T + 2)
        self.lam = schedule.lambdas(t)
        self.q = schedule.qs(t)
        streams = source_streams(seed, source)
        self.arrivals = (streams[ARRIVAL].random(t.size) < self.lam).astype(np.int64)
        cdf = np.cumsum(self.q, axis=1)
        u = streams[CHANNEL].random(t.size)
        self.channels = np.minimum((u[:, None] >= cdf).sum(axis=1), model.m - 1)
        self.success_u = streams[SUCCESS].random(t.size)

    def initial_state(self) -> FullState:
        return FullState(self.E0, self.K0, int(self.channels[0]))

    def channel_at(self, t: int) -> int:
        return int(self.channels[t - 1])

    def params_at(self, t: int) -> tuple[float, np.ndarray]:
        return float(self.lam[t - 1]), self.q[t - 1]

    def step(self, state: FullState, a: int, t: int) -> StepOutcome:
        return _advance(self.model, state, a, int(self.arrivals[t - 1]), int(self.channels[t]),
                        float(self.success_u[t - 1]), self.realized_cost)


def make_envs(models: Sequence[SourceModel], schedules: Sequence[ParamSchedule], T: int,
              seed: int, realized_cost: bool = False) -> list[SourceEnv]:
    return [SourceEnv(mdl, sch, T, seed, i, realized_cost)
            for i, (mdl, sch) in enumerate(zip(models, schedules))]


# --------------------------------------------------------------------------
# variation budgets


@dataclass
class VariationBudgets:
    V_lambda: float
    V_q: float
    V_w: float | None
    per_t_lambda: np.ndarray
    per_t_q: np.ndarray
    per_t_w: np.ndarray | None = None
    per_t_w_entry: np.ndarray | None = None

    @property
    def bound(self) -> np.ndarray:
        # V_{lam,t+1} + V_{q,t+1} for t = 0..T-2, aligned with per_t_w
        return self.per_t_lambda + self.per_t_q

    def slotwise_holds(self, atol: float = 1e-12) -> bool:
        if self.per_t_w is None:
            raise ValueError("kernel variation was not computed")
        return bool(np.all(self.per_t_w <= self.bound + atol))

    def slotwise_entry_holds(self, atol: float = 1e-12) -> bool:
        if self.per_t_w_entry is None:
            raise ValueError("kernel variation was not computed")
        return bool(np.all(self.per_t_w_entry <= self.bound + atol))


def _stacked_full_kernels(model: SourceModel, lams: np.ndarray, qs: np.ndarray) -> np.ndarray:
    """Feasible rows of w_t for a batch of parameters: ``(T, rows, S)``."""
    # kernels are affine in (lam*q_j, (1-lam)*q_j); build basis once and mix
    base = build_kernel(model, 0.5, np.full(model.m, 1.0 / model.m))
    S = model.n_full_states
    feas = base.feasible()
    rows = [(s, a) for s in range(S) for a in (0, 1) if feas[s, a]]
    m = model.m
    basis = np.zeros((2 * m, len(rows), S))
    for j in range(m):
        for which, lam in ((0, 1.0), (1, 0.0)):
            qv = np.zeros(m)
            qv[j] = 1.0
            ker = TransitionKernel(model, lam, qv)
            for r, (s, a) in enumerate(rows):
                E, K, C = model.full_state(s)
                for (e, k, c), w in ker.row(E, K, C, a).items():
                    basis[2 * j + which, r, model.full_index(e, k, c)] += w
    coef = np.concatenate([(lams[:, None] * qs)[:, :, None], ((1 - lams)[:, None] * qs)[:, :, None]],
                          axis=2).reshape(lams.size, 2 * m)
    return np.tensordot(coef, basis, axes=(1, 0))


def _stacked_source_kernels(model: SourceModel, lams: np.ndarray, qs: np.ndarray) -> np.ndarray:
    out = []
    for lam, q in zip(lams, qs):
        P = build_source_kernel(model, lam, q)
        rows = [P[x, act] for x in range(model.n_source_states) for act in range(3)
                if act < 2 or x // model.K_max >= model.E_s]
        out.append(np.array(rows))
    return np.array(out)


def variation_budgets(schedule: ParamSchedule, T: int, model: SourceModel | None = None,
                      kernel: str = "full", chunk: int = 256) -> VariationBudgets:
    """Parameter and kernel variation over slots ``1..T``.

    Kernel ``w_t`` is built from ``(lam_{t+1}, q_{t+1})``. ``per_t_w[t]`` holds
    the largest L1 row change between ``w_{t+1}`` and ``w_t`` for t = 0..T-2,
    next to the bound ``V_{lam,t+1} + V_{q,t+1}``; ``per_t_w_entry`` records
    the largest single-entry change instead. ``kernel`` is ``"full"`` for the
    single-source (E, K, C) chain and ``"source"`` for the per-source (E, K)
    chain with probe actions.
    """
    if T < 2:
        raise ValueError("need T >= 2")
    t = np.arange(1, T + 1)
    lam = schedule.lambdas(t)
    q = schedule.qs(t)
    d_lam = np.abs(np.diff(lam))
    d_q = np.max(np.abs(np.diff(q, axis=0)), axis=1)
    out = VariationBudgets(float(d_lam.sum()), float(d_q.sum()), None, d_lam, d_q)
    if model is None:
        return out
    stack = _stacked_full_kernels if kernel == "full" else _stacked_source_kernels
    # w_t for t = 0..T-1 uses params at slot t+1 = 1..T
    w_l1 = np.empty(T - 1)
    w_ent = np.empty(T - 1)
    prev = None
    for start in range(0, T, chunk):
        ks = stack(model, lam[start:start + chunk], q[start:start + chunk])
        if prev is not None:
            ks = np.concatenate([prev[None], ks])
            offset = start - 1
        else:
            offset = 0
        diff = np.abs(np.diff(ks, axis=0))
        w_l1[offset:offset + diff.shape[0]] = diff.sum(axis=2).max(axis=1)
        w_ent[offset:offset + diff.shape[0]] = diff.max(axis=(1, 2))
        prev = ks[-1]
    out.V_w = float(w_l1.sum())
    out.per_t_w = w_l1
    out.per_t_w_entry = w_ent
    return out
