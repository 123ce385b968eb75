"""Sliding-window UCRL2 for one energy-harvesting source, with the age/energy/channel
threshold shortcut in front of extended value iteration."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import FullState, ParamSchedule, SourceEnv, SourceModel
from .trace import RunTrace, TraceBuilder


class EVIError(RuntimeError):
    pass


EVI_MAX_ITER = 10_000


# --------------------------------------------------------------------------
# estimates and confidence sets


@dataclass
class SlidingWindowStats:
    """Windowed counters frozen at an episode start ``tau``.

    The window covers slots ``left..tau-1``; ``e`` and ``n`` are the arrival
    and slot counts there, ``N`` the state-action visits, ``w_hat`` the
    empirical kernel (uniform rows where ``N == 0``).
    """

    e: int
    n: int
    N: np.ndarray
    w_hat: np.ndarray
    W: int
    tau: int
    left: int

    @property
    def lam_hat(self) -> float:
        return self.e / self.n if self.n else 0.0

    @property
    def N_plus(self) -> np.ndarray:
        return np.maximum(self.N, 1)


@dataclass
class ConfidenceRegion:
    center: np.ndarray
    radius: np.ndarray


def window_left(tau: int, W: int) -> int:
    return max(tau - W, 1)


def sw_estimates(states: np.ndarray, actions: np.ndarray, arrivals: np.ndarray, W: int, tau: int,
                 n_states: int, n_actions: int, start: int = 1) -> SlidingWindowStats:
    """Estimates from 1-based slot histories (``states[h]`` is the state at slot ``h``).

    ``start`` is the first slot the learner owns; slots before it are never
    read, which is how a restarted subroutine forgets earlier blocks.
    """
    left = max(window_left(tau, W), start)
    sl = slice(left, tau)
    n = tau - left
    e = int(np.sum(arrivals[sl]))
    s, a, s_next = states[sl], actions[sl], states[left + 1: tau + 1]
    sa = s * n_actions + a
    N = np.bincount(sa, minlength=n_states * n_actions).reshape(n_states, n_actions)
    counts = np.bincount(sa * n_states + s_next, minlength=n_states * n_actions * n_states)
    counts = counts.reshape(n_states, n_actions, n_states).astype(float)
    w_hat = np.where(N[..., None] > 0, counts / np.maximum(N, 1)[..., None], 1.0 / n_states)
    return SlidingWindowStats(e, n, N, w_hat, W, tau, left)


def confidence_radius(S: int, A: int, tau: int, delta: float, N_plus) -> np.ndarray | float:
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    N_plus = np.asarray(N_plus, dtype=float)
    r = np.minimum(2.0, np.sqrt(14.0 * S * math.log(2.0 * A * tau / delta) / N_plus))
    return float(r) if r.ndim == 0 else r


def confidence_region(stats: SlidingWindowStats, delta: float, tau: int | None = None,
                      radius_scale: float = 1.0) -> ConfidenceRegion:
    S, A = stats.N.shape
    tau = stats.tau if tau is None else tau
    r = confidence_radius(S, A, tau, delta, stats.N_plus)
    if radius_scale != 1.0:
        r = np.minimum(2.0, radius_scale * np.asarray(r))
    return ConfidenceRegion(stats.w_hat, np.asarray(r, dtype=float))


def episode_boundary(t: int, W: int, f, N_plus, sa) -> bool:
    """Doubling rule: end at window multiples or once ``f(s,a)`` reaches ``N+(s,a)``."""
    if t % W == 0:
        return True
    return bool(f[sa] >= N_plus[sa])


# --------------------------------------------------------------------------
# extended value iteration


def inner_min(w_hat: np.ndarray, radius, h: np.ndarray) -> np.ndarray:
    """Minimiser of ``w @ h`` over distributions within L1 distance ``radius`` of ``w_hat``.

    ``w_hat`` may be a batch of rows ``(..., S)`` sharing one ``h``.
    """
    w_hat = np.asarray(w_hat, dtype=float)
    h = np.asarray(h, dtype=float)
    squeeze = w_hat.ndim == 1
    w = np.array(w_hat.reshape(-1, w_hat.shape[-1]), copy=True)
    r = np.broadcast_to(np.asarray(radius, dtype=float).reshape(-1), (w.shape[0],))
    asc = np.argsort(h, kind="stable")
    lo = asc[0]
    add = np.minimum(1.0 - w[:, lo], r / 2.0)
    w[:, lo] += add
    desc = asc[::-1]
    ws = w[:, desc]
    prior = np.cumsum(ws, axis=1) - ws
    ws -= np.minimum(ws, np.maximum(0.0, add[:, None] - prior))
    w[:, desc] = ws
    w = w.reshape(w_hat.shape)
    return w if not squeeze else w.reshape(-1)


def _inner_values(w_hat: np.ndarray, radius: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``min w @ h`` per row, without materialising the rows when radii are all 2."""
    if np.all(radius >= 2.0):
        return np.full(w_hat.shape[:-1], h.min())
    if np.all(radius <= 0.0):
        return w_hat @ h
    return inner_min(w_hat, radius.reshape(-1), h) @ h


@dataclass
class EVIResult:
    policy: np.ndarray
    h: np.ndarray
    psi: np.ndarray
    iterations: int
    span: float


def _span(x: np.ndarray) -> float:
    return float(x.max() - x.min())


def evi(region: ConfidenceRegion, costs: np.ndarray, eps: float,
        max_iter: int = EVI_MAX_ITER) -> EVIResult:
    """Undiscounted optimistic value iteration; infeasible actions carry ``inf`` cost.

    Ties go to the highest action index (sampling).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    w_hat, radius = region.center, np.broadcast_to(region.radius, costs.shape)
    S, A = costs.shape
    h = np.zeros(S)
    for z in range(1, max_iter + 1):
        psi = costs + _inner_values(w_hat, radius, h)
        h_new = psi.min(axis=1)
        diff = h_new - h
        h = h_new - h_new.min()
        if _span(diff) <= eps:
            break
    else:
        raise EVIError(f"EVI span did not fall below {eps} in {max_iter} sweeps")
    pol = A - 1 - np.argmin(psi[:, ::-1], axis=1)
    return EVIResult(pol, h, psi, z, _span(diff))


def full_costs(model: SourceModel) -> np.ndarray:
    """``c(s, a)`` over full states, ``inf`` where sampling is infeasible."""
    B1, Kmax, m = model.B + 1, model.K_max, model.m
    K = np.arange(1, Kmax + 1, dtype=float)[None, :, None]
    p = model.channel.p_array[None, None, :]
    idle = np.broadcast_to(K, (B1, Kmax, m))
    samp = np.where((np.arange(B1) >= model.E_s)[:, None, None], K * (1 - p), np.inf)
    return np.stack([idle.ravel(), samp.ravel()], axis=1)


# --------------------------------------------------------------------------
# threshold shortcut and window size


def posterior_params(e: int, n: int) -> tuple[int, int]:
    return e + 1, n - e + 1


def aec_threshold(e_prev: int, n_prev: int, E: int, p: float) -> float:
    alpha, beta = posterior_params(e_prev, n_prev)
    inv_p = math.inf if p <= 0 else 1.0 / p
    return max((alpha + beta) / (E * alpha), inv_p)


def window_from_budgets(S: int, A: int, T: int, V_lambda: float, V_q: float) -> int:
    total = V_lambda + V_q
    if total <= 0:
        raise ValueError("zero variation budget: use W = T")
    raw = 4.0 * S ** (2 / 3) * math.sqrt(A) * math.sqrt(T) / math.sqrt(total)
    return int(min(max(math.floor(raw), 1), T))


# --------------------------------------------------------------------------
# the learner


class _History:
    """1-based per-slot arrays; index ``T + 1`` holds the final state."""

    def __init__(self, T: int):
        self.states = np.zeros(T + 2, dtype=np.int64)
        self.actions = np.zeros(T + 2, dtype=np.int64)
        self.arrivals = np.zeros(T + 2, dtype=np.int64)


class SingleSourceLearner:
    """Episode loop for one source over slots ``t0..t1`` (local clock restarts at ``t0``).

    ``use_threshold=False`` drops the threshold shortcut, leaving plain SW-UCRL2.
    """

    n_actions = 2

    def __init__(self, model: SourceModel, W: int, delta: float = 0.05, use_threshold: bool = True,
                 radius_scale: float = 1.0):
        if W < 1:
            raise ValueError("window must be at least one slot")
        self.model = model
        self.W = int(W)
        self.delta = delta
        self.use_threshold = use_threshold
        self.radius_scale = radius_scale
        self.costs = full_costs(model)
        self.S = model.n_full_states

    def run(self, env: SourceEnv, t0: int, t1: int, state0: FullState, builder: TraceBuilder,
            episode0: int = 0, source: int = 0) -> tuple[FullState, int]:
        model, W, A, S = self.model, self.W, self.n_actions, self.S
        n_local = t1 - t0 + 1
        hist = _History(n_local)
        state = FullState(*state0)
        hist.states[1] = model.full_index(*state)
        episode = episode0
        lt = 1  # local slot
        while lt <= n_local:
            tau = lt
            episode += 1
            stats = sw_estimates(hist.states, hist.actions, hist.arrivals, W, tau, S, A)
            N_plus = stats.N_plus.ravel()
            f = np.zeros(S * A, dtype=np.int64)
            policy = None
            while lt <= n_local:
                E, K, C = state
                s = hist.states[lt]
                if E < model.E_s:
                    a = 0
                elif self.use_threshold and K >= aec_threshold(stats.e, stats.n, E, model.channel.p[C]):
                    a = 1
                else:
                    if policy is None:
                        region = confidence_region(stats, self.delta, tau, self.radius_scale)
                        policy = evi(region, self.costs, 1.0 / math.sqrt(tau)).policy
                    a = int(policy[s])
                sa = s * A + a
                if lt > tau and episode_boundary(lt, W, f, N_plus, sa):
                    break
                t = t0 + lt - 1
                out = env.step(state, a, t)
                builder.record(t, source, episode, E, K, C, int(E >= model.E_s), a, out.r, out.cost)
                hist.actions[lt] = a
                hist.arrivals[lt] = out.arrivals
                state = out.next
                hist.states[lt + 1] = model.full_index(*state)
                f[sa] += 1
                lt += 1
        return state, episode


def _as_env(env, model: SourceModel, T: int, seed: int | None) -> SourceEnv:
    if isinstance(env, SourceEnv):
        return env
    if isinstance(env, ParamSchedule):
        return SourceEnv(model, env, T, 0 if seed is None else seed)
    raise TypeError("env must be a SourceEnv or a ParamSchedule")


def aec_swucrl2_run(env, model: SourceModel, T: int, W: int, delta: float = 0.05,
                    seed: int | None = None, use_threshold: bool = True,
                    radius_scale: float = 1.0, algorithm: str | None = None) -> RunTrace:
    env = _as_env(env, model, T, seed)
    builder = TraceBuilder(T, 1)
    learner = SingleSourceLearner(model, W, delta, use_threshold, radius_scale)
    learner.run(env, 1, T, env.initial_state(), builder)
    name = algorithm or ("AEC-SW-UCRL2" if use_threshold else "SW-UCRL2")
    return builder.build(name, env.seed, {"W": W})


def stationary_policy_run(env: SourceEnv, model: SourceModel, T: int, policy) -> RunTrace:
    """Follow a fixed full-state sampling table (e.g. from value iteration)."""
    builder = TraceBuilder(T, 1)
    state = env.initial_state()
    for t in range(1, T + 1):
        E, K, C = state
        a = int(E >= model.E_s and policy.sample[E, K - 1, C])
        out = env.step(state, a, t)
        builder.record(t, 0, 1, E, K, C, int(E >= model.E_s), a, out.r, out.cost)
        state = out.next
    return builder.build("stationary-VI", env.seed)
