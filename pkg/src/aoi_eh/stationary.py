"""Discounted-cost solvers for the stationary single-source MDP and the per-source
probe-charge subproblem, with threshold extraction and Whittle indices.

Arrays are indexed ``[E, K-1, C]`` (full state) or ``[E, K-1]`` (source state).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import SourceModel, SourceState


class ConvergenceError(RuntimeError):
    pass


TIE_TOL = 1e-9


@dataclass
class ValueFunction:
    J: np.ndarray
    discount: float
    iterations: int = 0
    residual: float = 0.0
    # subproblem only
    W: np.ndarray | None = None
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    mu: float | None = None


@dataclass
class PolicyTable:
    """``sample[E, K-1, C]`` for the full chain; the subproblem adds ``probe[E, K-1]``."""

    sample: np.ndarray
    probe: np.ndarray | None = None

    def action(self, E: int, K: int, C: int | None = None) -> tuple[int, int]:
        if self.probe is None:
            return 1, int(self.sample[E, K - 1, C])
        if not self.probe[E, K - 1]:
            return 0, 0
        return 1, int(self.sample[E, K - 1, C]) if C is not None else 0


@dataclass
class ThresholdTables:
    """``K_th[E, C]`` and ``p_th[E, K-1]``; NaN where E < E_s, inf where never sampling."""

    K_th: np.ndarray
    p_th: np.ndarray


class _Grid:
    """Index maps shared by every Bellman backup on one source model."""

    def __init__(self, model: SourceModel):
        self.model = model
        B, Es, Kmax = model.B, model.E_s, model.K_max
        E = np.arange(B + 1)
        self.E = E
        self.K = np.arange(1, Kmax + 1, dtype=float)
        self.kp = np.minimum(np.arange(1, Kmax + 1), Kmax - 1)  # index of min(K+1, Kmax)
        self.e_up = np.minimum(E + 1, B)
        self.can = E >= Es
        self.s_up = np.clip(np.minimum(E - Es + 1, B), 0, B)
        self.s_stay = np.clip(E - Es, 0, B)
        self.p = model.channel.p_array


def _full_backup(g: _Grid, lam: float, q: np.ndarray, discount: float, J: np.ndarray):
    """(idle, sample) action values on the full ``(E, K, C)`` grid; sample is +inf if infeasible."""
    Qc = J @ q  # E_{C'} J(E', K', C')
    kp = g.kp
    ej_idle = lam * Qc[g.e_up][:, kp] + (1 - lam) * Qc[:, kp]
    ej_succ = lam * Qc[g.s_up, 0] + (1 - lam) * Qc[g.s_stay, 0]
    ej_fail = lam * Qc[g.s_up][:, kp] + (1 - lam) * Qc[g.s_stay][:, kp]
    K = g.K[None, :, None]
    p = g.p[None, None, :]
    idle = np.broadcast_to((g.K[None, :] + discount * ej_idle)[:, :, None], J.shape)
    sample = (K * (1 - p) + discount * p * ej_succ[:, None, None]
              + discount * (1 - p) * ej_fail[:, :, None])
    sample = np.where(g.can[:, None, None], sample, np.inf)
    return idle, sample


def value_iteration(model: SourceModel, lam: float, q, discount: float = 0.99, tol: float = 1e-8,
                    max_iter: int = 200_000, J0: np.ndarray | None = None) -> ValueFunction:
    q = np.asarray(q, dtype=float)
    if not (0.0 <= discount < 1.0):
        raise ValueError("discount must lie in [0, 1)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = _Grid(model)
    J = np.zeros((model.B + 1, model.K_max, model.m)) if J0 is None else np.array(J0, dtype=float)
    for it in range(1, max_iter + 1):
        idle, sample = _full_backup(g, lam, q, discount, J)
        J_new = np.minimum(idle, sample)
        res = float(np.max(np.abs(J_new - J)))
        J = J_new
        if res < tol:
            return ValueFunction(J, discount, it, res)
    raise ConvergenceError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


def _upward_closed(mask: np.ndarray, axis: int) -> bool:
    """True iff along ``axis`` the boolean mask switches at most once, from False to True."""
    m = mask.astype(np.int8)
    return bool(np.all(np.diff(m, axis=axis) >= 0))


def extract_policy_and_thresholds(J: ValueFunction, model: SourceModel, lam: float, q,
                                  discount: float | None = None, tie_tol: float = TIE_TOL):
    """Greedy policy of the full-chain Bellman equation and its threshold tables.

    Returns ``(policy, thresholds, is_threshold_in_K, is_threshold_in_p)``.
    Thresholds are the smallest age (resp. success probability) from which
    the policy samples; rows that are not upward-closed still report that
    minimal value, the flags say whether it describes the whole region.
    """
    discount = J.discount if discount is None else discount
    q = np.asarray(q, dtype=float)
    g = _Grid(model)
    idle, sample = _full_backup(g, lam, q, discount, J.J)
    samp = (sample <= idle + tie_tol) & g.can[:, None, None]
    policy = PolicyTable(samp)

    order = np.argsort(g.p, kind="stable")
    in_K = _upward_closed(samp[g.can], axis=1)
    in_p = _upward_closed(samp[g.can][:, :, order], axis=2)

    B1, Kmax, m = samp.shape
    K_th = np.full((B1, m), np.nan)
    p_th = np.full((B1, Kmax), np.nan)
    for E in np.flatnonzero(g.can):
        for C in range(m):
            ks = np.flatnonzero(samp[E, :, C])
            K_th[E, C] = ks[0] + 1 if ks.size else np.inf
        for k in range(Kmax):
            cs = np.flatnonzero(samp[E, k, :])
            p_th[E, k] = g.p[cs].min() if cs.size else np.inf
    return policy, ThresholdTables(K_th, p_th), in_K, in_p


def check_monotone_age(J, slack: float = 1e-9) -> bool:
    arr = J.J if isinstance(J, ValueFunction) else np.asarray(J)
    return bool(np.all(np.diff(arr, axis=1) >= -slack))


# --------------------------------------------------------------------------
# decoupled per-source subproblem


def _sub_backup(g: _Grid, lam: float, q: np.ndarray, discount: float, J: np.ndarray, mu):
    """Return ``(u, sample_values, idle, W, v)`` for source-state values ``J[..., E, K-1]``.

    Leading axes of ``J`` are batch axes; ``mu`` broadcasts against them.
    """
    kp = g.kp
    J_up = J[..., g.e_up, :]
    ej_idle = lam * J_up[..., kp] + (1 - lam) * J[..., kp]
    u = g.K + discount * ej_idle
    Js_up = J[..., g.s_up, :]
    Js_st = J[..., g.s_stay, :]
    ej_succ = lam * Js_up[..., 0] + (1 - lam) * Js_st[..., 0]
    ej_fail = lam * Js_up[..., kp] + (1 - lam) * Js_st[..., kp]
    p = g.p
    samp = (g.K[:, None] * (1 - p) + discount * p * ej_succ[..., None, None]
            + discount * (1 - p) * ej_fail[..., None])
    samp = np.where(g.can[:, None, None], samp, np.inf)
    W = np.minimum(u[..., None], samp)
    mu = np.asarray(mu, dtype=float)
    v = mu[..., None, None] + W @ q
    return u, samp, W, v


def _sub_greedy(g, u, samp, v, tie_tol=TIE_TOL):
    probe = (v < u - tie_tol) & g.can[:, None]
    sample = (samp <= u[..., None] + tie_tol) & g.can[:, None, None]
    return probe, sample


def solve_source_subproblem(model: SourceModel, lam: float, q, mu: float, discount: float = 0.99,
                            tol: float = 1e-8, max_iter: int = 200_000,
                            method: str = "vi") -> tuple[ValueFunction, PolicyTable]:
    """Fixed point of the probe-charge Bellman system for one source.

    ``method="vi"`` runs plain value iteration; ``"pi"`` runs exact policy
    iteration (same fixed point, used for the many solves inside index search).
    """
    if mu < 0:
        raise ValueError("probe charge must be nonnegative")
    q = np.asarray(q, dtype=float)
    g = _Grid(model)
    if method == "pi":
        solver = SubproblemSolver(model, lam, q, discount)
        J, _ = solver.solve(np.array([mu]))
        J = J[0]
        it, res = 0, 0.0
    elif method == "vi":
        J = np.zeros((model.B + 1, model.K_max))
        for it in range(1, max_iter + 1):
            u, samp, W, v = _sub_backup(g, lam, q, discount, J, mu)
            J_new = np.where(g.can[:, None], np.minimum(u, v), u)
            res = float(np.max(np.abs(J_new - J)))
            J = J_new
            if res < tol:
                break
        else:
            raise ConvergenceError(f"subproblem VI did not reach tol={tol} in {max_iter} sweeps")
    else:
        raise ValueError(f"unknown method {method!r}")
    u, samp, W, v = _sub_backup(g, lam, q, discount, J, mu)
    probe, sample = _sub_greedy(g, u, samp, v)
    vf = ValueFunction(J, discount, it, res, W=W, u=u, v=v, mu=float(mu))
    return vf, PolicyTable(sample, probe)


class SubproblemSolver:
    """Batched exact policy iteration for the probe-charge subproblem.

    One instance per frozen ``(model, lam, q, discount)``; each batch entry
    carries its own probe charge. Policies are kept between calls and reused
    as warm starts, which is what makes index bisection cheap.
    """

    def __init__(self, model: SourceModel, lam: float, q, discount: float = 0.99):
        self.model = model
        self.lam = float(lam)
        self.q = np.asarray(q, dtype=float)
        self.discount = float(discount)
        self.g = g = _Grid(model)
        B, Kmax, m = model.B, model.K_max, model.m
        n = (B + 1) * Kmax
        self.n = n
        idx = np.arange(n).reshape(B + 1, Kmax)
        lam = self.lam
        P_idle = np.zeros((n, n))
        rows = idx.ravel()
        np.add.at(P_idle, (rows, idx[g.e_up][:, g.kp].ravel()), lam)
        np.add.at(P_idle, (rows, idx[:, g.kp].ravel()), 1 - lam)
        P_samp = np.zeros((m, n, n))
        c_samp = np.zeros((m, n))
        K = np.broadcast_to(g.K, (B + 1, Kmax))
        for j, pj in enumerate(g.p):
            P = np.zeros((n, n))
            np.add.at(P, (rows, np.repeat(idx[g.s_up, 0], Kmax)), lam * pj)
            np.add.at(P, (rows, np.repeat(idx[g.s_stay, 0], Kmax)), (1 - lam) * pj)
            np.add.at(P, (rows, idx[g.s_up][:, g.kp].ravel()), lam * (1 - pj))
            np.add.at(P, (rows, idx[g.s_stay][:, g.kp].ravel()), (1 - lam) * (1 - pj))
            cant = ~np.repeat(g.can, Kmax)
            P[cant] = P_idle[cant]
            P_samp[j] = P
            c_samp[j] = (K * (1 - pj)).ravel()
        self.P_idle, self.P_samp = P_idle, P_samp
        self.c_idle = K.ravel().copy()
        self.c_samp = c_samp
        self._probe = None
        self._sample = None
        self._flat = None
        self._cant = ~np.repeat(g.can, Kmax)
        self._eye = np.eye(n)

    def evaluate(self, probe: np.ndarray, sample: np.ndarray, mu: np.ndarray) -> np.ndarray:
        """Exact values of a batch of policies: ``probe (b, n)``, ``sample (b, n, m)``."""
        q = self.q
        w_s = probe[..., None] * sample * q  # (b, n, m)
        w0 = 1.0 - w_s.sum(axis=-1)
        P = w0[..., None] * self.P_idle + np.einsum("bnm,mnk->bnk", w_s, self.P_samp)
        c = w0 * self.c_idle + np.einsum("bnm,mn->bn", w_s, self.c_samp) + probe * mu[:, None]
        A = np.eye(self.n) - self.discount * P
        return np.linalg.solve(A, c[..., None])[..., 0]

    def solve(self, mu, probe0=None, sample0=None, max_iter: int = 200):
        """Optimal values for each probe charge in ``mu``; returns ``(J, (probe, sample))``."""
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        b = mu.size
        g = self.g
        B1, Kmax, m = self.model.B + 1, self.model.K_max, self.model.m
        if probe0 is None:
            if self._probe is not None and self._probe.shape[0] == b:
                probe0, sample0 = self._probe, self._sample
            else:
                probe0 = np.zeros((b, B1 * Kmax), dtype=bool)
                sample0 = np.broadcast_to(np.repeat(g.can, Kmax)[:, None], (b, B1 * Kmax, m)).copy()
        probe, sample = probe0.copy(), sample0.copy()
        tol = 1e-10
        for _ in range(max_iter):
            Jf = self.evaluate(probe, sample, mu)
            J = Jf.reshape(b, B1, Kmax)
            u, samp, W, v = _sub_backup(g, self.lam, self.q, self.discount, J, mu)
            pr, sa = probe.reshape(b, B1, Kmax), sample.reshape(b, B1, Kmax, m)
            new_pr = np.where(pr, v <= u + tol, v < u - tol) & g.can[:, None]
            new_sa = np.where(sa, samp <= u[..., None] + tol, samp < u[..., None] - tol)
            new_sa &= g.can[:, None, None]
            new_pr = new_pr.reshape(b, -1)
            new_sa = new_sa.reshape(b, -1, m)
            if np.array_equal(new_pr, probe) and np.array_equal(new_sa, sample):
                self._probe, self._sample = probe, sample
                return J, (probe, sample)
            probe, sample = new_pr, new_sa
        raise ConvergenceError("policy iteration did not stabilise")

    def gap(self, mu, states: np.ndarray, **kw) -> np.ndarray:
        """``v - u`` at ``states`` (flat source indices), one state per charge."""
        J, _ = self.solve(mu, **kw)
        u, samp, W, v = _sub_backup(self.g, self.lam, self.q, self.discount, J, mu)
        b = np.arange(len(states))
        return (v.reshape(len(states), -1) - u.reshape(len(states), -1))[b, states]

    # single-charge path: same iteration on flat arrays, without batch overhead

    def _flat_backup(self, J: np.ndarray, mu: float):
        a = self.discount
        u = self.c_idle + a * (self.P_idle @ J)
        samp = self.c_samp + a * (self.P_samp @ J)
        samp[:, self._cant] = np.inf
        W = np.minimum(u, samp)
        v = mu + self.q @ W
        return u, samp, v

    def _flat_evaluate(self, probe: np.ndarray, sample: np.ndarray, mu: float) -> np.ndarray:
        w_s = probe[None, :] * sample * self.q[:, None]  # (m, n)
        w0 = 1.0 - w_s.sum(axis=0)
        P = w0[:, None] * self.P_idle
        c = w0 * self.c_idle + probe * mu
        for j in range(w_s.shape[0]):
            P += w_s[j][:, None] * self.P_samp[j]
            c += w_s[j] * self.c_samp[j]
        return np.linalg.solve(self._eye - self.discount * P, c)

    def solve_one(self, mu: float, max_iter: int = 200):
        """Policy iteration for one charge, warm-started from the previous single solve."""
        if self._flat is None:
            probe = np.zeros(self.n, dtype=bool)
            sample = np.broadcast_to(~self._cant, (self.model.m, self.n)).copy()
        else:
            probe, sample = self._flat
        tol = 1e-10
        for _ in range(max_iter):
            J = self._flat_evaluate(probe, sample, mu)
            u, samp, v = self._flat_backup(J, mu)
            new_pr = np.where(probe, v <= u + tol, v < u - tol) & ~self._cant
            new_sa = np.where(sample, samp <= u + tol, samp < u - tol) & ~self._cant
            if np.array_equal(new_pr, probe) and np.array_equal(new_sa, sample):
                self._flat = (probe, sample)
                return J, u, v
            probe, sample = new_pr, new_sa
        raise ConvergenceError("policy iteration did not stabilise")

    def gap_one(self, mu: float, state: int) -> float:
        J, u, v = self.solve_one(mu)
        return float(v[state] - u[state])


def whittle_cap(model: SourceModel, discount: float) -> float:
    return model.K_max / (1.0 - discount)


def _bisect_one(solver: SubproblemSolver, state: int, tol: float) -> float:
    model = solver.model
    if state // model.K_max < model.E_s:
        return 0.0
    if solver.gap_one(0.0, state) >= 0:
        return 0.0
    lo, hi = 0.0, whittle_cap(model, solver.discount)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if solver.gap_one(mid, state) >= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _bisect_indices(solver: SubproblemSolver, states: np.ndarray, tol: float) -> np.ndarray:
    """Smallest charge with ``u <= v`` at each state, by bisection."""
    return np.array([_bisect_one(solver, int(s), tol) for s in np.atleast_1d(states)])


def whittle_index(model: SourceModel, lam: float, q, state, discount: float = 0.99,
                  tol: float = 1e-3, solver: SubproblemSolver | None = None) -> float:
    """Smallest probe charge at which not probing is at least as good as probing."""
    E, K = state
    if E < model.E_s:
        return 0.0
    solver = solver or SubproblemSolver(model, lam, q, discount)
    return float(_bisect_indices(solver, np.array([model.source_index(E, K)]), tol)[0])


class WhittleTable:
    """Whittle indices over ``(E, K)`` for one frozen parameter set.

    Entries are filled on first lookup (or all at once via :meth:`fill`);
    a filled entry never changes.
    """

    def __init__(self, model: SourceModel, lam: float, q, discount: float = 0.99, tol: float = 1e-3):
        self.model = model
        self.lam = float(lam)
        self.q = np.asarray(q, dtype=float)
        self.discount = discount
        self.tol = tol
        self.values = np.full((model.B + 1, model.K_max), np.nan)
        self.values[: model.E_s] = 0.0
        self._solver = None

    @property
    def solver(self) -> SubproblemSolver:
        if self._solver is None:
            self._solver = SubproblemSolver(self.model, self.lam, self.q, self.discount)
        return self._solver

    def __call__(self, E: int, K: int) -> float:
        val = self.values[E, K - 1]
        if np.isnan(val):
            val = _bisect_indices(self.solver, np.array([self.model.source_index(E, K)]), self.tol)[0]
            self.values[E, K - 1] = val
        return float(val)

    def fill(self) -> np.ndarray:
        missing = np.flatnonzero(np.isnan(self.values.ravel()))
        if missing.size:
            self.values.ravel()[missing] = _bisect_indices(self.solver, missing, self.tol)
        return self.values


def whittle_table(model: SourceModel, lam: float, q, discount: float = 0.99,
                  tol: float = 1e-3) -> WhittleTable:
    t = WhittleTable(model, lam, q, discount, tol)
    t.fill()
    return t


def subproblem_thresholds(model: SourceModel, lam: float, q, discount: float = 0.99,
                          mu: float = 0.0) -> ThresholdTables:
    """Sampling thresholds of the probed source (charge ``mu``, default free probing)."""
    vf, pol = solve_source_subproblem(model, lam, q, mu, discount, method="pi")
    g = _Grid(model)
    samp = pol.sample
    B1, Kmax, m = samp.shape
    K_th = np.full((B1, m), np.nan)
    p_th = np.full((B1, Kmax), np.nan)
    for E in np.flatnonzero(g.can):
        for C in range(m):
            ks = np.flatnonzero(samp[E, :, C])
            K_th[E, C] = ks[0] + 1 if ks.size else np.inf
        for k in range(Kmax):
            cs = np.flatnonzero(samp[E, k, :])
            p_th[E, k] = g.p[cs].min() if cs.size else np.inf
    return ThresholdTables(K_th, p_th)


def passive_set(model: SourceModel, lam: float, q, mu: float, discount: float = 0.99,
                solver: SubproblemSolver | None = None) -> np.ndarray:
    solver = solver or SubproblemSolver(model, lam, q, discount)
    J, _ = solver.solve(np.array([mu]))
    u, samp, W, v = _sub_backup(solver.g, solver.lam, solver.q, solver.discount, J, mu)
    return (u < v)[0]


def indexability_check(model: SourceModel, lam: float, q, mu_grid: Sequence[float],
                       discount: float = 0.99) -> bool:
    """Passive sets ``{u < v}`` must grow by inclusion along the increasing grid."""
    grid = np.asarray(mu_grid, dtype=float)
    if grid.size == 0 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must start at 0 and increase strictly")
    solver = SubproblemSolver(model, lam, q, discount)
    prev = None
    for chunk in np.array_split(grid, max(1, grid.size // 64)):
        J, _ = _solve_fresh(solver, chunk)
        u, samp, W, v = _sub_backup(solver.g, solver.lam, solver.q, solver.discount, J, chunk)
        passive = u < v
        for P in passive:
            if prev is not None and np.any(prev & ~P):
                return False
            prev = P
    return True


def _solve_fresh(solver: SubproblemSolver, mu: np.ndarray):
    solver._probe = None
    return solver.solve(mu)


# --------------------------------------------------------------------------
# stationary multi-source scheduling rule


def wits3_decision(states: Sequence[SourceState], whittle: Sequence, thresholds: Sequence[ThresholdTables],
                   models: Sequence[SourceModel], channels: Sequence[int]) -> tuple[int | None, int]:
    """Probe the eligible source with the largest index, then sample iff ``p(C) >= p_th``.

    ``whittle[i]`` is a :class:`WhittleTable` or an ``(E, K-1)`` array.
    ``channels[i]`` is read only for the probed source. Ties on the index go
    to the larger age, then the smaller source id.
    """
    best, key = None, None
    for i, (st, mdl) in enumerate(zip(states, models)):
        E, K = st
        if E < mdl.E_s:
            continue
        wi = whittle[i](E, K) if callable(whittle[i]) else float(np.asarray(whittle[i])[E, K - 1])
        k = (wi, K, -i)
        if key is None or k > key:
            best, key = i, k
    if best is None:
        return None, 0
    E, K = states[best]
    p = models[best].channel.p[channels[best]]
    return best, int(p >= thresholds[best].p_th[E, K - 1])


# --------------------------------------------------------------------------
# CSV export


def export_threshold_csv(path, thresholds: ThresholdTables, lam: float | None = None) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["table", "E", "C_or_K", "value", "lambda"])
        B1, m = thresholds.K_th.shape
        for E in range(B1):
            for C in range(m):
                w.writerow(["K_th", E, C, repr(float(thresholds.K_th[E, C])), lam])
        for E in range(B1):
            for k in range(thresholds.p_th.shape[1]):
                w.writerow(["p_th", E, k + 1, repr(float(thresholds.p_th[E, k])), lam])


def export_whittle_csv(path, table) -> None:
    values = table.fill() if isinstance(table, WhittleTable) else np.asarray(table)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["E", "K", "value"])
        for E in range(values.shape[0]):
            for k in range(values.shape[1]):
                w.writerow([E, k + 1, repr(float(values[E, k]))])
