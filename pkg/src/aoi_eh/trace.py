"""Per-slot run records shared by every learner and baseline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

COLUMNS = ("t", "source", "episode", "E", "K", "C", "b", "a", "r", "cost")
INT_COLUMNS = ("t", "source", "episode", "E", "K", "C", "b", "a", "r")


class TraceBuilder:
    """Preallocated columns for ``T`` slots times ``n_sources`` rows."""

    def __init__(self, T: int, n_sources: int = 1):
        self.T = T
        self.N = n_sources
        self.cols = {c: np.zeros((T, n_sources), dtype=np.int64) for c in INT_COLUMNS}
        self.cols["cost"] = np.zeros((T, n_sources))
        self.cols["t"][:] = np.arange(1, T + 1)[:, None]
        self.cols["source"][:] = np.arange(n_sources)[None, :]
        self.cols["C"][:] = -1

    def record(self, t: int, i: int, episode: int, E: int, K: int, C: int, b: int, a: int,
               r: int, cost: float) -> None:
        row = t - 1
        c = self.cols
        c["episode"][row, i] = episode
        c["E"][row, i] = E
        c["K"][row, i] = K
        c["C"][row, i] = C
        c["b"][row, i] = b
        c["a"][row, i] = a
        c["r"][row, i] = r
        c["cost"][row, i] = cost

    def build(self, algorithm: str = "", seed: int | None = None, extra: dict | None = None) -> "RunTrace":
        return RunTrace({k: v.copy() for k, v in self.cols.items()}, algorithm, seed, extra or {})


@dataclass
class RunTrace:
    """Columns are ``(T, N)`` arrays; ``C`` is -1 where the channel went unobserved."""

    cols: dict
    algorithm: str = ""
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.cols["cost"].shape[0]

    @property
    def n_sources(self) -> int:
        return self.cols["cost"].shape[1]

    def __getitem__(self, key) -> np.ndarray:
        if key == "cum_cost":
            return self.cum_cost
        return self.cols[key]

    @property
    def cum_cost(self) -> np.ndarray:
        return np.cumsum(self.cols["cost"], axis=0)

    @property
    def cum_cost_avg(self) -> np.ndarray:
        """Cumulative cost averaged over sources, one value per slot."""
        return self.cum_cost.mean(axis=1)

    @property
    def final_cost(self) -> float:
        return float(self.cum_cost_avg[-1])

    def frame(self) -> pd.DataFrame:
        flat = {k: self.cols[k].ravel() for k in COLUMNS}
        flat["cum_cost"] = self.cum_cost.ravel()
        df = pd.DataFrame(flat)
        if self.algorithm:
            df.insert(0, "algorithm", self.algorithm)
        return df

    def to_csv(self, path) -> None:
        self.frame().to_csv(path, index=False, float_format="%.10g")


def concat_traces(parts: list[RunTrace], algorithm: str = "", seed: int | None = None,
                  extra: dict | None = None) -> RunTrace:
    """Stack consecutive segments; episode ids are renumbered to stay increasing."""
    cols = {}
    offset = 0
    eps = []
    for p in parts:
        e = p.cols["episode"] + offset
        eps.append(e)
        offset = int(e.max()) if e.size else offset
    for k in parts[0].cols:
        cols[k] = np.concatenate([p.cols[k] for p in parts], axis=0)
    cols["episode"] = np.concatenate(eps, axis=0)
    return RunTrace(cols, algorithm, seed, extra or {})
