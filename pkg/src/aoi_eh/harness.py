"""Experiment configuration, orchestration over (algorithm, seed) pairs, and tidy outputs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd
import yaml

from .bandit import aec_borl_run
from .baselines import run_baseline
from .env import ChannelModel, ParamSchedule, SourceEnv, SourceModel, Wave, make_envs, variation_budgets
from .learning import aec_swucrl2_run, window_from_budgets
from .multi import N_ACTIONS, wit_borl_run, wit_swucrl2_run
from .stationary import extract_policy_and_thresholds, value_iteration
from .trace import RunTrace

SCENARIOS = ("stationary_single", "nonstat_single", "nonstat_multi")
FLOAT_FORMAT = "%.17g"


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    name: str
    scenario: str
    sources: list
    schedules: list = field(default_factory=list)
    T: int = 5000
    seeds: list = field(default_factory=lambda: list(range(10)))
    algorithms: list = field(default_factory=list)
    W: Any = "auto"
    delta: float = 0.05
    discount: float = 0.99
    lambdas: list = field(default_factory=list)
    q: list | None = None
    borl: dict = field(default_factory=lambda: {"delta_w_mode": "log", "feedback": "reward"})
    realized_cost: bool = False
    out_dir: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.T < 1:
            raise ValueError("T must be positive")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.scenario != "stationary_single":
            if len(self.schedules) != len(self.sources):
                raise ValueError("one schedule per source")
            unknown = [a for a in self.algorithms if a not in ALGORITHMS]
            if unknown:
                raise ValueError(f"unknown algorithms {unknown}")
        if self.scenario == "nonstat_single" and len(self.sources) != 1:
            raise ValueError("single-source scenario takes exactly one source")
        self.models  # validates source blocks

    @property
    def N(self) -> int:
        return len(self.sources)

    @property
    def models(self) -> list[SourceModel]:
        return [SourceModel(int(s["B"]), int(s["E_s"]), int(s["K_max"]), ChannelModel(s["p"]))
                for s in self.sources]

    @property
    def param_schedules(self) -> list[ParamSchedule]:
        return [schedule_from_dict(d, mdl.m) for d, mdl in zip(self.schedules, self.models)]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _wave(d) -> Wave:
    if isinstance(d, (int, float)):
        return Wave(float(d))
    return Wave(float(d["offset"]), float(d.get("amplitude", 0.0)), float(d.get("period", 1.0)),
                d.get("shape", "cos"))


def schedule_from_dict(d: dict, m: int) -> ParamSchedule:
    fam = d.get("family", "constant")
    if fam == "constant":
        return ParamSchedule.constant(float(d["lambda"]), d["q"])
    if fam == "sinusoid":
        return ParamSchedule.sinusoid(_wave(d["lambda"]), _wave(d["q"]), m=m,
                                      channel=int(d.get("channel", -1)), rest=d.get("rest"))
    raise ValueError(f"unknown schedule family {fam!r}")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(yaml.safe_load(fh))


def preset_path(name: str) -> Path:
    return Path(str(resources.files("aoi_eh") / "presets" / f"{name}.yaml"))


def load_preset(name: str) -> ExperimentConfig:
    return load_config(preset_path(name))


def resolve_config(ref: str) -> ExperimentConfig:
    """A path to a YAML file, or the name of a bundled preset."""
    p = Path(ref)
    if p.suffix in (".yaml", ".yml") or p.exists():
        return load_config(p)
    return load_preset(ref)


# --------------------------------------------------------------------------
# algorithms


def _single(fn):
    def run(cfg: ExperimentConfig, envs, models, W, seed):
        return fn(envs[0], models[0], cfg, W, seed)
    return run


ALGORITHMS: dict[str, Callable] = {
    "AEC-SW-UCRL2": _single(lambda env, mdl, cfg, W, seed: aec_swucrl2_run(
        env, mdl, cfg.T, W, cfg.delta, seed)),
    "SW-UCRL2": _single(lambda env, mdl, cfg, W, seed: run_baseline(
        "SWUCRL2", env, mdl, cfg.T, W, cfg.delta, seed)),
    "AEC-BORL": _single(lambda env, mdl, cfg, W, seed: aec_borl_run(
        env, mdl, cfg.T, cfg.delta, seed, **_borl_kw(cfg))),
    "BORL": _single(lambda env, mdl, cfg, W, seed: run_baseline(
        "BORL", env, mdl, cfg.T, None, cfg.delta, seed, **_borl_kw(cfg))),
    "WIT-SW-UCRL2": lambda cfg, envs, models, W, seed: wit_swucrl2_run(
        envs, models, len(models), cfg.T, W, cfg.delta, seed, discount=cfg.discount),
    "WIT-BORL": lambda cfg, envs, models, W, seed: wit_borl_run(
        envs, models, len(models), cfg.T, cfg.delta, seed, discount=cfg.discount, **_borl_kw(cfg)),
    "MA-SW-UCRL2": lambda cfg, envs, models, W, seed: run_baseline(
        "MA_SWUCRL2", list(envs), list(models), cfg.T, W, cfg.delta, seed),
    "RANDOM": lambda cfg, envs, models, W, seed: run_baseline(
        "RANDOM", list(envs), list(models), cfg.T, None, cfg.delta, seed),
}


def _borl_kw(cfg: ExperimentConfig) -> dict:
    return {"delta_w_mode": cfg.borl.get("delta_w_mode", "log"),
            "feedback": cfg.borl.get("feedback", "reward")}


def resolve_window(cfg: ExperimentConfig) -> int:
    """Fixed ``W`` or, for ``"auto"``, the budget-based window (largest over sources)."""
    if cfg.W != "auto":
        return int(cfg.W)
    out = []
    multi = cfg.scenario == "nonstat_multi"
    for mdl, sch in zip(cfg.models, cfg.param_schedules):
        vb = variation_budgets(sch, cfg.T)
        S = mdl.n_source_states if multi else mdl.n_full_states
        A = N_ACTIONS if multi else 2
        if vb.V_lambda + vb.V_q == 0:
            out.append(cfg.T)
        else:
            out.append(window_from_budgets(S, A, cfg.T, vb.V_lambda, vb.V_q))
    return max(out)


# --------------------------------------------------------------------------
# running and aggregating


@dataclass
class AggregateResult:
    """``curve`` has columns (t, algorithm, mean_cum_cost, stderr); ``finals`` one row per run."""

    curve: pd.DataFrame
    finals: pd.DataFrame
    W: int | None = None
    tables: dict = field(default_factory=dict)

    def final_means(self) -> dict:
        return self.finals.groupby("algorithm", sort=False)["final_cost"].mean().to_dict()


def aggregate(traces: Sequence[RunTrace]) -> AggregateResult:
    """Mean and standard error over seeds of the source-averaged cumulative cost."""
    by_algo: dict[str, list] = {}
    for tr in traces:
        by_algo.setdefault(tr.algorithm, []).append(tr)
    frames, finals = [], []
    for algo, trs in by_algo.items():
        curves = np.stack([tr.cum_cost_avg for tr in trs])
        n = curves.shape[0]
        mean = curves.mean(axis=0)
        se = curves.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
        frames.append(pd.DataFrame({"t": np.arange(1, curves.shape[1] + 1), "algorithm": algo,
                                    "mean_cum_cost": mean, "stderr": se}))
        finals += [{"algorithm": algo, "seed": tr.seed, "final_cost": tr.final_cost} for tr in trs]
    return AggregateResult(pd.concat(frames, ignore_index=True), pd.DataFrame(finals))


def make_run_envs(cfg: ExperimentConfig, seed: int) -> list[SourceEnv]:
    return make_envs(cfg.models, cfg.param_schedules, cfg.T, seed, cfg.realized_cost)


def run_one(cfg: ExperimentConfig, algorithm: str, seed: int, W: int | None = None) -> RunTrace:
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    W = resolve_window(cfg) if W is None else W
    tr = ALGORITHMS[algorithm](cfg, make_run_envs(cfg, seed), cfg.models, W, seed)
    tr.algorithm = algorithm
    return tr


def solve_tables(cfg: ExperimentConfig) -> dict:
    """Threshold tables of the stationary single-source chain for every configured rate."""
    model = cfg.models[0]
    q = np.asarray(cfg.q if cfg.q is not None else np.ones(model.m) / model.m, dtype=float)
    out = {}
    for lam in cfg.lambdas:
        vf = value_iteration(model, float(lam), q, cfg.discount)
        pol, th, in_K, in_p = extract_policy_and_thresholds(vf, model, float(lam), q)
        out[float(lam)] = {"value": vf, "policy": pol, "thresholds": th, "in_K": in_K, "in_p": in_p}
    return out


def _prepare_out(out_dir) -> Path | None:
    if out_dir is None:
        return None
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    probe = out / ".write-test"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None, algorithms: Sequence[str] | None = None,
                   seeds: Sequence[int] | None = None, write_traces: bool = True,
                   progress: Callable[[str], None] | None = None) -> AggregateResult:
    out = _prepare_out(out_dir if out_dir is not None else cfg.out_dir)
    if cfg.scenario == "stationary_single":
        tables = solve_tables(cfg)
        res = AggregateResult(pd.DataFrame(columns=["t", "algorithm", "mean_cum_cost", "stderr"]),
                              pd.DataFrame(columns=["algorithm", "seed", "final_cost"]), None, tables)
        if out is not None:
            emit_plot_data(res, "threshold_table", out)
        return res
    algorithms = list(algorithms or cfg.algorithms)
    unknown = [a for a in algorithms if a not in ALGORITHMS]
    if unknown:
        raise ValueError(f"unknown algorithms {unknown}")
    seeds = list(seeds if seeds is not None else cfg.seeds)
    W = resolve_window(cfg)
    traces = []
    for algo in algorithms:
        for seed in seeds:
            tr = run_one(cfg, algo, seed, W)
            if progress:
                progress(f"{algo} seed={seed} final={tr.final_cost:.6g}")
            if out is not None and write_traces:
                tdir = out / "traces"
                tdir.mkdir(exist_ok=True)
                tr.frame().to_csv(tdir / f"{algo}_seed{seed}.csv", index=False,
                                  float_format=FLOAT_FORMAT, lineterminator="\n")
                blocks = tr.extra.get("blocks")
                if blocks is not None:
                    blocks.to_csv(tdir / f"{algo}_seed{seed}_blocks.csv", index=False,
                                  float_format=FLOAT_FORMAT, lineterminator="\n")
            traces.append(tr)
    res = aggregate(traces)
    res.W = W
    if out is not None:
        write_aggregate(res, out / "aggregate.csv")
    return res


# --------------------------------------------------------------------------
# files


def write_aggregate(res: AggregateResult, path) -> None:
    res.curve.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_aggregate(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def emit_plot_data(res: AggregateResult, kind: str, out_dir) -> list[Path]:
    """Tidy CSVs: ``cumcost_curve`` -> (t, algorithm, mean, stderr);
    ``threshold_table`` -> (E, C_or_K, threshold, lambda), one file per table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "cumcost_curve":
        df = res.curve.rename(columns={"mean_cum_cost": "mean"})[["t", "algorithm", "mean", "stderr"]]
        path = out / "cumcost_curve.csv"
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return [path]
    if kind == "threshold_table":
        rows = {"K_th": [], "p_th": []}
        for lam, tab in res.tables.items():
            th = tab["thresholds"]
            for E in range(th.K_th.shape[0]):
                for C in range(th.K_th.shape[1]):
                    rows["K_th"].append((E, C, th.K_th[E, C], lam))
                for k in range(th.p_th.shape[1]):
                    rows["p_th"].append((E, k + 1, th.p_th[E, k], lam))
        paths = []
        for name, r in rows.items():
            path = out / f"threshold_{name}.csv"
            pd.DataFrame(r, columns=["E", "C_or_K", "threshold", "lambda"]).to_csv(
                path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
            paths.append(path)
        return paths
    raise ValueError(f"unknown plot-data kind {kind!r}")


def read_plot_data(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")
