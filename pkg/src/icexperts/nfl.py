"""Forecast-competition experiment: average regret of FTPL and ODG on groups
of complete forecasters, with 20th/80th percentile bands.

Average regret at round ``t`` is the best fixed m-set's utility over rounds
``1..t`` minus the algorithm's cumulative utility, divided by ``t``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import ForecastDataset
from .errors import ConfigError, DataError
from .ftpl import default_step_size, ic_deviation_bound
from .sim import DATASET, AgentPolicy, Environment, SimConfig, prefix_best_modular, run_experiment
from .utilities import MODULAR, quadratic_loss

BAND_COLUMNS = ("t", "mean", "p20", "p80")
GROUP_COLUMNS = ("algo", "group", "t", "mean")
NFL_ALGOS = ("ftpl", "odg")


@dataclass
class ExperimentConfig:
    """Defaults: m=5, 5 groups, 10 runs per group."""

    algorithms: tuple = NFL_ALGOS
    kind: str = MODULAR
    K: int = 20
    m: int = 5
    T: int | None = None
    eta: float | None = None
    noise: str = "laplace"
    B: float = 1.0
    seed: int = 0
    groups: int = 5
    runs: int = 10

    def __post_init__(self):
        self.algorithms = tuple(self.algorithms)
        bad = [a for a in self.algorithms if a not in NFL_ALGOS]
        if bad:
            raise ConfigError(f"unsupported algorithm(s) for the forecast pipeline: {bad}")
        if not 1 <= self.m <= self.K:
            raise ConfigError(f"need 1 <= m <= K, got m={self.m}, K={self.K}")
        if self.groups < 1 or self.runs < 1:
            raise ConfigError("groups and runs must be positive")


@dataclass
class NFLResult:
    config: ExperimentConfig
    T: int
    groups: list                    # forecaster ids per group
    disjoint: bool
    avg_regret: dict = field(default_factory=dict)   # algo -> (groups, runs, T)
    eta: dict = field(default_factory=dict)
    perturbation: float = 0.0

    def band(self, algo: str) -> np.ndarray:
        """``(T, 4)`` rows of (t, mean, p20, p80) over all group x run traces."""
        R = self.avg_regret[algo].reshape(-1, self.T)
        t = np.arange(1, self.T + 1)
        return np.column_stack([t, R.mean(axis=0), np.percentile(R, 20, axis=0), np.percentile(R, 80, axis=0)])

    def group_means(self, algo: str) -> np.ndarray:
        """``(groups, T)`` mean average regret of each group."""
        return self.avg_regret[algo].mean(axis=1)

    def metadata(self) -> dict:
        return {
            "config": asdict(self.config),
            "T": self.T,
            "eta": self.eta,
            "ftpl_report_perturbation": self.perturbation,
            "perturbation_redrawn_each_round": True,
            "groups_disjoint": self.disjoint,
            "groups": self.groups,
            "average_regret": "(best fixed m-set utility over rounds 1..t - cumulative utility) / t, "
                              "utilities on true beliefs",
        }

    def write(self, outdir) -> list[Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        written = []
        for algo in self.avg_regret:
            p = outdir / f"band_{algo}_K{self.config.K}.csv"
            write_band_csv(p, self.band(algo))
            written.append(p)
        p = outdir / f"groups_K{self.config.K}.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(GROUP_COLUMNS)
            for algo in self.avg_regret:
                for g, row in enumerate(self.group_means(algo)):
                    for t, v in enumerate(row, start=1):
                        w.writerow([algo, g, t, f"{v:.17g}"])
        written.append(p)
        p = outdir / f"metadata_K{self.config.K}.json"
        p.write_text(json.dumps(self.metadata(), indent=2, sort_keys=True))
        written.append(p)
        return written


def write_band_csv(path, band) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(BAND_COLUMNS)
        for row in band:
            w.writerow([int(row[0])] + [f"{v:.17g}" for v in row[1:]])


def read_band_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != BAND_COLUMNS:
            raise DataError(f"{path}: unexpected band header {header}")
        rows = [[float(v) for v in rec] for rec in reader if rec]
    return np.array(rows)


def sample_groups(forecasters, K: int, groups: int, rng: np.random.Generator):
    """Disjoint groups when there are enough forecasters, otherwise each group
    is an independent draw without replacement.  Returns ``(groups, disjoint)``."""
    n = len(forecasters)
    if K > n:
        raise DataError(f"need K={K} forecasters, only {n} are complete")
    if K * groups <= n:
        perm = rng.permutation(n)
        picked = [perm[g * K:(g + 1) * K] for g in range(groups)]
        disjoint = True
    else:
        picked = [rng.choice(n, size=K, replace=False) for _ in range(groups)]
        disjoint = False
    return [[forecasters[i] for i in sorted(idx)] for idx in picked], disjoint


def average_regret(trace, true_losses, m: int) -> np.ndarray:
    t = np.arange(1, trace.T + 1)
    return (prefix_best_modular(true_losses, m) - trace.cum_util) / t


def run_nfl_experiment(config: ExperimentConfig, dataset: ForecastDataset, rng=None) -> NFLResult:
    """Run every algorithm ``runs`` times on each of ``groups`` forecaster groups."""
    if config.kind != MODULAR:
        raise ConfigError("the forecast pipeline uses modular utility")
    T = dataset.T if config.T is None else config.T
    if T > dataset.T:
        raise ConfigError(f"horizon T={T} exceeds the {dataset.T} games available")
    ss = np.random.SeedSequence(config.seed if rng is None else rng)
    group_ss, run_ss = ss.spawn(2)
    groups, disjoint = sample_groups(dataset.forecasters, config.K, config.groups,
                                     np.random.default_rng(group_ss))
    outcomes = dataset.outcomes()[:T]

    ftpl_eta = config.eta if config.eta is not None else default_step_size(config.B, T, config.K, config.m)
    delta = ic_deviation_bound(config.B, ftpl_eta)
    result = NFLResult(config, T, groups, disjoint, perturbation=delta)
    seeds = run_ss.generate_state(config.groups * config.runs * len(config.algorithms))
    k = 0
    for algo in config.algorithms:
        R = np.empty((config.groups, config.runs, T))
        for g, members in enumerate(groups):
            beliefs = dataset.belief_matrix(members)[:T]
            true_losses = quadratic_loss(beliefs, outcomes[:, None])
            env = Environment(config.K, T, DATASET, DATASET, beliefs, outcomes)
            for r in range(config.runs):
                if algo == "ftpl":
                    sim = SimConfig("ftpl", config.K, config.m, T, MODULAR, ftpl_eta, config.noise,
                                    AgentPolicy("uniform-perturbed", delta), seed=int(seeds[k]))
                else:
                    sim = SimConfig("odg", config.K, config.m, T, MODULAR, None, config.noise,
                                    AgentPolicy("truthful"), seed=int(seeds[k]))
                k += 1
                trace = run_experiment(sim, env)
                result.eta[algo] = float(trace.metadata["eta"])
                R[g, r] = average_regret(trace, true_losses, config.m)
        result.avg_regret[algo] = R
    return result
