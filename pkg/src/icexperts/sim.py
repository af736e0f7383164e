"""Round loop, regret bookkeeping and brute-force benchmarks.

Per round the learner commits to ``S_t`` from its report-derived state, the
agents turn their beliefs into reports, the outcome is revealed, the learner
is updated with the report losses and the trace records the utility of
``S_t`` under the true-belief losses.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import comb

from .errors import CombinatorialBlowupError, ConfigError, DataError
from .ftpl import FTPL, default_step_size
from .noise import get_noise
from .odg import OnlineDistortedGreedy
from .utilities import MODULAR, SUBMODULAR, UtilityKind, alpha_for, quadratic_loss, utility
from .wsu import META_EXPERT_CAP, WSU, MetaWSU, default_wsu_eta, meta_default_eta, wsu_update

ALGORITHMS = ("wsu", "meta-wsu", "ftpl", "odg")
TRACE_COLUMNS = ("t", "algo", "seed", "set", "util_true", "cum_util", "cum_opt", "alpha", "alpha_regret")
AUDIT_COLUMNS = ("t", "expert", "belief", "argmax_report", "deviation", "gap")


# -- environment --------------------------------------------------------------

IID_UNIFORM = "iid-uniform"
SCRIPT = "script"
DATASET = "dataset"
BERNOULLI = "bernoulli"


def read_script(path) -> tuple[np.ndarray, np.ndarray]:
    """Adversarial script: one CSV row per round, ``K`` beliefs then the outcome.

    A header row is allowed if its first cell is not numeric.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                if lineno == 1:
                    continue
                raise DataError(f"{path}:{lineno}: non-numeric entry") from None
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: script is empty")
    widths = {len(r) for r in rows}
    if len(widths) != 1 or widths.pop() < 2:
        raise DataError(f"{path}: rows must all hold K beliefs and one outcome")
    arr = np.array(rows)
    beliefs, outcomes = arr[:, :-1], arr[:, -1]
    if np.any((beliefs < 0) | (beliefs > 1)):
        raise DataError(f"{path}: beliefs outside [0, 1]")
    if np.any((outcomes != 0) & (outcomes != 1)):
        raise DataError(f"{path}: outcomes must be 0 or 1")
    return beliefs, outcomes.astype(int)


def write_script(path, beliefs, outcomes) -> None:
    beliefs = np.asarray(beliefs, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"b{i}" for i in range(beliefs.shape[1])] + ["outcome"])
        for row, r in zip(beliefs, outcomes):
            w.writerow([f"{v:.17g}" for v in row] + [int(r)])


@dataclass
class Environment:
    """Source of beliefs ``(T, K)`` and outcomes ``(T,)``.

    ``belief_source`` is ``iid-uniform``, ``script`` or ``dataset``; the
    outcome source is ``bernoulli`` (drawn from the mean belief), ``script``
    or ``dataset``.  Scripted and dataset sources carry their arrays.
    """

    K: int
    T: int
    belief_source: str = IID_UNIFORM
    outcome_source: str = BERNOULLI
    beliefs: np.ndarray | None = None
    outcomes: np.ndarray | None = None

    def __post_init__(self):
        if self.belief_source not in (IID_UNIFORM, SCRIPT, DATASET):
            raise ConfigError(f"unknown belief source {self.belief_source!r}")
        if self.outcome_source not in (BERNOULLI, SCRIPT, DATASET):
            raise ConfigError(f"unknown outcome source {self.outcome_source!r}")
        if self.belief_source != IID_UNIFORM:
            if self.beliefs is None:
                raise ConfigError(f"{self.belief_source} belief source needs a belief array")
            self.beliefs = np.asarray(self.beliefs, dtype=float)
            if self.beliefs.shape != (self.T, self.K):
                raise ConfigError(f"beliefs have shape {self.beliefs.shape}, expected {(self.T, self.K)}")
        if self.outcome_source != BERNOULLI:
            if self.outcomes is None:
                raise ConfigError(f"{self.outcome_source} outcome source needs an outcome array")
            self.outcomes = np.asarray(self.outcomes, dtype=int)
            if self.outcomes.shape != (self.T,):
                raise ConfigError(f"outcomes have shape {self.outcomes.shape}, expected {(self.T,)}")

    @classmethod
    def from_script(cls, path) -> "Environment":
        beliefs, outcomes = read_script(path)
        T, K = beliefs.shape
        return cls(K, T, SCRIPT, SCRIPT, beliefs, outcomes)

    def realize(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if self.belief_source == IID_UNIFORM:
            beliefs = rng.random((self.T, self.K))
        else:
            beliefs = self.beliefs
        if self.outcome_source == BERNOULLI:
            outcomes = (rng.random(self.T) < beliefs.mean(axis=1)).astype(int)
        else:
            outcomes = self.outcomes
        return beliefs, outcomes


# -- agents -------------------------------------------------------------------

TRUTHFUL = "truthful"
BEST_RESPONSE = "best-response"
UNIFORM_PERTURBED = "uniform-perturbed"
EXTREMIZER = "extremizer"


@dataclass(frozen=True)
class AgentPolicy:
    """How an expert turns a belief into a report.

    ``param`` is the half-width for ``uniform-perturbed`` and the push
    towards the nearer end for ``extremizer``.
    """

    kind: str = TRUTHFUL
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in (TRUTHFUL, BEST_RESPONSE, UNIFORM_PERTURBED, EXTREMIZER):
            raise ConfigError(f"unknown agent policy {self.kind!r}")
        if self.param < 0:
            raise ConfigError("policy parameter must be nonnegative")

    def report(self, beliefs, rng: np.random.Generator, offset=None) -> np.ndarray:
        b = np.asarray(beliefs, dtype=float)
        if self.kind == TRUTHFUL:
            return b.copy()
        if self.kind == UNIFORM_PERTURBED:
            return np.clip(b + rng.uniform(-self.param, self.param, size=b.shape), 0.0, 1.0)
        if self.kind == EXTREMIZER:
            return np.clip(b + self.param * np.sign(b - 0.5), 0.0, 1.0)
        off = 0.0 if offset is None else offset
        return np.clip(b + off, 0.0, 1.0)


# -- algorithms ---------------------------------------------------------------

def build_algorithm(algo: str, K: int, m: int, T: int, kind: str = MODULAR,
                    eta: float | None = None, noise: str = "laplace"):
    """Instantiate a learner with the documented default step sizes."""
    if not 1 <= m <= K:
        raise ConfigError(f"need 1 <= m <= K, got m={m}, K={K}")
    if algo == "wsu":
        if m != 1:
            raise ConfigError("plain WSU selects a single expert; use meta-wsu or odg for m > 1")
        return WSU.uniform(K, default_wsu_eta(K, T) if eta is None else eta)
    if algo == "meta-wsu":
        if eta is None:
            eta = meta_default_eta(K, m, T)
        return MetaWSU(K, m, min(eta, 0.5))
    if algo == "ftpl":
        model = get_noise(noise)
        if eta is None:
            if model.condition1_bound is None:
                raise ConfigError(f"{model.name} noise has no Condition-1 bound; pass eta explicitly")
            eta = default_step_size(model.condition1_bound, T, K, m)
        return FTPL(K, m, eta, model)
    if algo == "odg":
        return OnlineDistortedGreedy(K, m, UtilityKind(kind, m), eta=eta, T=T)
    raise ConfigError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGORITHMS)}")


# -- benchmark ----------------------------------------------------------------

def _set_totals(L: np.ndarray, subsets: np.ndarray, kind: UtilityKind) -> np.ndarray:
    if kind.is_modular:
        col = np.sum(1.0 - L, axis=0)
        return col[subsets].sum(axis=1) / kind.m
    T = L.shape[0]
    out = np.empty(len(subsets))
    for k, S in enumerate(subsets):
        out[k] = T - np.prod(L[:, S], axis=1).sum()
    return out


def brute_force_opt(losses, kind: UtilityKind | str, m: int | None = None, *,
                    fast: bool = True, cap: int = META_EXPERT_CAP, chunk: int = 4096):
    """Best fixed set of ``m`` experts in hindsight and its total utility.

    Ties go to the colexicographically first set.  For modular utility the
    fast path returns the ``m`` experts with the smallest total loss.
    """
    L = np.atleast_2d(np.asarray(losses, dtype=float))
    T, K = L.shape
    if isinstance(kind, str):
        kind = UtilityKind(kind, m)
    m = kind.m if m is None else m
    if not 1 <= m <= K:
        raise ConfigError(f"need 1 <= m <= K, got m={m}, K={K}")
    if kind.is_modular and fast:
        order = np.argsort(L.sum(axis=0), kind="stable")
        S = tuple(sorted(int(i) for i in order[:m]))
        total = float(np.sum(1.0 - L[:, list(S)]) / kind.m)
        return S, total
    n = int(comb(K, m, exact=True))
    if n > cap:
        raise CombinatorialBlowupError(f"C({K},{m}) = {n} sets exceeds the cap of {cap}")
    best_val, best_set = -math.inf, None
    combos = itertools.combinations(range(K), m)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        vals = _set_totals(L, block, kind)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val, best_set = float(vals[k]), tuple(int(i) for i in block[k])
    return best_set, best_val


def prefix_best_modular(losses, m: int) -> np.ndarray:
    """For every ``t``, total modular utility of the best fixed ``m``-set on
    rounds ``1..t``."""
    L = np.atleast_2d(np.asarray(losses, dtype=float))
    cum = np.cumsum(1.0 - L, axis=0)
    top = -np.partition(-cum, m - 1, axis=1)[:, :m]
    return top.sum(axis=1) / m


# -- trace --------------------------------------------------------------------

@dataclass
class RegretTrace:
    """Per-round record of one run plus run metadata."""

    algo: str
    seed: int
    sets: list
    util_true: np.ndarray
    cum_opt: np.ndarray
    alpha: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.util_true = np.asarray(self.util_true, dtype=float)
        self.cum_opt = np.asarray(self.cum_opt, dtype=float)
        self.sets = [tuple(int(i) for i in S) for S in self.sets]

    @property
    def T(self) -> int:
        return self.util_true.size

    @property
    def t(self) -> np.ndarray:
        return np.arange(1, self.T + 1)

    @property
    def cum_util(self) -> np.ndarray:
        return np.cumsum(self.util_true)

    @property
    def alpha_regret(self) -> np.ndarray:
        return self.alpha * self.cum_opt - self.cum_util

    def rows(self):
        """CSV rows in ``TRACE_COLUMNS`` order, floats at full precision."""
        cum_util, areg = self.cum_util, self.alpha_regret
        for k in range(self.T):
            yield [k + 1, self.algo, self.seed, ";".join(str(i) for i in self.sets[k]),
                   f"{self.util_true[k]:.17g}", f"{cum_util[k]:.17g}",
                   f"{self.cum_opt[k]:.17g}", f"{self.alpha:.17g}", f"{areg[k]:.17g}"]

    def write_csv(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            w.writerows(self.rows())
        meta = dict(self.metadata, algo=self.algo, seed=self.seed, alpha=self.alpha)
        path.with_name(path.name + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def read_csv(cls, path) -> "RegretTrace":
        path = Path(path)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
                raise DataError(f"{path}: unexpected trace header {reader.fieldnames}")
            rows = list(reader)
        if not rows:
            raise DataError(f"{path}: empty trace")
        sets = [tuple(int(v) for v in r["set"].split(";")) if r["set"] else () for r in rows]
        util = [float(r["util_true"]) for r in rows]
        cum_opt = [float(r["cum_opt"]) for r in rows]
        meta_path = path.with_name(path.name + ".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        for key in ("algo", "seed", "alpha"):
            meta.pop(key, None)
        return cls(rows[0]["algo"], int(rows[0]["seed"]), sets, util, cum_opt,
                   float(rows[0]["alpha"]), meta)


def alpha_regret(trace: RegretTrace, opt_total: float, alpha: float) -> float:
    """alpha * OPT - cumulative algorithm utility."""
    if not 0 < alpha <= 1:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    return float(alpha * opt_total - trace.cum_util[-1])


# -- incentive audit ----------------------------------------------------------

@dataclass(frozen=True)
class AuditResult:
    argmax_report: float
    deviation: float
    gap: float
    truthful_value: float
    best_value: float


def audit_grid(belief: float, step: float = 1e-3) -> np.ndarray:
    """Grid of ``[0, 1]`` with spacing ``step`` that also contains ``belief``."""
    n = int(round(1.0 / step))
    grid = np.linspace(0.0, 1.0, n + 1)
    return np.union1d(grid, [belief])


def expected_selection_curve(algo, expert: int, belief: float, reports, grid, *,
                             samples: int = 20_000, rng=None, picks=None,
                             objective: str = "weight", instance: int | None = None) -> np.ndarray:
    """Expected next-round selection weight of ``expert`` for each report on
    ``grid``; exact for the WSU family and ODG, Monte Carlo for FTPL.

    For ODG, ``objective="weight"`` sums the instances' weights on the expert
    (or takes one instance's weight when ``instance`` is given) and
    ``objective="inclusion"`` uses the probability of landing in the set.
    """
    grid = np.asarray(grid, dtype=float)
    reports = np.array(reports, dtype=float)
    if isinstance(algo, FTPL):
        return algo.expected_selection_curve(expert, belief, reports, grid, samples=samples, rng=rng)
    if isinstance(algo, WSU):
        return _wsu_curve(algo.weights, algo.eta, expert, belief, reports, grid)
    if isinstance(algo, OnlineDistortedGreedy):
        if objective == "inclusion":
            return algo.expected_inclusion_curve(expert, reports, belief, grid, picks=picks)
        if objective != "weight":
            raise ConfigError(f"unknown audit objective {objective!r}")
        return algo.expected_next_weight_curve(expert, reports, belief, grid, picks=picks, instance=instance)
    out = np.empty(grid.size)
    for k, p in enumerate(grid):
        reports[expert] = p
        out[k] = algo.expected_next_weight(expert, reports, belief)
    return out


def _wsu_curve(w, eta, expert, belief, reports, grid) -> np.ndarray:
    # pi_i (1 - eta (l_i - pi.l)) with the expert's own loss varying over the grid
    w = np.asarray(w, dtype=float)
    others = np.delete(np.arange(w.size), expert)
    out = np.zeros(grid.size)
    for r, pr in ((0, 1.0 - belief), (1, belief)):
        if pr == 0:
            continue
        rest = float(np.dot(w[others], quadratic_loss(reports[others], r)))
        own = np.square(grid - r)
        L = own - (w[expert] * own + rest)
        out += pr * w[expert] * (1.0 - eta * L)
    return out


def ic_audit(algo, expert: int, belief: float, reports, *, step: float = 1e-3,
             samples: int = 20_000, rng=None, picks=None, objective: str = "weight",
             instance: int | None = None) -> AuditResult:
    """Sweep the expert's report and locate the one maximizing her expected
    next-round selection weight, holding history and the others' reports."""
    if not 0.0 <= belief <= 1.0:
        raise ValueError("belief outside [0, 1]")
    grid = audit_grid(belief, step)
    curve = expected_selection_curve(algo, expert, belief, reports, grid, samples=samples, rng=rng,
                                     picks=picks, objective=objective, instance=instance)
    k = int(np.argmax(curve))
    truthful = float(curve[np.searchsorted(grid, belief)])
    p = float(grid[k])
    return AuditResult(p, abs(p - belief), float(curve[k]) - truthful, truthful, float(curve[k]))


def write_audit_csv(path, records) -> None:
    """``records`` are ``(t, expert, belief, AuditResult)`` tuples."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(AUDIT_COLUMNS)
        for t, expert, belief, res in records:
            w.writerow([t, expert, f"{belief:.17g}", f"{res.argmax_report:.17g}",
                        f"{res.deviation:.17g}", f"{res.gap:.17g}"])


# -- experiment ---------------------------------------------------------------

@dataclass
class SimConfig:
    algo: str = "ftpl"
    K: int = 10
    m: int = 1
    T: int = 512
    kind: str = MODULAR
    eta: float | None = None
    noise: str = "laplace"
    policy: AgentPolicy = field(default_factory=AgentPolicy)
    strategic: tuple = ()
    seed: int = 0
    audit_every: int = 16
    audit_samples: int = 2_000
    audit_step: float = 1e-3

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}")
        if self.kind not in (MODULAR, SUBMODULAR):
            raise ConfigError(f"unknown utility kind {self.kind!r}")
        if not 1 <= self.m <= self.K:
            raise ConfigError(f"need 1 <= m <= K, got m={self.m}, K={self.K}")
        if self.T < 1:
            raise ConfigError("horizon must be positive")
        if self.audit_every < 1:
            raise ConfigError("audit_every must be positive")


def _policies(config: SimConfig) -> list[AgentPolicy]:
    """``strategic`` lists the experts following ``policy``; empty means all."""
    if not config.strategic:
        return [config.policy] * config.K
    out = [AgentPolicy()] * config.K
    for i in config.strategic:
        if not 0 <= i < config.K:
            raise ConfigError(f"strategic expert {i} out of range")
        out[i] = config.policy
    return out


def run_experiment(config: SimConfig, environment: Environment | None = None,
                   audit_log: list | None = None) -> RegretTrace:
    """One seeded run; ``audit_log`` collects best-response audits if given."""
    env = environment or Environment(config.K, config.T)
    if (env.K, env.T) != (config.K, config.T):
        raise ConfigError(f"environment is {env.T}x{env.K}, config asks for {config.T}x{config.K}")
    env_ss, agent_ss, algo_ss, audit_ss = np.random.SeedSequence(config.seed).spawn(4)
    beliefs, outcomes = env.realize(np.random.default_rng(env_ss))
    agent_rng = np.random.default_rng(agent_ss)
    algo_rng = np.random.default_rng(algo_ss)
    audit_rng = np.random.default_rng(audit_ss)

    algo = build_algorithm(config.algo, config.K, config.m, config.T, config.kind, config.eta, config.noise)
    kind = UtilityKind(config.kind, config.m)
    policies = _policies(config)
    offsets = np.zeros(config.K)

    true_losses = quadratic_loss(beliefs, outcomes[:, None])
    sets, util = [], np.empty(config.T)
    for t in range(config.T):
        S = algo.select(algo_rng)
        b = beliefs[t]
        reports = np.empty(config.K)
        for i, pol in enumerate(policies):
            if pol.kind == BEST_RESPONSE and t % config.audit_every == 0:
                # the others' reports are not known yet; audit against their beliefs
                res = ic_audit(algo, i, float(b[i]), b, step=config.audit_step,
                               samples=config.audit_samples, rng=audit_rng,
                               picks=getattr(algo, "last_picks", None))
                offsets[i] = res.argmax_report - b[i]
                if audit_log is not None:
                    audit_log.append((t + 1, i, float(b[i]), res))
            reports[i] = pol.report(b[i:i + 1], agent_rng, offsets[i])[0]
        algo.update(quadratic_loss(reports, outcomes[t]))
        sets.append(S)
        util[t] = utility(kind, S, true_losses[t])

    opt_set, _ = brute_force_opt(true_losses, kind)
    per_round_opt = np.array([utility(kind, opt_set, row) for row in true_losses])
    alpha = alpha_for(kind, true_losses)
    meta = {
        "eta": float(algo.eta), "noise": config.noise if config.algo == "ftpl" else None,
        "m": config.m, "K": config.K, "kind": config.kind, "policy": config.policy.kind,
        "policy_param": config.policy.param, "opt_set": list(opt_set),
    }
    if isinstance(algo, OnlineDistortedGreedy):
        meta["instance_regrets"] = algo.instance_regrets().tolist()
    return RegretTrace(config.algo, config.seed, sets, util, np.cumsum(per_round_opt), alpha, meta)


# -- plain WSU on a loss matrix -----------------------------------------------

@dataclass(frozen=True)
class WSURun:
    regret: float
    algo_loss: float
    best_loss: float
    eta: float


def wsu_expected_run(losses, eta: float) -> WSURun:
    """Run WSU on a ``(T, K)`` loss matrix and report expected-loss regret.

    ``algo_loss`` is ``|L_T| = sum_t pi_t . l_t`` and ``best_loss`` is the
    best expert's cumulative loss ``|L_T*|``.
    """
    L = np.atleast_2d(np.asarray(losses, dtype=float))
    w = np.full(L.shape[1], 1.0 / L.shape[1])
    algo_loss = 0.0
    for row in L:
        algo_loss += float(np.dot(w, row))
        w = wsu_update(w, row, eta)
    best = float(L.sum(axis=0).min())
    return WSURun(algo_loss - best, algo_loss, best, eta)


def wsu_adaptive_run(losses, passes: int = 3) -> WSURun:
    """WSU tuned to its own loss scale, ``eta = min(1/2, sqrt(ln K / (|L_T| + |L_T*|)))``.

    The scale is unknown before the run, so it is found by re-running with
    the scale measured on the previous pass.
    """
    L = np.atleast_2d(np.asarray(losses, dtype=float))
    K = L.shape[1]
    best = float(L.sum(axis=0).min())
    scale = 2.0 * max(best, 1.0)
    run = None
    for _ in range(passes):
        eta = min(0.5, math.sqrt(math.log(K) / scale))
        run = wsu_expected_run(L, eta)
        scale = max(run.algo_loss + run.best_loss, 1.0)
    return run
