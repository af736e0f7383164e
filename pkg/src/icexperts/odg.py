"""Online distorted greedy: ``m`` WSU instances, one per position.

Instance ``i`` picks ``v_i`` outside the prefix ``S_{i-1}`` and is rewarded
with ``(1 - 1/m)^(m-i) g_t(v | S_{i-1}) + h_t(v)``, where ``h_t`` is the
modular lower bound of ``f_t`` and ``g_t = f_t - h_t``.  Each instance is fed
the loss ``1 - reward``.

For every expert ``j`` that reward equals ``c_j * (1 - l_j)`` with a
coefficient ``c_j`` that does not involve ``l_j``; the loss is computed as
``1 - c_j + c_j * l_j`` so that a single instance with ``c_j = 1`` sees the
raw losses bit for bit.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import ConfigError
from .utilities import SUBMODULAR, UtilityKind, leave_one_out_products, product, quadratic_loss
from .wsu import WSU, default_wsu_eta, wsu_update


def discount_factor(m: int, i: int) -> float:
    """(1 - 1/m)^(m - i) for positions ``1 <= i <= m``."""
    if not 1 <= i <= m:
        raise IndexError(f"position {i} outside 1..{m}")
    return (1.0 - 1.0 / m) ** (m - i)


def reward_coefficients(loss_row, prefix, m: int, i: int, kind: UtilityKind) -> np.ndarray:
    """``c_j`` such that instance ``i``'s reward for expert ``j`` is ``c_j (1 - l_j)``.

    ``prefix`` is ``S_{i-1}``.  Members of the prefix have zero residual
    marginal, so only their ``h_t`` term survives.
    """
    row = np.asarray(loss_row, dtype=float)
    K = row.size
    if kind.is_modular:
        return np.full(K, 1.0 / kind.m)
    d = discount_factor(m, i)
    loo = leave_one_out_products(row)
    prefix = list(prefix)
    c = d * product(row[prefix]) + (1.0 - d) * loo
    if prefix:
        c[prefix] = loo[prefix]
    return c


def instance_loss_row(loss_row, prefix, m: int, i: int, kind: UtilityKind) -> np.ndarray:
    """Loss ``1 - c_j + c_j l_j`` fed to instance ``i`` for every expert ``j``."""
    row = np.asarray(loss_row, dtype=float)
    c = reward_coefficients(row, prefix, m, i, kind)
    return (1.0 - c) + c * row


def instance_rewards(loss_row, prefix, m: int, i: int, kind: UtilityKind) -> np.ndarray:
    row = np.asarray(loss_row, dtype=float)
    return reward_coefficients(row, prefix, m, i, kind) * (1.0 - row)


def conditional_sample(weights, excluded, rng: np.random.Generator) -> int:
    """Draw from ``weights`` restricted to indices outside ``excluded``.

    Same law as resampling until the draw falls outside ``excluded``.
    """
    w = np.array(weights, dtype=float)
    if excluded:
        w[list(excluded)] = 0.0
    if w.sum() <= 0.0:
        # every remaining weight underflowed; fall back to uniform
        w = np.ones_like(w)
        if excluded:
            w[list(excluded)] = 0.0
    cdf = np.cumsum(w)
    u = rng.random() * cdf[-1]
    j = int(np.searchsorted(cdf, u, side="right"))
    if j >= w.size:
        j = int(np.flatnonzero(w > 0)[-1])
    return j


def instance_loss_rows(loss_rows, prefix, m: int, i: int, kind: UtilityKind) -> np.ndarray:
    """Row-wise ``instance_loss_row`` for a ``(G, K)`` stack of loss rows."""
    rows = np.atleast_2d(np.asarray(loss_rows, dtype=float))
    if kind.is_modular:
        c = np.full(rows.shape, 1.0 / kind.m)
    else:
        K = rows.shape[1]
        # leave-one-out products by masking the diagonal with ones
        masked = np.where(np.eye(K, dtype=bool)[None, :, :], 1.0, rows[:, None, :])
        loo = np.prod(masked, axis=2)
        d = discount_factor(m, i)
        prefix = list(prefix)
        c = d * np.prod(rows[:, prefix], axis=1, keepdims=True) + (1.0 - d) * loo
        if prefix:
            c[:, prefix] = loo[:, prefix]
    return (1.0 - c) + c * rows


class OnlineDistortedGreedy:
    """m position-wise WSU instances over ``K`` experts."""

    def __init__(self, K: int, m: int, kind: UtilityKind | str = SUBMODULAR,
                 eta: float | None = None, T: int | None = None):
        if not 1 <= m <= K:
            raise ConfigError(f"need 1 <= m <= K, got m={m}, K={K}")
        if isinstance(kind, str):
            kind = UtilityKind(kind, m)
        if eta is None:
            if T is None:
                raise ConfigError("give either eta or the horizon T")
            eta = default_wsu_eta(K, T)
        self.K, self.m, self.kind = K, m, kind
        self.instances = [WSU.uniform(K, eta) for _ in range(m)]
        self.cum_rewards = np.zeros((m, K))
        self.cum_picked = np.zeros(m)
        self.cum_abs_loss = np.zeros(m)
        self.last_picks: tuple[int, ...] | None = None

    @property
    def eta(self) -> float:
        return self.instances[0].eta

    def weight_matrix(self) -> np.ndarray:
        return np.vstack([inst.weights for inst in self.instances])

    def select_picks(self, rng: np.random.Generator) -> tuple[int, ...]:
        picks: list[int] = []
        for inst in self.instances:
            picks.append(conditional_sample(inst.weights, picks, rng))
        return tuple(picks)

    def select(self, rng: np.random.Generator) -> tuple[int, ...]:
        self.last_picks = self.select_picks(rng)
        return tuple(sorted(self.last_picks))

    def feedback(self, loss_row, picks) -> None:
        """Update every instance with its distorted-greedy loss row."""
        picks = tuple(int(v) for v in picks)
        if len(set(picks)) != len(picks) or len(picks) != self.m:
            raise ValueError(f"picks must be {self.m} distinct experts, got {picks}")
        row = np.asarray(loss_row, dtype=float)
        for i, inst in enumerate(self.instances, start=1):
            prefix = picks[: i - 1]
            c = reward_coefficients(row, prefix, self.m, i, self.kind)
            reward = c * (1.0 - row)
            self.cum_rewards[i - 1] += reward
            self.cum_picked[i - 1] += reward[picks[i - 1]]
            self.cum_abs_loss[i - 1] += float(np.dot(inst.weights, reward))
            inst.update((1.0 - c) + c * row)

    def update(self, loss_row) -> None:
        if self.last_picks is None:
            raise RuntimeError("select() must run before update()")
        self.feedback(loss_row, self.last_picks)
        self.last_picks = None

    def instance_regrets(self) -> np.ndarray:
        """Realized regret of each instance against its best fixed expert."""
        return self.cum_rewards.max(axis=1) - self.cum_picked

    def next_instance_weight(self, i: int, expert: int, loss_row, picks) -> float:
        """Instance ``i`` (1-based) weight on ``expert`` after feedback with ``loss_row``."""
        prefix = tuple(picks)[: i - 1]
        inst = self.instances[i - 1]
        return float(wsu_update(inst.weights, instance_loss_row(loss_row, prefix, self.m, i, self.kind),
                                inst.eta)[expert])

    def expected_next_weight(self, expert: int, reports, r_prob: float, picks=None) -> float:
        """Sum over instances of the expected next weight on ``expert``,
        conditional on this round's picks."""
        picks = self.last_picks if picks is None else picks
        if picks is None:
            raise RuntimeError("no picks available for this round")
        reports = np.asarray(reports, dtype=float)
        out = 0.0
        for r, pr in ((0, 1.0 - r_prob), (1, r_prob)):
            if pr == 0:
                continue
            row = quadratic_loss(reports, r)
            for i in range(1, self.m + 1):
                out += pr * self.next_instance_weight(i, expert, row, picks)
        return out


    def expected_next_weight_curve(self, expert: int, reports, r_prob: float, grid,
                                   picks=None, instance: int | None = None) -> np.ndarray:
        """``expected_next_weight`` for every report of ``expert`` on ``grid``.

        With ``instance`` (1-based) only that instance's weight is counted.
        """
        picks = self.last_picks if picks is None else picks
        if picks is None:
            raise RuntimeError("no picks available for this round")
        if instance is not None and not 1 <= instance <= self.m:
            raise IndexError(f"instance {instance} outside 1..{self.m}")
        grid = np.asarray(grid, dtype=float)
        rows = np.tile(np.asarray(reports, dtype=float), (grid.size, 1))
        rows[:, expert] = grid
        out = np.zeros(grid.size)
        for r, pr in ((0, 1.0 - r_prob), (1, r_prob)):
            if pr == 0:
                continue
            losses = np.square(rows - r)
            for i, inst in enumerate(self.instances, start=1):
                if instance is not None and i != instance:
                    continue
                w = inst.weights
                inst_loss = instance_loss_rows(losses, tuple(picks)[: i - 1], self.m, i, self.kind)
                rel = inst_loss[:, expert] - inst_loss @ w / w.sum()
                out += pr * w[expert] * (1.0 - inst.eta * rel)
        return out


    def expected_inclusion_curve(self, expert: int, reports, r_prob: float, grid,
                                 picks=None) -> np.ndarray:
        """Expected next-round probability that ``expert`` lands in ``S_{t+1}``
        under sequential conditioned sampling, for every report on ``grid``."""
        picks = self.last_picks if picks is None else picks
        if picks is None:
            raise RuntimeError("no picks available for this round")
        reports = np.array(reports, dtype=float)
        out = np.zeros(len(grid))
        for k, p in enumerate(grid):
            reports[expert] = p
            for r, pr in ((0, 1.0 - r_prob), (1, r_prob)):
                if pr == 0:
                    continue
                row = quadratic_loss(reports, r)
                W = np.vstack([self.next_instance_weights(i, row, picks) for i in range(1, self.m + 1)])
                out[k] += pr * inclusion_probabilities(W)[expert]
        return out

    def next_instance_weights(self, i: int, loss_row, picks) -> np.ndarray:
        inst = self.instances[i - 1]
        return wsu_update(inst.weights, instance_loss_row(loss_row, tuple(picks)[: i - 1], self.m, i, self.kind),
                          inst.eta)


def odg_round_reward_sum(loss_row, picks, m: int, kind: UtilityKind) -> float:
    """Sum over positions of the reward each instance earned for its pick.

    Bounded by ``f_t(S_t)`` and hence by 1.
    """
    row = np.asarray(loss_row, dtype=float)
    total = 0.0
    for i in range(1, m + 1):
        total += float(instance_rewards(row, picks[: i - 1], m, i, kind)[picks[i - 1]])
    return total


def inclusion_probabilities(weight_matrix, exact_limit: int = 200_000, samples: int = 100_000,
                            rng=None) -> np.ndarray:
    """Pr[j in S] under sequential conditioned sampling from the rows of
    ``weight_matrix``.  Exact enumeration of ordered picks when there are at
    most ``exact_limit`` of them, Monte Carlo otherwise."""
    W = np.asarray(weight_matrix, dtype=float)
    m, K = W.shape
    n_paths = 1
    for i in range(m):
        n_paths *= K - i
    out = np.zeros(K)
    if n_paths <= exact_limit:
        for path in itertools.permutations(range(K), m):
            prob = 1.0
            used: list[int] = []
            for i, v in enumerate(path):
                row = W[i]
                denom = row.sum() - row[used].sum()
                prob *= row[v] / denom if denom > 0 else 0.0
                used.append(v)
                if prob == 0.0:
                    break
            out[list(path)] += prob
        return out
    rng = np.random.default_rng(rng)
    for _ in range(samples):
        picks: list[int] = []
        for i in range(m):
            picks.append(conditional_sample(W[i], picks, rng))
        out[picks] += 1.0
    return out / samples
