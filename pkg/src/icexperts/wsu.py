"""Weighted-Score Update and the meta-expert reduction.

WSU keeps a probability vector over experts and updates it with the payments
of the weighted-score wagering mechanism, treating the current weights as
wagers.  Because the mechanism is budget balanced the weights never need
renormalizing.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb

from .errors import CombinatorialBlowupError, ConfigError, DomainError, StepSizeError
from .utilities import quadratic_loss

# largest number of meta-experts the reduction will enumerate
META_EXPERT_CAP = 2_000_000

_DRIFT_TOL = 1e-9


def wswm_payment(reports, wagers, r) -> np.ndarray:
    """Weighted-score wagering mechanism payments for a single event.

    ``Gamma_i = w_i * (1 - l_i + sum_j w_j l_j / sum_j w_j)``.  With wagers
    that sum to one this is the textbook form; dividing by the total keeps
    the mechanism budget balanced for arbitrary nonnegative wagers.
    """
    w = np.asarray(wagers, dtype=float)
    if np.any(w < 0):
        raise DomainError("wagers must be nonnegative")
    losses = quadratic_loss(np.asarray(reports, dtype=float), r)
    total = w.sum()
    if total == 0.0:
        return np.zeros_like(w)
    return w * (1.0 - losses + np.dot(w, losses) / total)


def relative_losses(weights, loss_row) -> np.ndarray:
    """L_i = l_i - sum_j pi_j l_j.

    The reference term is divided by ``sum(pi)``, which is 1 up to rounding.
    Without it a rounding error in the total grows by a factor
    ``1 + eta * pi.l`` per step; with it the total is an exact invariant.
    """
    weights = np.asarray(weights, dtype=float)
    loss_row = np.asarray(loss_row, dtype=float)
    return loss_row - np.dot(weights, loss_row) / weights.sum()


def wsu_update(weights, loss_row, eta: float) -> np.ndarray:
    """One WSU step, ``pi_i * (1 - eta * L_i)``.  Returns a new array."""
    weights = np.asarray(weights, dtype=float)
    L = relative_losses(weights, loss_row)
    if eta * np.max(np.abs(L)) >= 1.0:
        raise StepSizeError(f"eta * max|L| = {eta * np.max(np.abs(L)):.4g} >= 1")
    new = weights * (1.0 - eta * L)
    s = new.sum()
    if abs(s - 1.0) > _DRIFT_TOL:
        raise AssertionError(f"WSU weights drifted off the simplex (sum={s!r})")
    return new


def sample_index(weights, rng: np.random.Generator) -> int:
    """Inverse-cdf draw over indices in ascending order."""
    cdf = np.cumsum(weights)
    u = rng.random() * cdf[-1]
    i = int(np.searchsorted(cdf, u, side="right"))
    if i >= len(cdf):
        i = int(np.flatnonzero(np.asarray(weights) > 0)[-1])
    return i


def default_wsu_eta(K: int, T: int) -> float:
    """min(1/2, sqrt(ln K / T))."""
    if K < 2:
        return 0.5
    return min(0.5, math.sqrt(math.log(K) / T))


def adaptive_step_size(abs_loss_total: float, K: int) -> float:
    """min(1/2, sqrt(ln K / (|L_T| + |L_T*|))) for a known loss scale."""
    if abs_loss_total <= 0:
        return 0.5
    return min(0.5, math.sqrt(math.log(K) / abs_loss_total))


def adaptive_regret_bound(cumulative_abs_loss: float, K: int) -> float:
    """sqrt(|L_T| ln K) + ln K, with unit constants."""
    if cumulative_abs_loss < 0:
        raise ValueError("cumulative absolute loss must be nonnegative")
    lnK = math.log(K)
    return math.sqrt(cumulative_abs_loss * lnK) + lnK


@dataclass
class WSU:
    """WSU over ``n`` experts with a fixed step size."""

    weights: np.ndarray
    eta: float
    m: int = field(default=1, init=False)

    @classmethod
    def uniform(cls, n: int, eta: float) -> "WSU":
        if not 0 < eta < 1:
            raise StepSizeError(f"WSU step size must lie in (0, 1), got {eta}")
        return cls(np.full(n, 1.0 / n), eta)

    @property
    def K(self) -> int:
        return self.weights.size

    def select(self, rng: np.random.Generator) -> tuple[int, ...]:
        return (sample_index(self.weights, rng),)

    def update(self, loss_row) -> None:
        self.weights = wsu_update(self.weights, loss_row, self.eta)

    def next_weights(self, loss_row) -> np.ndarray:
        return wsu_update(self.weights, loss_row, self.eta)

    def expected_next_weight(self, expert: int, reports, r_prob: float) -> float:
        """E_{r ~ Bern(r_prob)} of expert's next weight given these reports."""
        reports = np.asarray(reports, dtype=float)
        out = 0.0
        for r, pr in ((0, 1.0 - r_prob), (1, r_prob)):
            if pr > 0:
                out += pr * self.next_weights(quadratic_loss(reports, r))[expert]
        return out


# -- meta-experts -------------------------------------------------------------

class MetaIndex:
    """Colexicographic ranking of the size-``m`` subsets of ``range(K)``."""

    def __init__(self, K: int, m: int):
        if not 1 <= m <= K:
            raise ConfigError(f"need 1 <= m <= K, got m={m}, K={K}")
        self.K, self.m = K, m
        self.size = int(comb(K, m, exact=True))

    def rank(self, S) -> int:
        members = sorted(S)
        if len(members) != self.m:
            raise ValueError(f"expected a set of size {self.m}")
        return sum(int(comb(c, i + 1, exact=True)) for i, c in enumerate(members))

    def unrank(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.size:
            raise IndexError(index)
        out = []
        c = self.K - 1
        for i in range(self.m, 0, -1):
            while comb(c, i, exact=True) > index:
                c -= 1
            out.append(c)
            index -= comb(c, i, exact=True)
            c -= 1
        return tuple(sorted(out))

    def all_subsets(self) -> np.ndarray:
        """``(size, m)`` array; row ``k`` is ``unrank(k)``."""
        out = np.empty((self.size, self.m), dtype=np.int64)
        # colex order: generate combinations of reversed lexicographic by max element
        row = list(range(self.m))
        for k in range(self.size):
            out[k] = row
            # next colex combination
            i = 0
            while i < self.m - 1 and row[i] + 1 == row[i + 1]:
                row[i] = i
                i += 1
            row[i] += 1
        return out


def meta_default_eta(K: int, m: int, T: int) -> float:
    """sqrt(m ln(Ke/m) / T); warns when T < 4 m ln(Ke/m)."""
    c = m * math.log(K * math.e / m)
    if T < 4 * c:
        warnings.warn(
            f"horizon T={T} is shorter than 4 m ln(Ke/m) = {4 * c:.1f}; "
            "the default meta-WSU step size is outside its analysed regime",
            RuntimeWarning,
            stacklevel=2,
        )
    return math.sqrt(c / T)


class MetaWSU:
    """WSU over all size-``m`` subsets, each treated as a single expert whose
    loss is the mean loss of its members."""

    def __init__(self, K: int, m: int, eta: float, cap: int = META_EXPERT_CAP):
        n = int(comb(K, m, exact=True))
        if n > cap:
            raise CombinatorialBlowupError(
                f"C({K},{m}) = {n} meta-experts exceeds the cap of {cap}"
            )
        self.K, self.m = K, m
        self.index = MetaIndex(K, m)
        self.subsets = self.index.all_subsets()
        self.inner = WSU.uniform(n, eta)

    @property
    def eta(self) -> float:
        return self.inner.eta

    @property
    def weights(self) -> np.ndarray:
        return self.inner.weights

    def meta_losses(self, loss_row) -> np.ndarray:
        return np.asarray(loss_row, dtype=float)[self.subsets].mean(axis=1)

    def select(self, rng: np.random.Generator) -> tuple[int, ...]:
        k = sample_index(self.inner.weights, rng)
        return tuple(int(i) for i in self.subsets[k])

    def update(self, loss_row) -> None:
        self.inner.update(self.meta_losses(loss_row))

    def inclusion_probabilities(self, weights=None) -> np.ndarray:
        w = self.inner.weights if weights is None else weights
        out = np.zeros(self.K)
        np.add.at(out, self.subsets.ravel(), np.repeat(w, self.m))
        return out

    def expected_next_weight(self, expert: int, reports, r_prob: float) -> float:
        """Expected next-round probability that ``expert`` is in the chosen set."""
        reports = np.asarray(reports, dtype=float)
        out = 0.0
        for r, pr in ((0, 1.0 - r_prob), (1, r_prob)):
            if pr > 0:
                nxt = self.inner.next_weights(self.meta_losses(quadratic_loss(reports, r)))
                out += pr * self.inclusion_probabilities(nxt)[expert]
        return out


def meta_wsu_run(losses, m: int, eta: float | None = None, rng=None):
    """Run meta-WSU over a ``(T, K)`` loss matrix.

    Returns the list of chosen sets and the final meta-expert weights.
    """
    L = np.atleast_2d(np.asarray(losses, dtype=float))
    T, K = L.shape
    if eta is None:
        eta = meta_default_eta(K, m, T)
    rng = np.random.default_rng(rng)
    algo = MetaWSU(K, m, eta)
    sets = []
    for row in L:
        sets.append(algo.select(rng))
        algo.update(row)
    return sets, algo.weights.copy()
