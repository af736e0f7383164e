"""Follow the Perturbed Leader for the m-experts problem.

Each round draws ``K`` fresh i.i.d. perturbations and picks the ``m``
experts with the smallest ``cumulative_loss + eta * gamma``.  The second half
of the module holds the single-round best-response machinery used to check
how far a strategic expert's optimal report drifts from her belief.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .errors import ConfigError, DomainError, HorizonTooShortError
from .noise import NoiseModel, get_noise
from .utilities import quadratic_loss, validate_losses

BISECTION_ITERS = 60
BISECTION_TOL = 1e-10


def top_m(scores, m: int) -> tuple[int, ...]:
    """Indices of the ``m`` smallest scores; ties go to the lower index."""
    order = np.argsort(np.asarray(scores, dtype=float), kind="stable")
    return tuple(sorted(int(i) for i in order[:m]))


@dataclass
class FTPL:
    """FTPL state: cumulative losses, step size, perturbation law and m."""

    K: int
    m: int
    eta: float
    noise: NoiseModel
    cumulative_losses: np.ndarray | None = None

    def __post_init__(self):
        self.noise = get_noise(self.noise)
        if not 1 <= self.m <= self.K:
            raise ConfigError(f"need 1 <= m <= K, got m={self.m}, K={self.K}")
        B = self.noise.condition1_bound
        if self.eta <= 0 or (B is not None and self.eta <= B):
            raise ConfigError(f"eta must exceed the noise bound B={B}, got {self.eta}")
        if self.cumulative_losses is None:
            self.cumulative_losses = np.zeros(self.K)
        else:
            self.cumulative_losses = np.asarray(self.cumulative_losses, dtype=float).copy()

    def scores(self, gamma) -> np.ndarray:
        return self.cumulative_losses + self.eta * np.asarray(gamma, dtype=float)

    def select(self, rng: np.random.Generator, gamma=None) -> tuple[int, ...]:
        """Draw fresh perturbations (unless ``gamma`` is given) and pick the
        ``m`` perturbed leaders."""
        if gamma is None:
            gamma = self.noise.sample(rng, self.K)
        return top_m(self.scores(gamma), self.m)

    def update(self, loss_row) -> None:
        loss_row = validate_losses(loss_row, "loss_row")
        self.cumulative_losses = self.cumulative_losses + loss_row

    def selection_probability_mc(self, expert: int, report: float, r: int, reports,
                                 samples: int = 100_000, rng=None):
        """Monte Carlo estimate of Pr[expert in S_{t+1}] after this round.

        ``reports`` are everyone's reports this round (the entry for
        ``expert`` is replaced by ``report``).  Returns ``(estimate, stderr)``.
        """
        if samples < 1:
            raise ValueError("samples must be positive")
        rng = np.random.default_rng(rng)
        reports = np.array(reports, dtype=float)
        reports[expert] = report
        nxt = self.cumulative_losses + quadratic_loss(reports, r)
        gamma = self.noise.sample(rng, (samples, self.K))
        s = nxt[None, :] + self.eta * gamma
        mine = s[:, expert][:, None]
        idx = np.arange(self.K)
        ahead = (s < mine) | ((s == mine) & (idx[None, :] < expert))
        hit = ahead.sum(axis=1) < self.m
        p = float(hit.mean())
        return p, math.sqrt(max(p * (1.0 - p), 0.0) / samples)

    def expected_selection_curve(self, expert: int, belief: float, reports, grid,
                                 samples: int = 100_000, rng=None) -> np.ndarray:
        """E_{r ~ Bern(belief)} Pr[expert in S_{t+1} | report p] for every ``p``
        on ``grid``, using one shared set of perturbation draws."""
        rng = np.random.default_rng(rng)
        grid = np.asarray(grid, dtype=float)
        reports = np.asarray(reports, dtype=float)
        others = np.delete(np.arange(self.K), expert)
        gamma = self.noise.sample(rng, (samples, self.K))
        L = self.cumulative_losses[expert]
        own = L + self.eta * gamma[:, expert]
        curve = np.zeros(grid.size)
        for r, pr in ((0, 1.0 - belief), (1, belief)):
            if pr == 0:
                continue
            theirs = (self.cumulative_losses[others] + quadratic_loss(reports[others], r))[None, :] \
                + self.eta * gamma[:, others]
            # chosen iff own score + loss(p, r) <= m-th smallest of the others
            X = np.partition(theirs, self.m - 1, axis=1)[:, self.m - 1]
            slack = np.sort(X - own)
            need = np.square(grid - r)
            frac = 1.0 - np.searchsorted(slack, need, side="left") / samples
            curve += pr * frac
        return curve


def default_step_size(B: float, T: int, K: int, m: int) -> float:
    """sqrt(B T / ln(K/m)); must exceed B."""
    if K <= m:
        raise ConfigError(f"default step size needs K > m (got K={K}, m={m})")
    eta = math.sqrt(B * T / math.log(K / m))
    if eta <= B:
        raise HorizonTooShortError(f"eta={eta:.4g} does not exceed B={B}; need T > B ln(K/m)")
    return eta


def ic_deviation_bound(B: float, eta: float) -> float:
    """Worst-case distance 2B / (eta - 2B) between optimal report and belief."""
    if eta <= 2 * B:
        raise ConfigError(f"deviation bound needs eta > 2B (eta={eta}, B={B})")
    return 2 * B / (eta - 2 * B)


@dataclass(frozen=True)
class ConditionalRoundContext:
    """Expert's cumulative loss ``L`` and the m-th smallest perturbed score
    of the other experts under outcome 0 (``X0``) and outcome 1 (``X1``)."""

    L: float
    X0: float
    X1: float


def log_deviation_factor(ctx: ConditionalRoundContext, p, noise: NoiseModel, eta: float):
    noise = get_noise(noise)
    p = np.asarray(p, dtype=float)
    z1 = (-np.square(1.0 - p) - (np.asarray(ctx.L) - np.asarray(ctx.X1))) / eta
    z0 = (-np.square(p) - (np.asarray(ctx.L) - np.asarray(ctx.X0))) / eta
    out = np.asarray(noise.nu(z1)) - np.asarray(noise.nu(z0))
    return float(out) if out.ndim == 0 else out


def deviation_factor_A(ctx: ConditionalRoundContext, p, noise: NoiseModel, eta: float):
    """Density ratio A in the first-order condition p = b / (b + (1 - b) A)."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    out = np.exp(log_deviation_factor(ctx, p, noise, eta))
    return float(out) if np.ndim(out) == 0 else out


def _fixed_point_gap(p, b, ctx, noise, eta, log_A=None):
    la = log_deviation_factor(ctx, p, noise, eta) if log_A is None else log_A
    # b / (b + (1 - b) A) written as a logistic so extreme A cannot overflow
    with np.errstate(divide="ignore"):
        return p - expit(logit(b) - la)


def best_response_conditional(ctx: ConditionalRoundContext, b, noise: NoiseModel,
                              eta: float, log_A=None):
    """Optimal report given the others' order statistics, by bisection on
    ``h(p) = p - b / (b + (1 - b) A(p))``.

    Broadcasts over array-valued ``b`` and context fields.  ``log_A``
    replaces ``log A(p)`` with a constant, which turns the fixed point into
    the closed form ``b / (b + (1 - b) A)``.
    """
    noise = get_noise(noise)
    B = noise.condition1_bound
    if B is not None and eta <= B:
        raise ConfigError(f"best response needs eta > B (eta={eta}, B={B})")
    b = np.asarray(b, dtype=float)
    if np.any((b < 0) | (b > 1)) or np.any(np.isnan(b)):
        raise DomainError("belief outside [0, 1]")
    shape = np.broadcast_shapes(b.shape, np.shape(ctx.L), np.shape(ctx.X0), np.shape(ctx.X1))
    b = np.broadcast_to(b, shape)
    interior = (b > 0) & (b < 1)
    lo = np.zeros(shape)
    hi = np.ones(shape)
    h_lo = _fixed_point_gap(lo, b, ctx, noise, eta, log_A)
    h_hi = _fixed_point_gap(hi, b, ctx, noise, eta, log_A)
    bad = interior & ((h_lo >= 0) | (h_hi <= 0))
    if np.any(bad):
        raise ArithmeticError(
            f"first-order condition has no interior sign change for {noise.name}; "
            "A(p) is outside the range a Condition-1 law can produce"
        )
    for _ in range(BISECTION_ITERS):
        mid = 0.5 * (lo + hi)
        below = _fixed_point_gap(mid, b, ctx, noise, eta, log_A) < 0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) < BISECTION_TOL:
            break
    out = np.where(interior, 0.5 * (lo + hi), b)
    return float(out) if out.ndim == 0 else out
