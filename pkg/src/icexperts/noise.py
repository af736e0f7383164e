"""Perturbation laws for follow-the-perturbed-leader.

Every law has a density proportional to ``exp(-nu(z))``.  Laplace and the
symmetric hyperbolic law have ``|nu'| <= 1``; the Gaussian and Gumbel laws
are kept as negative controls (unbounded ``nu'``).  All laws are unit scale.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from .errors import ConfigError, SurvivalUnderflowError

__all__ = [
    "NoiseKind",
    "NoiseModel",
    "Condition1Report",
    "LAPLACE",
    "HYPERBOLIC",
    "GAUSSIAN",
    "GUMBEL",
    "get_noise",
    "check_condition1",
    "verify_hazard_bound",
]


class NoiseKind(str, enum.Enum):
    LAPLACE = "laplace"
    HYPERBOLIC = "hyperbolic"
    GAUSSIAN = "gaussian"
    GUMBEL = "gumbel"


# Composite Gauss-Legendre rule for the scaled hyperbolic tail integral
# int_0^inf exp(nu(z) - nu(z + s)) ds.  The integrand is <= exp(1 - s), so
# truncating at s = 60 leaves less than 1e-25 of mass behind.
_TAIL_CUTOFF = 60.0
_TAIL_PANELS = 48
_TAIL_ORDER = 20


@functools.lru_cache(maxsize=1)
def _tail_rule():
    x, w = np.polynomial.legendre.leggauss(_TAIL_ORDER)
    width = _TAIL_CUTOFF / _TAIL_PANELS
    left = np.arange(_TAIL_PANELS) * width
    nodes = (left[:, None] + 0.5 * width * (x[None, :] + 1.0)).ravel()
    weights = np.tile(0.5 * width * w, _TAIL_PANELS)
    return nodes, weights


def _hyperbolic_nu(z):
    return np.sqrt(1.0 + np.square(z))


def _hyperbolic_scaled_tail(z):
    """``int_z^inf exp(nu(z) - nu(u)) du`` for ``z >= 0`` (vectorized)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    nodes, weights = _tail_rule()
    out = np.empty_like(z)
    chunk = 2048
    for lo in range(0, z.size, chunk):
        zz = z[lo:lo + chunk, None]
        integrand = np.exp(_hyperbolic_nu(zz) - _hyperbolic_nu(zz + nodes[None, :]))
        out[lo:lo + chunk] = integrand @ weights
    return out


@functools.lru_cache(maxsize=1)
def _hyperbolic_log_normalizer() -> float:
    # Z = 2 * int_0^inf exp(-nu(u)) du = 2 * exp(-nu(0)) * scaled_tail(0)
    return math.log(2.0) - 1.0 + math.log(float(_hyperbolic_scaled_tail(0.0)[0]))


@dataclass(frozen=True)
class Condition1Report:
    max_abs_nu_prime: float
    bounded: bool


@dataclass(frozen=True)
class NoiseModel:
    """A unit-scale perturbation law with density ``exp(-nu(z)) / Z``.

    ``condition1_bound`` is the constant B with ``|nu'(z)| <= B`` for all z,
    or ``None`` when ``nu'`` is unbounded.
    """

    kind: NoiseKind
    condition1_bound: float | None = None

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def symmetric(self) -> bool:
        return self.kind is not NoiseKind.GUMBEL

    @property
    def log_normalizer(self) -> float:
        """log Z, where the density is exp(-nu(z)) / Z."""
        if self.kind is NoiseKind.LAPLACE:
            return math.log(2.0)
        if self.kind is NoiseKind.HYPERBOLIC:
            return _hyperbolic_log_normalizer()
        if self.kind is NoiseKind.GAUSSIAN:
            return 0.5 * math.log(2.0 * math.pi)
        return 0.0

    def nu(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind is NoiseKind.LAPLACE:
            out = np.abs(z)
        elif self.kind is NoiseKind.HYPERBOLIC:
            out = _hyperbolic_nu(z)
        elif self.kind is NoiseKind.GAUSSIAN:
            out = 0.5 * np.square(z)
        else:
            with np.errstate(over="ignore"):
                out = z + np.exp(-z)
        return _unwrap(out)

    def nu_prime(self, z):
        """Derivative of ``nu``; 0 at the Laplace kink."""
        z = np.asarray(z, dtype=float)
        if self.kind is NoiseKind.LAPLACE:
            out = np.sign(z)
        elif self.kind is NoiseKind.HYPERBOLIC:
            out = z / _hyperbolic_nu(z)
        elif self.kind is NoiseKind.GAUSSIAN:
            out = z.copy()
        else:
            with np.errstate(over="ignore"):
                out = 1.0 - np.exp(-z)
        return _unwrap(out)

    def log_pdf(self, z):
        return _unwrap(-np.asarray(self.nu(z), dtype=float) - self.log_normalizer)

    def pdf(self, z):
        return _unwrap(np.exp(np.asarray(self.log_pdf(z))))

    def log_sf(self, z):
        """log(1 - F(z)), computed without cancellation in the right tail."""
        z = np.asarray(z, dtype=float)
        if self.kind is NoiseKind.LAPLACE:
            with np.errstate(over="ignore"):
                out = np.where(z >= 0, -z - math.log(2.0),
                               np.log1p(-0.5 * np.exp(np.minimum(z, 0.0))))
        elif self.kind is NoiseKind.HYPERBOLIC:
            out = _hyperbolic_log_sf(z)
        elif self.kind is NoiseKind.GAUSSIAN:
            out = log_ndtr(-z)
        else:
            with np.errstate(over="ignore", divide="ignore"):
                out = np.log(-np.expm1(-np.exp(-z)))
        return _unwrap(out)

    def sf(self, z):
        return _unwrap(np.exp(np.asarray(self.log_sf(z))))

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.symmetric:
            # F(z) = 1 - F(-z) keeps full relative precision in the left tail
            return self.sf(-z)
        with np.errstate(over="ignore"):
            return _unwrap(np.exp(-np.exp(-z)))

    def hazard_rate(self, z):
        """pdf / survival.  Raises when the survival function underflows."""
        log_sf = np.asarray(self.log_sf(z), dtype=float)
        if np.any(np.isneginf(log_sf)):
            bad = np.atleast_1d(np.asarray(z, dtype=float))[np.atleast_1d(np.isneginf(log_sf))]
            raise SurvivalUnderflowError(
                f"{self.name}: survival function underflows at z={bad[0]!r}; "
                "restrict the evaluation window"
            )
        with np.errstate(under="ignore"):
            return _unwrap(np.exp(np.asarray(self.log_pdf(z)) - log_sf))

    def sample(self, rng: np.random.Generator, size=None):
        """Draw from the law; deterministic given the generator state."""
        if self.kind is NoiseKind.LAPLACE:
            return rng.laplace(0.0, 1.0, size)
        if self.kind is NoiseKind.GAUSSIAN:
            return rng.standard_normal(size)
        if self.kind is NoiseKind.GUMBEL:
            return rng.gumbel(0.0, 1.0, size)
        n = 1 if size is None else int(np.prod(size))
        draws = _sample_hyperbolic(rng, n)
        if size is None:
            return float(draws[0])
        return draws.reshape(size)


def _hyperbolic_log_sf(z):
    shape = np.shape(z)
    z = np.atleast_1d(z).ravel()
    a = np.abs(z)
    # log of the upper-tail mass beyond |z|
    log_tail = -_hyperbolic_nu(a) + np.log(_hyperbolic_scaled_tail(a)) - _hyperbolic_log_normalizer()
    return np.where(z >= 0, log_tail, np.log1p(-np.exp(log_tail))).reshape(shape)


def _sample_hyperbolic(rng: np.random.Generator, n: int) -> np.ndarray:
    # Laplace proposal; accept with exp(|z| - sqrt(1 + z^2)) <= 1.
    out = np.empty(n)
    filled = 0
    while filled < n:
        want = n - filled
        batch = max(16, int(want * 1.8) + 8)
        z = rng.laplace(0.0, 1.0, batch)
        log_u = np.log(rng.random(batch))
        keep = z[log_u <= np.abs(z) - _hyperbolic_nu(z)][:want]
        out[filled:filled + keep.size] = keep
        filled += keep.size
    return out


def _unwrap(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


LAPLACE = NoiseModel(NoiseKind.LAPLACE, condition1_bound=1.0)
HYPERBOLIC = NoiseModel(NoiseKind.HYPERBOLIC, condition1_bound=1.0)
GAUSSIAN = NoiseModel(NoiseKind.GAUSSIAN)
GUMBEL = NoiseModel(NoiseKind.GUMBEL)

_BY_NAME = {m.name: m for m in (LAPLACE, HYPERBOLIC, GAUSSIAN, GUMBEL)}


def get_noise(name: str | NoiseModel) -> NoiseModel:
    if isinstance(name, NoiseModel):
        return name
    try:
        return _BY_NAME[str(name).lower()]
    except KeyError:
        raise ConfigError(f"unknown noise model {name!r}; expected one of {sorted(_BY_NAME)}") from None


def check_condition1(model: NoiseModel, z_grid) -> Condition1Report:
    """Largest ``|nu'|`` on the grid, and whether it respects the declared bound.

    Models without a declared bound are always reported unbounded; their
    grid maximum grows with the grid radius.
    """
    z_grid = np.asarray(z_grid, dtype=float)
    if z_grid.size == 0:
        raise ValueError("z_grid must be nonempty")
    with np.errstate(over="ignore"):
        largest = float(np.max(np.abs(np.atleast_1d(model.nu_prime(z_grid)))))
    B = model.condition1_bound
    return Condition1Report(largest, B is not None and largest <= B)


def verify_hazard_bound(model: NoiseModel, B: float, z_grid) -> bool:
    """True iff ``hazard_rate(z) <= B * (1 + tol)`` on every grid point."""
    tol = 1e-6 if model.kind is NoiseKind.HYPERBOLIC else 1e-9
    haz = np.atleast_1d(model.hazard_rate(np.asarray(z_grid, dtype=float)))
    return bool(np.all(haz <= B * (1.0 + tol)))
