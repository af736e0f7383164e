"""Quadratic loss and the modular / submodular set utilities.

Sets of experts are represented as sorted tuples of 0-based indices.  Loss
rows are 1-D arrays of per-expert losses in [0, 1] for one round; loss
matrices are ``(T, K)`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigError, DomainError

MODULAR = "modular"
SUBMODULAR = "submodular"

# products over more experts than this are accumulated in log space
_LOG_PRODUCT_THRESHOLD = 30


@dataclass(frozen=True)
class UtilityKind:
    kind: str
    m: int = 1

    def __post_init__(self):
        if self.kind not in (MODULAR, SUBMODULAR):
            raise ConfigError(f"unknown utility kind {self.kind!r}")
        if self.m < 1:
            raise ConfigError("m must be at least 1")

    @property
    def is_modular(self) -> bool:
        return self.kind == MODULAR


def expert_set(members: Iterable[int], K: int | None = None) -> tuple[int, ...]:
    """Normalize ``members`` to a sorted tuple, rejecting duplicates."""
    out = tuple(sorted(int(i) for i in members))
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate experts in {out}")
    if K is not None and out and (out[0] < 0 or out[-1] >= K):
        raise ValueError(f"expert index out of range for K={K}: {out}")
    return out


def validate_losses(losses, name="losses") -> np.ndarray:
    arr = np.asarray(losses, dtype=float)
    if arr.size and (np.isnan(arr).any() or arr.min() < 0.0 or arr.max() > 1.0):
        raise DomainError(f"{name} must lie in [0, 1]")
    return arr


def quadratic_loss(p, r):
    """Brier loss ``(p - r)^2`` for reports in [0, 1] and binary outcomes."""
    p_arr = np.asarray(p, dtype=float)
    r_arr = np.asarray(r)
    if np.any(np.isnan(p_arr)) or np.any(p_arr < 0.0) or np.any(p_arr > 1.0):
        raise DomainError("probability outside [0, 1]")
    if np.any((r_arr != 0) & (r_arr != 1)):
        raise DomainError("outcome must be 0 or 1")
    out = np.square(p_arr - r_arr)
    return float(out) if out.ndim == 0 else out


def product(values) -> float:
    """Product of losses with an exact-zero short circuit and log-space
    accumulation for long products."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 1.0
    if np.any(v == 0.0):
        return 0.0
    if v.size > _LOG_PRODUCT_THRESHOLD:
        return math.exp(float(np.sum(np.log(v))))
    return float(np.prod(v))


def leave_one_out_products(row) -> np.ndarray:
    """``out[j] = prod_{k != j} row[k]``."""
    row = np.asarray(row, dtype=float)
    K = row.size
    zeros = np.flatnonzero(row == 0.0)
    out = np.zeros(K)
    if zeros.size >= 2:
        return out
    if zeros.size == 1:
        z = zeros[0]
        out[z] = product(np.delete(row, z))
        return out
    if K > _LOG_PRODUCT_THRESHOLD:
        logs = np.log(row)
        return np.exp(logs.sum() - logs)
    prefix = np.concatenate(([1.0], np.cumprod(row[:-1])))
    suffix = np.concatenate((np.cumprod(row[::-1][:-1])[::-1], [1.0]))
    return prefix * suffix


def utility(kind: UtilityKind, S, loss_row) -> float:
    """f_t(S): ``|S|/m - sum(l)/m`` (modular) or ``1 - prod(l)`` (submodular)."""
    row = np.asarray(loss_row, dtype=float)
    idx = list(S)
    if kind.is_modular:
        if len(idx) > kind.m:
            raise ValueError(f"|S|={len(idx)} exceeds m={kind.m}")
        return float(np.sum(1.0 - row[idx]) / kind.m)
    return 1.0 - product(row[idx])


def marginal_gain(kind: UtilityKind, j: int, S, loss_row) -> float:
    """f_t(j | S) = f_t(S + j) - f_t(S); ``j`` must not be in ``S``."""
    if j in set(S):
        raise ValueError(f"expert {j} already in S")
    row = np.asarray(loss_row, dtype=float)
    if kind.is_modular:
        return float((1.0 - row[j]) / kind.m)
    return float((1.0 - row[j]) * product(row[list(S)]))


def lower_bound_weights(loss_row, kind: UtilityKind | None = None) -> np.ndarray:
    """Per-expert terms ``f_t(j | [K] - j)`` of the modular lower bound."""
    row = np.asarray(loss_row, dtype=float)
    if kind is not None and kind.is_modular:
        return (1.0 - row) / kind.m
    return (1.0 - row) * leave_one_out_products(row)


def modular_lower_bound(loss_row, S, kind: UtilityKind | None = None) -> float:
    """h_t(S) = sum_{j in S} f_t(j | [K] - j).  Submodular utility unless
    ``kind`` says otherwise (for modular f, h = f)."""
    idx = list(S)
    if not idx:
        return 0.0
    return float(np.sum(lower_bound_weights(loss_row, kind)[idx]))


def residual_g(loss_row, S, kind: UtilityKind | None = None) -> float:
    """g_t(S) = f_t(S) - h_t(S); monotone submodular."""
    kind = kind or UtilityKind(SUBMODULAR, max(1, len(list(S))))
    return utility(kind, S, loss_row) - modular_lower_bound(loss_row, S, kind)


def curvature(losses, kind: UtilityKind) -> float:
    """Total curvature of ``f = sum_t f_t`` over the full expert set.

    Experts whose singleton value is zero (loss 1 in every round) carry no
    information about the ratio and are skipped.
    """
    if kind.is_modular:
        return 0.0
    L = np.atleast_2d(np.asarray(losses, dtype=float))
    singleton = np.sum(1.0 - L, axis=0)
    tail = np.zeros(L.shape[1])
    for row in L:
        tail += lower_bound_weights(row)
    live = singleton > 0.0
    if not np.any(live):
        raise ConfigError("curvature undefined: every expert has zero singleton utility")
    ratio = np.min(tail[live] / singleton[live])
    return float(min(1.0, max(0.0, 1.0 - ratio)))


def alpha_for(kind: UtilityKind, losses) -> float:
    """Approximation ratio: 1 for modular, ``1 - c_f / e`` for submodular."""
    if kind.is_modular:
        return 1.0
    return 1.0 - curvature(losses, kind) / math.e


def total_utility(kind: UtilityKind, S, losses) -> float:
    """sum_t f_t(S) over a loss matrix."""
    L = np.atleast_2d(np.asarray(losses, dtype=float))
    idx = list(S)
    if kind.is_modular:
        return float(np.sum(1.0 - L[:, idx]) / kind.m)
    if not idx:
        return 0.0
    sub = L[:, idx]
    if len(idx) > _LOG_PRODUCT_THRESHOLD:
        prods = np.array([product(r) for r in sub])
    else:
        prods = np.prod(sub, axis=1)
    return float(np.sum(1.0 - prods))
