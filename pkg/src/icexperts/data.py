"""Forecast-competition data: ingestion, coverage filtering and a synthetic
stand-in with the same schema.

CSV schema, one row per (forecaster, game)::

    game_id,date,forecaster_id,prob_home_win,home_won

``date`` is ISO ``YYYY-MM-DD``; ``home_won`` is 0 or 1.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .errors import DataError

SCHEMA = ("game_id", "date", "forecaster_id", "prob_home_win", "home_won")
DATA_DIR_ENV = "ICEXPERTS_DATA_DIR"


@dataclass
class ForecastDataset:
    """Games in chronological order, forecaster ids and their predictions.

    ``games`` holds ``(game_id, outcome)`` pairs and ``dates`` the matching
    dates; ``predictions`` maps ``(forecaster_id, game_id)`` to a probability.
    """

    games: list[tuple[str, int]]
    dates: list[str]
    forecasters: list[str]
    predictions: dict[tuple[str, str], float] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.games)

    @property
    def game_ids(self) -> list[str]:
        return [g for g, _ in self.games]

    def outcomes(self) -> np.ndarray:
        return np.array([r for _, r in self.games], dtype=int)

    def coverage(self, forecaster: str) -> int:
        return sum((forecaster, g) in self.predictions for g in self.game_ids)

    def belief_matrix(self, forecasters=None) -> np.ndarray:
        """``(T, K)`` array of predictions; every forecaster must be complete."""
        forecasters = self.forecasters if forecasters is None else list(forecasters)
        out = np.empty((self.T, len(forecasters)))
        for k, f in enumerate(forecasters):
            for t, g in enumerate(self.game_ids):
                try:
                    out[t, k] = self.predictions[(f, g)]
                except KeyError:
                    raise DataError(f"forecaster {f!r} has no prediction for game {g!r}") from None
        return out

    def __eq__(self, other):
        if not isinstance(other, ForecastDataset):
            return NotImplemented
        return (self.games == other.games and self.dates == other.dates
                and self.forecasters == other.forecasters and self.predictions == other.predictions)


def resolve_data_path(path) -> Path:
    """Relative paths that do not exist are looked up under ``$ICEXPERTS_DATA_DIR``."""
    p = Path(path)
    base = os.environ.get(DATA_DIR_ENV)
    if not p.is_absolute() and not p.exists() and base:
        return Path(base) / p
    return p


def ingest_nfl_csv(path) -> ForecastDataset:
    """Parse a forecast CSV, collecting every malformed row before failing."""
    path = resolve_data_path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: file is empty")
        header = [h.strip() for h in header]
        missing = [c for c in SCHEMA if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        col = {c: header.index(c) for c in SCHEMA}
        errors: list[str] = []
        games: dict[str, tuple[str, int]] = {}
        predictions: dict[tuple[str, str], float] = {}
        forecasters: dict[str, None] = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                errors.append(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
                continue
            gid, date, fid = (rec[col[c]].strip() for c in ("game_id", "date", "forecaster_id"))
            try:
                p = float(rec[col["prob_home_win"]])
            except ValueError:
                errors.append(f"line {lineno}: probability {rec[col['prob_home_win']]!r} is not a number")
                continue
            if not 0.0 <= p <= 1.0:
                errors.append(f"line {lineno}: probability {p} outside [0, 1]")
                continue
            won = rec[col["home_won"]].strip()
            if won not in ("0", "1"):
                errors.append(f"line {lineno}: home_won must be 0 or 1, got {won!r}")
                continue
            if not gid or not fid or not date:
                errors.append(f"line {lineno}: empty identifier or date")
                continue
            seen = games.setdefault(gid, (date, int(won)))
            if seen != (date, int(won)):
                errors.append(f"line {lineno}: game {gid!r} disagrees with an earlier row on date/outcome")
                continue
            if (fid, gid) in predictions:
                errors.append(f"line {lineno}: duplicate prediction by {fid!r} for game {gid!r}")
                continue
            predictions[(fid, gid)] = p
            forecasters.setdefault(fid)
    if errors:
        shown = "; ".join(errors[:20])
        more = f" (and {len(errors) - 20} more)" if len(errors) > 20 else ""
        raise DataError(f"{path}: {len(errors)} malformed row(s): {shown}{more}")
    if not games:
        raise DataError(f"{path}: no forecasts found")
    order = sorted(games, key=lambda g: (games[g][0], g))
    return ForecastDataset(
        games=[(g, games[g][1]) for g in order],
        dates=[games[g][0] for g in order],
        forecasters=list(forecasters),
        predictions=predictions,
    )


def write_csv(dataset: ForecastDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SCHEMA)
        for (gid, won), date in zip(dataset.games, dataset.dates):
            for f in dataset.forecasters:
                p = dataset.predictions.get((f, gid))
                if p is not None:
                    w.writerow([gid, date, f, repr(p), won])


def filter_complete(dataset: ForecastDataset) -> ForecastDataset:
    """Keep only forecasters with a prediction for every game."""
    keep = [f for f in dataset.forecasters if dataset.coverage(f) == dataset.T]
    if not keep:
        raise DataError("no forecaster predicted every game")
    kept = set(keep)
    return ForecastDataset(
        games=list(dataset.games),
        dates=list(dataset.dates),
        forecasters=keep,
        predictions={k: v for k, v in dataset.predictions.items() if k[0] in kept},
    )


def synthetic_dataset(rng=None, T: int = 284, complete: int = 274, partial: int = 26,
                      missing: tuple[int, int] = (1, 40)) -> ForecastDataset:
    """Season-like data: each game has a latent home-win probability and each
    forecaster sees it through her own scale and noise in logit space.

    ``partial`` forecasters skip between ``missing[0]`` and ``missing[1]``
    games.
    """
    rng = np.random.default_rng(rng)
    truth = expit(rng.normal(0.3, 1.0, T))
    outcomes = (rng.random(T) < truth).astype(int)
    n = complete + partial
    scale = rng.uniform(0.5, 1.3, n)
    sigma = rng.gamma(2.0, 0.25, n)
    z = logit(truth)[:, None] * scale[None, :] + sigma[None, :] * rng.standard_normal((T, n))
    probs = np.round(expit(z), 2)

    start = np.datetime64("2022-09-08")
    dates = [str(start + np.timedelta64(int(7 * t // 16), "D")) for t in range(T)]
    ids = [f"g{t:04d}" for t in range(T)]
    forecasters = [f"f{i:05d}" for i in range(n)]
    order = rng.permutation(n)
    predictions = {}
    for k, i in enumerate(order):
        skip: set[int] = set()
        if k >= complete:
            skip = set(rng.choice(T, size=int(rng.integers(missing[0], missing[1] + 1)), replace=False).tolist())
        for t in range(T):
            if t not in skip:
                predictions[(forecasters[i], ids[t])] = float(probs[t, i])
    return ForecastDataset(
        games=[(ids[t], int(outcomes[t])) for t in range(T)],
        dates=dates,
        forecasters=forecasters,
        predictions=predictions,
    )
