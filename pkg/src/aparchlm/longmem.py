"""
Autocorrelation-based long-memory diagnostics.

Sample autocorrelations use a single global mean and the population
(divide-by-n) variance, so the estimator is invariant to affine rescaling of
the input. The default lag horizon is ``n // 10``.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft, stats

from .errors import InsufficientDataError, LagRangeError
from .series import PowerTransform, ReturnSeries, check_variance, power_transform

__all__ = [
    "DEFAULT_KS",
    "Z_CRITICAL",
    "AcfResult",
    "SignificanceCounts",
    "SweepTable",
    "HyperbolicFit",
    "PeriodicityProfile",
    "acf",
    "significance_band",
    "count_significant",
    "power_sweep",
    "estimate_d",
    "periodicity_profile",
    "write_sweep_csv",
    "write_sweep_json",
]

DEFAULT_KS = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
Z_CRITICAL = 1.96
MODES = ("squared", "absolute")


def significance_band(n: int, z: float = Z_CRITICAL) -> float:
    """Two-sided white-noise critical value ``z / sqrt(n)``."""
    return z / np.sqrt(n)


@dataclass(frozen=True)
class AcfResult:
    lags: np.ndarray
    rho: np.ndarray
    band: float
    n: int

    @property
    def max_lag(self) -> int:
        return int(self.lags[-1]) if self.lags.size else 0

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lag", "rho", "band"])
            for j, r in zip(self.lags, self.rho):
                w.writerow([int(j), repr(float(r)), repr(float(self.band))])


def _values(series) -> np.ndarray:
    if isinstance(series, ReturnSeries):
        return series.values
    return np.asarray(series, dtype=float)


def acf(series: ReturnSeries | np.ndarray, max_lag: int | None = None,
        z: float = Z_CRITICAL) -> AcfResult:
    """Sample autocorrelations at lags ``1..max_lag``.

    Computed through a zero-padded FFT, which gives the same sums as the
    direct ``O(n * max_lag)`` estimator.

    Parameters
    ----------
    series : ReturnSeries or array
    max_lag : int, optional
        Defaults to ``n // 10``. Must satisfy ``1 <= max_lag < n``.
    z : float
        Multiplier for the significance band.
    """
    x = _values(series)
    n = x.size
    if max_lag is None:
        max_lag = n // 10
    if not 1 <= max_lag < n:
        raise LagRangeError(f"max_lag must lie in [1, {n - 1}], got {max_lag}")
    check_variance(x)
    c = x - x.mean()
    nfft = fft.next_fast_len(2 * n - 1, real=True)
    spec = fft.rfft(c, nfft)
    acov = fft.irfft(spec * np.conj(spec), nfft)[: max_lag + 1]
    rho = acov[1:] / acov[0]
    return AcfResult(np.arange(1, max_lag + 1), rho, significance_band(n, z), n)


@dataclass(frozen=True)
class SignificanceCounts:
    n_positive: int
    n_negative: int
    max_lag: int

    @property
    def total(self) -> int:
        return self.n_positive + self.n_negative

    def cell(self) -> str:
        return f"{self.n_positive}/{self.n_negative}"


def count_significant(result: AcfResult, band: float | None = None) -> SignificanceCounts:
    """Count lags with ``rho > band`` and ``rho < -band`` (strict)."""
    b = result.band if band is None else band
    return SignificanceCounts(
        int(np.count_nonzero(result.rho > b)),
        int(np.count_nonzero(result.rho < -b)),
        result.max_lag,
    )


@dataclass(frozen=True)
class SweepTable:
    """Significance counts indexed by ``(mode, k)``."""

    ks: tuple[float, ...]
    cells: dict
    band: float
    n: int
    max_lag: int

    def __getitem__(self, key: tuple[str, float]) -> SignificanceCounts:
        mode, k = key
        return self.cells[(mode, float(k))]

    def rows(self, label: str = "") -> list[dict]:
        out = []
        for mode in MODES:
            if (mode, self.ks[0]) not in self.cells:
                continue
            row = {"contract": label, "mode": mode}
            row.update({_fmt_k(k): self.cells[(mode, k)].cell() for k in self.ks})
            out.append(row)
        return out

    def to_dict(self, label: str = "") -> dict:
        return {
            "contract": label,
            "n": self.n,
            "max_lag": self.max_lag,
            "band": self.band,
            "ks": list(self.ks),
            "cells": [
                {"mode": m, "k": k, "n_positive": c.n_positive, "n_negative": c.n_negative}
                for (m, k), c in self.cells.items()
            ],
        }


def _fmt_k(k: float) -> str:
    return f"k={k:g}"


def power_sweep(series: ReturnSeries | np.ndarray, ks: Sequence[float] = DEFAULT_KS,
                max_lag: int | None = None, modes: Sequence[str] = MODES,
                workers: int = 1) -> SweepTable:
    """Significant-lag counts of ``|r|**k`` and ``(r**2)**k`` over a grid of k.

    Cells sharing the same effective exponent on ``|r|`` (squared ``k`` and
    absolute ``2k``) are computed once, so they agree exactly.
    """
    x = _values(series)
    if max_lag is None:
        max_lag = x.size // 10
    ks = tuple(float(k) for k in ks)
    transforms = {(m, k): PowerTransform(k, m) for m in modes for k in ks}
    exponents = sorted({t.exponent for t in transforms.values()})

    def one(e: float) -> SignificanceCounts:
        return count_significant(acf(power_transform(x, PowerTransform(e, "absolute")), max_lag))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            by_exp = dict(zip(exponents, pool.map(one, exponents)))
    else:
        by_exp = {e: one(e) for e in exponents}
    cells = {key: by_exp[t.exponent] for key, t in transforms.items()}
    return SweepTable(ks, cells, float(significance_band(x.size)), int(x.size), int(max_lag))


def write_sweep_csv(path: str | Path, tables: dict[str, SweepTable]) -> None:
    """Write one or more sweeps in the contract x mode by k layout, cells ``pos/neg``."""
    rows = [row for label, table in tables.items() for row in table.rows(label)]
    ks = next(iter(tables.values())).ks
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["contract", "mode", *(_fmt_k(k) for k in ks)], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_sweep_json(path: str | Path, tables: dict[str, SweepTable]) -> None:
    payload = [table.to_dict(label) for label, table in tables.items()]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


@dataclass(frozen=True)
class HyperbolicFit:
    C: float
    d: float
    lag_range: tuple[int, int]
    r_squared: float
    n_lags: int


def estimate_d(result: AcfResult, j_min: int = 1, j_max: int | None = None,
               min_lags: int = 10) -> HyperbolicFit:
    """Fit ``rho(j) ~ C * j**(2d - 1)`` by log-log least squares.

    Lags whose autocorrelation is not positive are skipped. The slope ``s``
    of ``ln rho`` on ``ln j`` maps to ``d = (s + 1) / 2``.
    """
    j_max = result.max_lag if j_max is None else j_max
    sel = (result.lags >= j_min) & (result.lags <= j_max) & (result.rho > 0)
    if np.count_nonzero(sel) < min_lags:
        raise InsufficientDataError(
            f"only {np.count_nonzero(sel)} positive autocorrelations in lags {j_min}..{j_max}"
        )
    fit = stats.linregress(np.log(result.lags[sel]), np.log(result.rho[sel]))
    return HyperbolicFit(
        C=float(np.exp(fit.intercept)),
        d=float((fit.slope + 1.0) / 2.0),
        lag_range=(int(j_min), int(j_max)),
        r_squared=float(fit.rvalue**2),
        n_lags=int(np.count_nonzero(sel)),
    )


@dataclass(frozen=True)
class PeriodicityProfile:
    lags: np.ndarray
    rho: np.ndarray
    intervals_per_day: int
    days: int
    band: float

    @property
    def day_boundaries(self) -> np.ndarray:
        """Lags that close each trading day in the profile."""
        return self.intervals_per_day * np.arange(1, self.days + 1)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lag", "rho", "band", "day_end"])
            ends = set(self.day_boundaries.tolist())
            for j, r in zip(self.lags, self.rho):
                w.writerow([int(j), repr(float(r)), repr(float(self.band)), int(int(j) in ends)])


def periodicity_profile(result: AcfResult, intervals_per_day: int,
                        days: int = 5) -> PeriodicityProfile:
    """Autocorrelations over ``days`` trading days of lags."""
    length = days * intervals_per_day
    if intervals_per_day < 1 or days < 1:
        raise LagRangeError("intervals_per_day and days must be positive")
    if result.max_lag < length:
        raise LagRangeError(f"profile needs {length} lags, acf has {result.max_lag}")
    return PeriodicityProfile(
        result.lags[:length].copy(), result.rho[:length].copy(), intervals_per_day, days, result.band
    )
