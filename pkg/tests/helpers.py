"""Tick-file builders and cached Monte Carlo fits shared across test modules."""

from __future__ import annotations

import datetime as dt
import math
from functools import lru_cache

from aparchlm.aparch import PRESETS, DistSpec, simulate
from aparchlm.estimator import fit

TICK_HEADER = "timestamp,expiry_code,price,volume,record_type"


def tick_line(ts: dt.datetime, price: float, expiry: str = "H99", volume: int = 1,
              rtype: str = "T") -> str:
    return f"{ts.isoformat()},{expiry},{price},{volume},{rtype}"


def full_day_ticks(day: dt.date, open_hhmm: str, close_hhmm: str, width: int = 5,
                   expiry: str = "H99", volume: int = 1, skip=None, price0: float = 100.0) -> list[str]:
    """One trade in the middle of every session interval of ``day``.

    ``skip`` is an optional ``(start, end)`` pair of ``datetime.time`` values;
    intervals whose trade falls inside it are left empty.
    """
    oh, om = map(int, open_hhmm.split(":"))
    ch, cm = map(int, close_hhmm.split(":"))
    start = dt.datetime.combine(day, dt.time(oh, om))
    end = dt.datetime.combine(day, dt.time(ch, cm))
    lines = []
    ts = start + dt.timedelta(minutes=width / 2)
    k = 0
    while ts < end:
        if skip is None or not (skip[0] <= ts.time() < skip[1]):
            lines.append(tick_line(ts, round(price0 + 0.01 * (k % 7), 2), expiry, volume))
        ts += dt.timedelta(minutes=width)
        k += 1
    return lines


# -- Monte Carlo fixtures shared by the estimator and acceptance suites ----------

GILT_ORDER = (1, 1, 1, 1)
GILT_TRUTH = {
    "alpha0": PRESETS["gilt"].alpha0,
    "alpha[1]": PRESETS["gilt"].alpha[0],
    "beta[1]": PRESETS["gilt"].beta[0],
    "gamma[1]": PRESETS["gilt"].gamma[0],
    "delta": PRESETS["gilt"].delta,
    "ar[1]": PRESETS["gilt"].ar[0],
    "ma[1]": PRESETS["gilt"].ma[0],
}
RECOVERY_SEEDS = range(20)


@lru_cache(maxsize=None)
def gilt_returns(seed: int, n: int = 50_000):
    return simulate(PRESETS["gilt"], DistSpec(), n, seed=seed)


@lru_cache(maxsize=None)
def gilt_fit(seed: int, n: int = 50_000):
    return fit(gilt_returns(seed, n), GILT_ORDER, DistSpec())


# -- independent likelihood oracles ----------------------------------------------

LOG_2PI = math.log(2 * math.pi)


def garch_oracle(r, mu, w, a, b):
    """Plain-loop Gaussian GARCH(1,1) log-likelihood, conditional on the first observation."""
    e = [x - mu for x in r]
    m = sum(r) / len(r)
    h = sum((x - m) ** 2 for x in r) / len(r)
    ll = 0.0
    for t in range(1, len(r)):
        h = w + a * e[t - 1] ** 2 + b * h
        ll += -0.5 * (LOG_2PI + math.log(h) + e[t] ** 2 / h)
    return ll


def arch_oracle(r, mu, w, a):
    ll = 0.0
    for t in range(1, len(r)):
        h = w + a * (r[t - 1] - mu) ** 2
        ll += -0.5 * (LOG_2PI + math.log(h) + (r[t] - mu) ** 2 / h)
    return ll
