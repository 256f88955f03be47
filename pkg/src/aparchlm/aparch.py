r"""
APARCH(p, q) with an ARMA conditional mean.

Mean equation::

    r_t = mu + sum_i ar_i r_{t-i} + sum_j ma_j eps_{t-j} + eps_t

Volatility equation (asymmetry enters with a plus sign, so ``gamma < 0``
means negative shocks raise volatility more)::

    sigma_t**delta = alpha0 + sum_i alpha_i (|eps_{t-i}| + gamma_i eps_{t-i})**delta
                            + sum_j beta_j sigma_{t-j}**delta

Innovations ``z_t = eps_t / sigma_t`` have unit variance under every
supported family, so ``sigma_t`` is always the conditional standard deviation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit
from scipy.special import gammaln

from .errors import NumericalFailure, ParameterError
from .series import ReturnSeries

__all__ = [
    "DistSpec",
    "AparchParams",
    "FilterOutput",
    "PRESETS",
    "loglik_density",
    "standardized_logpdf",
    "draw_innovations",
    "filter",
    "filter_arrays",
    "simulate",
    "simulate_path",
    "half_life",
    "classify_nested",
    "params_to_json",
    "params_from_json",
]

LOG_2PI = math.log(2.0 * math.pi)
_FAMILY_ALIASES = {
    "normal": "normal",
    "gaussian": "normal",
    "t": "student_t",
    "student_t": "student_t",
    "student-t": "student_t",
    "studentst": "student_t",
    "ged": "ged",
    "generalized_error": "ged",
}


@dataclass(frozen=True)
class DistSpec:
    """Innovation distribution.

    ``shape`` is the degrees of freedom for ``student_t`` (must exceed 2) and
    the tail exponent for ``ged`` (2 reproduces the normal). A ``None`` shape
    is allowed only where it is going to be estimated.
    """

    family: str = "normal"
    shape: float | None = None

    def __post_init__(self) -> None:
        fam = _FAMILY_ALIASES.get(str(self.family).lower())
        if fam is None:
            raise ParameterError(f"unknown distribution family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if fam == "normal":
            object.__setattr__(self, "shape", None)
        elif self.shape is not None:
            shape = float(self.shape)
            if fam == "student_t" and not shape > 2:
                raise ParameterError(f"student-t degrees of freedom must exceed 2, got {shape}")
            if fam == "ged" and not shape > 0:
                raise ParameterError(f"GED shape must be positive, got {shape}")
            object.__setattr__(self, "shape", shape)

    @property
    def n_shape(self) -> int:
        return 0 if self.family == "normal" else 1

    @property
    def shape_name(self) -> str | None:
        return {"normal": None, "student_t": "nu", "ged": "shape"}[self.family]

    def require_shape(self) -> float:
        if self.family == "normal":
            return 0.0
        if self.shape is None:
            raise ParameterError(f"{self.family} needs a shape parameter")
        return self.shape


def standardized_logpdf(z: np.ndarray | float, dist: DistSpec) -> np.ndarray:
    """Log density of a unit-variance innovation."""
    z = np.asarray(z, dtype=float)
    if dist.family == "normal":
        return -0.5 * LOG_2PI - 0.5 * z * z
    shape = dist.require_shape()
    if dist.family == "student_t":
        nu = shape
        const = gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu) - 0.5 * math.log(math.pi * (nu - 2.0))
        return const - 0.5 * (nu + 1.0) * np.log1p(z * z / (nu - 2.0))
    s = shape
    log_lam = 0.5 * (-2.0 / s * math.log(2.0) + gammaln(1.0 / s) - gammaln(3.0 / s))
    const = math.log(s) - log_lam - (1.0 + 1.0 / s) * math.log(2.0) - gammaln(1.0 / s)
    return const - 0.5 * np.abs(z / math.exp(log_lam)) ** s


def loglik_density(z, sigma, dist: DistSpec):
    """Log density of ``eps = sigma * z`` given ``sigma``.

    Equals ``standardized_logpdf(z) - log(sigma)`` by change of variables.
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ParameterError("sigma must be positive")
    out = standardized_logpdf(z, dist) - np.log(sigma)
    return float(out) if out.ndim == 0 else out


def draw_innovations(dist: DistSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance iid draws from ``dist``."""
    if dist.family == "normal":
        return rng.standard_normal(size)
    shape = dist.require_shape()
    if dist.family == "student_t":
        return rng.standard_t(shape, size) * math.sqrt((shape - 2.0) / shape)
    # |z| = lam * (2G)^(1/s) with G ~ Gamma(1/s)
    lam = math.sqrt(2.0 ** (-2.0 / shape) * math.gamma(1.0 / shape) / math.gamma(3.0 / shape))
    g = rng.gamma(1.0 / shape, 1.0, size)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return sign * lam * (2.0 * g) ** (1.0 / shape)


def _floats(values) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class AparchParams:
    """Parameter set of an ARMA-APARCH model.

    ``alpha`` and ``gamma`` share length ``p``; ``beta`` has length ``q``.
    Set ``check=False`` to skip the admissibility checks (used for
    intermediate optimiser states that are valid by construction).
    """

    alpha0: float
    alpha: tuple[float, ...] = (0.1,)
    beta: tuple[float, ...] = (0.8,)
    gamma: tuple[float, ...] | None = None
    delta: float = 2.0
    mu: float = 0.0
    ar: tuple[float, ...] = ()
    ma: tuple[float, ...] = ()
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self) -> None:
        for key in ("alpha", "beta", "ar", "ma"):
            object.__setattr__(self, key, _floats(getattr(self, key)))
        gamma = (0.0,) * len(self.alpha) if self.gamma is None else self.gamma
        object.__setattr__(self, "gamma", _floats(gamma))
        object.__setattr__(self, "alpha0", float(self.alpha0))
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "mu", float(self.mu))
        if len(self.gamma) != len(self.alpha):
            raise ParameterError("gamma must have one entry per alpha")
        if self.check:
            self.validate()

    def validate(self) -> None:
        if not self.alpha0 > 0:
            raise ParameterError(f"alpha0 must be positive, got {self.alpha0}")
        if any(a < 0 for a in self.alpha) or any(b < 0 for b in self.beta):
            raise ParameterError("alpha and beta must be non-negative")
        if any(not -1.0 <= g <= 1.0 for g in self.gamma):
            raise ParameterError("gamma must lie in [-1, 1]")
        if not self.delta > 0:
            raise ParameterError(f"delta must be positive, got {self.delta}")
        if self.persistence > 1.0 + 1e-12:
            raise ParameterError(f"sum(alpha) + sum(beta) = {self.persistence} exceeds 1")

    @property
    def p(self) -> int:
        return len(self.alpha)

    @property
    def q(self) -> int:
        return len(self.beta)

    @property
    def persistence(self) -> float:
        return float(sum(self.alpha) + sum(self.beta))

    @property
    def order(self) -> tuple[int, int, int, int]:
        return (self.p, self.q, len(self.ar), len(self.ma))

    @property
    def burn(self) -> int:
        """Observations skipped by the conditional likelihood."""
        return max(self.p, self.q, len(self.ar), len(self.ma))

    def to_dict(self, dist: DistSpec | None = None) -> dict:
        d = asdict(self)
        d.pop("check")
        for key in ("alpha", "beta", "gamma", "ar", "ma"):
            d[key] = list(d[key])
        if dist is not None:
            d["dist_family"] = dist.family
            d["dist_shape"] = dist.shape
        return d

    @classmethod
    def from_dict(cls, d: dict) -> AparchParams:
        keys = ("alpha0", "alpha", "beta", "gamma", "delta", "mu", "ar", "ma")
        return cls(**{k: d[k] for k in keys if k in d})


def params_to_json(params: AparchParams, dist: DistSpec | None = None) -> str:
    return json.dumps(params.to_dict(dist or DistSpec()), indent=2) + "\n"


def params_from_json(text: str) -> tuple[AparchParams, DistSpec]:
    d = json.loads(text)
    dist = DistSpec(d.get("dist_family", "normal"), d.get("dist_shape"))
    return AparchParams.from_dict(d), dist


# Five-minute estimates reported for the three LIFFE contracts; the mean
# intercept is not reported and is taken as zero.
PRESETS: dict[str, AparchParams] = {
    "ftse100": AparchParams(alpha0=0.01, alpha=(0.15,), beta=(0.82,), gamma=(-0.09,), delta=1.07),
    "gilt": AparchParams(alpha0=7.10e-4, alpha=(0.11,), beta=(0.86,), gamma=(-0.08,), delta=0.47,
                         ar=(0.53,), ma=(-0.57,)),
    "sterling": AparchParams(alpha0=9.00e-7, alpha=(0.15,), beta=(0.62,), gamma=(-0.09,), delta=1.17,
                             ar=(0.27,), ma=(-0.43,)),
}


@njit(cache=True)
def _mean_residuals(r, mu, ar, ma, eps):
    n = r.size
    for t in range(n):
        e = r[t] - mu
        for i in range(ar.size):
            if t - 1 - i >= 0:
                e -= ar[i] * r[t - 1 - i]
        for j in range(ma.size):
            if t - 1 - j >= 0:
                e -= ma[j] * eps[t - 1 - j]
        eps[t] = e


@njit(cache=True)
def _power_recursion(eps, alpha0, alpha, gamma, beta, delta, init, h):
    n = eps.size
    start = max(alpha.size, beta.size)
    for t in range(n):
        if t < start:
            h[t] = init
            continue
        v = alpha0
        for i in range(alpha.size):
            e = eps[t - 1 - i]
            v += alpha[i] * (abs(e) + gamma[i] * e) ** delta
        for j in range(beta.size):
            v += beta[j] * h[t - 1 - j]
        if not (v > 0.0 and v < np.inf):
            return t
        h[t] = v
    return -1


@njit(cache=True)
def _simulate_kernel(z, mu, ar, ma, alpha0, alpha, gamma, beta, delta, init, r, eps, h):
    n = z.size
    start = max(alpha.size, beta.size)
    inv = 1.0 / delta
    for t in range(n):
        if t < start:
            v = init
        else:
            v = alpha0
            for i in range(alpha.size):
                e = eps[t - 1 - i]
                v += alpha[i] * (abs(e) + gamma[i] * e) ** delta
            for j in range(beta.size):
                v += beta[j] * h[t - 1 - j]
        h[t] = v
        e = v**inv * z[t]
        eps[t] = e
        m = mu
        for i in range(ar.size):
            if t - 1 - i >= 0:
                m += ar[i] * r[t - 1 - i]
        for j in range(ma.size):
            if t - 1 - j >= 0:
                m += ma[j] * eps[t - 1 - j]
        r[t] = m + e


def _arr(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).reshape(-1)


def default_init_power(r: np.ndarray, delta: float) -> float:
    """Sample mean of ``|r - mean(r)|**delta``; seeds the first ``max(p, q)`` states."""
    return float(np.mean(np.abs(r - r.mean()) ** delta))


def filter_arrays(r: np.ndarray, params: AparchParams, dist: DistSpec,
                  init_power: float | None = None):
    """Array-level filter used by the estimator.

    Returns
    -------
    eps, power, ll : ndarray
        Mean residuals, ``sigma**delta`` and per-observation log-likelihood
        terms for ``t >= params.burn``.
    """
    r = np.ascontiguousarray(r, dtype=np.float64)
    eps = np.empty_like(r)
    _mean_residuals(r, params.mu, _arr(params.ar), _arr(params.ma), eps)
    if init_power is None:
        init_power = default_init_power(r, params.delta)
    h = np.empty_like(r)
    bad = _power_recursion(eps, params.alpha0, _arr(params.alpha), _arr(params.gamma),
                           _arr(params.beta), params.delta, float(init_power), h)
    if bad >= 0:
        raise NumericalFailure(int(bad))
    start = params.burn
    log_sigma = np.log(h[start:]) / params.delta
    z = eps[start:] * np.exp(-log_sigma)
    ll = standardized_logpdf(z, dist) - log_sigma
    if not np.all(np.isfinite(ll)):
        raise NumericalFailure(start + int(np.flatnonzero(~np.isfinite(ll))[0]))
    return eps, h, ll


@dataclass(frozen=True)
class FilterOutput:
    residuals: np.ndarray
    sigma: np.ndarray
    loglik: float
    loglik_per_obs: np.ndarray
    start: int

    @property
    def standardized(self) -> np.ndarray:
        return self.residuals / self.sigma


def filter(returns: ReturnSeries | np.ndarray, params: AparchParams, dist: DistSpec | None = None,
           init_power: float | None = None) -> FilterOutput:
    """Run the mean and volatility recursions and evaluate the likelihood.

    Parameters
    ----------
    returns : ReturnSeries or array
    params : AparchParams
    dist : DistSpec, optional
        Defaults to the normal.
    init_power : float, optional
        Value of ``sigma**delta`` for the first ``max(p, q)`` observations.
        Defaults to the sample mean of ``|r - mean(r)|**delta``. Pre-sample
        returns and residuals are zero.

    Returns
    -------
    FilterOutput
        ``loglik_per_obs`` covers ``t >= start`` where ``start`` is
        ``max(p, q, len(ar), len(ma))``.

    Raises
    ------
    NumericalFailure
        If ``sigma**delta`` becomes non-finite; ``index`` locates it.
    """
    dist = dist or DistSpec()
    r = returns.values if isinstance(returns, ReturnSeries) else np.asarray(returns, dtype=float)
    if r.size <= params.burn + params.p + params.q:
        raise ParameterError(f"series of length {r.size} too short for order {params.order}")
    eps, h, ll = filter_arrays(r, params, dist, init_power)
    return FilterOutput(eps, h ** (1.0 / params.delta), float(ll.sum()), ll, params.burn)


def simulate_path(params: AparchParams, dist: DistSpec | None, n: int, seed=None,
                  burn_in: int = 1000, init_power: float | None = None):
    """Simulate returns together with the latent residual and sigma paths.

    Returns
    -------
    r, eps, sigma : ndarray
        Each of length ``n`` (burn-in discarded).
    """
    dist = dist or DistSpec()
    if n < 1 or burn_in < 0:
        raise ParameterError("n must be positive and burn_in non-negative")
    rng = np.random.default_rng(seed)
    total = n + burn_in
    z = draw_innovations(dist, total, rng)
    if init_power is None:
        pers = params.persistence
        init_power = params.alpha0 / (1.0 - pers) if pers < 1.0 else params.alpha0
    r = np.empty(total)
    eps = np.empty(total)
    h = np.empty(total)
    _simulate_kernel(z, params.mu, _arr(params.ar), _arr(params.ma), params.alpha0,
                     _arr(params.alpha), _arr(params.gamma), _arr(params.beta),
                     params.delta, float(init_power), r, eps, h)
    if not np.all(np.isfinite(h)):
        raise NumericalFailure(int(np.flatnonzero(~np.isfinite(h))[0]))
    return r[burn_in:], eps[burn_in:], h[burn_in:] ** (1.0 / params.delta)


def simulate(params: AparchParams, dist: DistSpec | None = None, n: int = 1000, seed=None,
             burn_in: int = 1000, init_power: float | None = None,
             intervals_per_day: int = 1) -> ReturnSeries:
    """Simulate ``n`` returns; identical seeds give identical series."""
    r, _, _ = simulate_path(params, dist, n, seed, burn_in, init_power)
    return ReturnSeries.from_values(r, intervals_per_day)


def half_life(params: AparchParams | float) -> float:
    """Intervals for half of a volatility shock to die out: ``ln 0.5 / ln(persistence)``.

    Returns ``inf`` when persistence is 1 or more.
    """
    pers = params.persistence if isinstance(params, AparchParams) else float(params)
    if pers <= 0:
        raise ParameterError(f"half-life undefined for persistence {pers}")
    if pers >= 1:
        return math.inf
    return math.log(0.5) / math.log(pers)


_NESTED_MODELS = (
    # name, delta target (None = free, 0 = log limit), gamma zero?, beta zero?
    ("ARCH", 2.0, True, True),
    ("NARCH", None, True, True),
    ("Log-ARCH", 0.0, True, False),
    ("GARCH-variance", 2.0, True, False),
    ("GARCH-stddev", 1.0, True, False),
    ("TARCH", 1.0, False, False),
    ("GJR", 2.0, False, False),
)


def classify_nested(params: AparchParams, tol: float = 0.05) -> str:
    """Name the most restrictive nested specification the parameters fit.

    Comparisons are absolute and within ``tol``; ``delta < tol`` stands in
    for the ``delta -> 0`` Log-ARCH limit. Candidates are tried from most to
    least restrictive and the first match wins.
    """
    gamma0 = all(abs(g) <= tol for g in params.gamma)
    beta0 = all(abs(b) <= tol for b in params.beta)
    for name, delta, need_gamma0, need_beta0 in _NESTED_MODELS:
        if need_gamma0 and not gamma0:
            continue
        if need_beta0 and not beta0:
            continue
        if delta is not None:
            ok = params.delta < tol if delta == 0.0 else abs(params.delta - delta) <= tol
            if not ok:
                continue
        return name
    return "APARCH (general)"

