"""
Quasi-maximum-likelihood estimation of ARMA-APARCH models.

The optimiser works on an unconstrained vector ``u`` mapped onto the
admissible region:

==========  ===============================================================
mu          ``scale * u`` with ``scale`` the sample standard deviation
ar, ma      identity
alpha0      ``exp(u)``
alpha, beta ``c * exp(u_i) / (1 + sum exp(u))``, ``c = 1 - sum(fixed)``
gamma       ``tanh(u)``
delta       ``exp(u)``
nu          ``2 + exp(u)`` (Student-t)
shape       ``exp(u)`` (GED)
==========  ===============================================================

Search directions are BHHH: ``(S'S)^{-1} g`` with ``S`` the matrix of
per-observation scores from central differences, followed by a
backtracking line search that only accepts likelihood increases.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .aparch import AparchParams, DistSpec, default_init_power, filter_arrays, standardized_logpdf
from .errors import DataError, InsufficientDataError, NumericalFailure, RankDeficiencyError
from .series import ReturnSeries

__all__ = [
    "OptimizerConfig",
    "FitResult",
    "ModelSearchError",
    "param_names",
    "fit",
    "robust_se",
    "information_criteria",
    "model_search",
    "standardized_residuals",
    "delta_power_tests",
    "format_report",
    "STARTS",
    "MIN_OBS",
]

logger = logging.getLogger(__name__)

MIN_OBS = 200
# (alpha_1, beta_1, gamma_1, delta); alpha/beta are spread evenly over lags
STARTS = ((0.1, 0.8, 0.0, 1.0), (0.1, 0.8, -0.1, 2.0), (0.05, 0.9, 0.0, 1.0))
_SHAPE_START = {"student_t": 8.0, "ged": 1.5}


class ModelSearchError(DataError):
    """Every candidate in a model search failed or did not converge."""

    def __init__(self, failures: list[str], results: list | None = None) -> None:
        self.failures = failures
        self.results = results or []
        super().__init__("no model converged:\n  " + "\n  ".join(failures))


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 500
    loglik_rel_tol: float = 1e-8
    grad_tol: float = 1e-5
    gradient_step: float = 1e-5
    hessian_step: float = 1e-4
    n_starts: int = 3
    max_halvings: int = 40
    se_smoothing: float = 0.5
    se_passes: int = 3

    def __post_init__(self) -> None:
        for name in ("loglik_rel_tol", "grad_tol", "gradient_step", "hessian_step"):
            if not getattr(self, name) > 0:
                raise DataError(f"{name} must be positive")
        if not self.se_smoothing >= 0 or self.se_passes < 1:
            raise DataError("se_smoothing >= 0 and se_passes >= 1 required")
        if self.max_iterations < 1 or not 1 <= self.n_starts <= len(STARTS):
            raise DataError(f"max_iterations >= 1 and n_starts in 1..{len(STARTS)} required")


def param_names(order: Sequence[int], dist: DistSpec) -> list[str]:
    """Names of the full parameter vector for ``order = (p, q, n_ar, n_ma)``."""
    p, q, n_ar, n_ma = order
    names = ["mu"]
    names += [f"ar[{i + 1}]" for i in range(n_ar)]
    names += [f"ma[{i + 1}]" for i in range(n_ma)]
    names += ["alpha0"]
    names += [f"alpha[{i + 1}]" for i in range(p)]
    names += [f"gamma[{i + 1}]" for i in range(p)]
    names += [f"beta[{j + 1}]" for j in range(q)]
    names += ["delta"]
    if dist.n_shape:
        names.append(dist.shape_name)
    return names


def _kind(name: str) -> str:
    return name.split("[")[0]


class _Layout:
    """Bookkeeping between the full constrained vector and free ``u``."""

    def __init__(self, order: Sequence[int], dist: DistSpec, fixed: Mapping[str, float] | None,
                 mu_scale: float = 1.0):
        self.mu_scale = float(mu_scale) if mu_scale > 0 else 1.0
        self.order = tuple(int(o) for o in order)
        p, q, n_ar, n_ma = self.order
        if p < 1 or min(self.order) < 0:
            raise DataError(f"order must have p >= 1 and non-negative entries, got {self.order}")
        self.dist = dist
        self.names = param_names(self.order, dist)
        self.fixed = {k: float(v) for k, v in (fixed or {}).items()}
        unknown = set(self.fixed) - set(self.names)
        if unknown:
            raise DataError(f"cannot fix unknown parameters {sorted(unknown)}")
        self.free = [i for i, n in enumerate(self.names) if n not in self.fixed]
        self.free_names = [self.names[i] for i in self.free]
        self.simplex = [i for i in self.free if _kind(self.names[i]) in ("alpha", "beta")]
        fixed_mass = sum(v for k, v in self.fixed.items() if _kind(k) in ("alpha", "beta"))
        if fixed_mass >= 1:
            raise DataError("fixed alpha/beta values leave no room for the free ones")
        self.capacity = 1.0 - fixed_mass

    @property
    def k(self) -> int:
        return len(self.free)

    def theta(self, u: np.ndarray) -> np.ndarray:
        """Full constrained vector from free unconstrained values."""
        th = np.empty(len(self.names))
        for i, name in enumerate(self.names):
            if name in self.fixed:
                th[i] = self.fixed[name]
        uf = dict(zip(self.free, u))
        if self.simplex:
            w = np.exp(np.clip([uf[i] for i in self.simplex], -700, 700))
            vals = self.capacity * w / (1.0 + w.sum())
            th[self.simplex] = vals
        for i in self.free:
            kind = _kind(self.names[i])
            x = uf[i]
            if kind == "mu":
                th[i] = self.mu_scale * x
            elif kind in ("ar", "ma"):
                th[i] = x
            elif kind in ("alpha0", "delta", "shape"):
                th[i] = math.exp(min(x, 700.0))
            elif kind == "gamma":
                th[i] = math.tanh(x)
            elif kind == "nu":
                th[i] = 2.0 + math.exp(min(x, 700.0))
        return th

    def unconstrained(self, th: np.ndarray) -> np.ndarray:
        u = np.empty(self.k)
        pos = {i: j for j, i in enumerate(self.free)}
        if self.simplex:
            vals = np.maximum(np.asarray(th[self.simplex], dtype=float), 1e-8)
            slack = max(self.capacity - vals.sum(), 1e-8)
            for i, v in zip(self.simplex, vals):
                u[pos[i]] = math.log(v / slack)
        for i in self.free:
            kind = _kind(self.names[i])
            x = float(th[i])
            if kind == "mu":
                u[pos[i]] = x / self.mu_scale
            elif kind in ("ar", "ma"):
                u[pos[i]] = x
            elif kind in ("alpha0", "delta", "shape"):
                u[pos[i]] = math.log(x)
            elif kind == "gamma":
                u[pos[i]] = math.atanh(min(max(x, -0.999), 0.999))
            elif kind == "nu":
                u[pos[i]] = math.log(max(x - 2.0, 1e-8))
        return u

    def params(self, th: np.ndarray, check: bool = False) -> tuple[AparchParams, DistSpec]:
        by = dict(zip(self.names, th))
        p, q, n_ar, n_ma = self.order
        params = AparchParams(
            alpha0=by["alpha0"],
            alpha=[by[f"alpha[{i + 1}]"] for i in range(p)],
            beta=[by[f"beta[{j + 1}]"] for j in range(q)],
            gamma=[by[f"gamma[{i + 1}]"] for i in range(p)],
            delta=by["delta"],
            mu=by["mu"],
            ar=[by[f"ar[{i + 1}]"] for i in range(n_ar)],
            ma=[by[f"ma[{i + 1}]"] for i in range(n_ma)],
            check=check,
        )
        dist = DistSpec(self.dist.family, by[self.dist.shape_name]) if self.dist.n_shape else self.dist
        return params, dist

    def vector(self, params: AparchParams, dist: DistSpec) -> np.ndarray:
        d = {"mu": params.mu, "alpha0": params.alpha0, "delta": params.delta}
        for key in ("ar", "ma", "alpha", "gamma", "beta"):
            for i, v in enumerate(getattr(params, key)):
                d[f"{key}[{i + 1}]"] = v
        if dist.n_shape:
            d[dist.shape_name] = dist.require_shape()
        return np.array([d[n] for n in self.names])


class _Objective:
    """Per-observation log-likelihood as a function of free ``u``."""

    def __init__(self, r: np.ndarray, layout: _Layout, config: OptimizerConfig):
        self.r = np.ascontiguousarray(r, dtype=float)
        self.demeaned = self.r - self.r.mean()
        self.layout = layout
        self.config = config
        self.n_evals = 0

    def terms(self, u: np.ndarray) -> np.ndarray | None:
        """Log-likelihood terms, or ``None`` where the recursion breaks down."""
        self.n_evals += 1
        params, dist = self.layout.params(self.layout.theta(u))
        try:
            _, _, ll = filter_arrays(self.r, params, dist, default_init_power(self.r, params.delta))
        except NumericalFailure:
            return None
        return ll

    def total(self, u: np.ndarray) -> float:
        ll = self.terms(u)
        return -math.inf if ll is None else float(ll.sum())

    def steps(self, u: np.ndarray, rel: float) -> np.ndarray:
        return rel * np.maximum(1.0, np.abs(u))

    def scores(self, u: np.ndarray, base: np.ndarray | None = None,
               rel: float | None = None, h: np.ndarray | None = None) -> np.ndarray:
        """Central-difference per-observation scores, shape ``(n_used, k)``."""
        if h is None:
            h = self.steps(u, rel or self.config.gradient_step)
        cols = []
        for i in range(u.size):
            e = np.zeros_like(u)
            e[i] = h[i]
            up, dn = self.terms(u + e), self.terms(u - e)
            if up is not None and dn is not None:
                cols.append((up - dn) / (2 * h[i]))
                continue
            if base is None:
                base = self.terms(u)
            if up is not None:
                cols.append((up - base) / h[i])
            elif dn is not None:
                cols.append((base - dn) / h[i])
            else:
                raise NumericalFailure(-1, f"likelihood undefined around {self.layout.free_names[i]}")
        return np.column_stack(cols)

    def hessian(self, u: np.ndarray) -> np.ndarray:
        """Central differences of the summed scores."""
        h = self.steps(u, self.config.hessian_step)
        H = np.empty((u.size, u.size))
        for i in range(u.size):
            e = np.zeros_like(u)
            e[i] = h[i]
            g_up = self.scores(u + e).sum(axis=0)
            g_dn = self.scores(u - e).sum(axis=0)
            H[i] = (g_up - g_dn) / (2 * h[i])
        return 0.5 * (H + H.T)


@dataclass
class _Run:
    u: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    gradient_norm: float
    path: list[float]
    message: str


def _bhhh(obj: _Objective, u0: np.ndarray) -> _Run:
    cfg = obj.config
    u = np.array(u0, dtype=float)
    base = obj.terms(u)
    if base is None:
        return _Run(u, -math.inf, False, 0, math.inf, [], "start point infeasible")
    ll = float(base.sum())
    path = [ll]
    gnorm = math.inf
    for it in range(1, cfg.max_iterations + 1):
        S = obj.scores(u, base)
        g = S.sum(axis=0)
        B = S.T @ S
        try:
            cond = np.linalg.cond(B)
            if not np.isfinite(cond) or cond > 1e14:
                raise np.linalg.LinAlgError
            direction = np.linalg.solve(B, g)
            gnorm = float(math.sqrt(max(g @ direction, 0.0)))
        except np.linalg.LinAlgError:
            # steepest ascent scaled to a unit-length first trial step
            direction = g / max(np.linalg.norm(g), 1e-300)
            gnorm = float(np.linalg.norm(g))
        if gnorm < cfg.grad_tol:
            return _Run(u, ll, True, it, gnorm, path, "gradient tolerance reached")

        step = 1.0
        for _ in range(cfg.max_halvings):
            cand = u + step * direction
            terms = obj.terms(cand)
            if terms is not None:
                ll_new = float(terms.sum())
                if ll_new > ll:
                    break
            step *= 0.5
        else:
            return _Run(u, ll, gnorm < math.sqrt(cfg.grad_tol), it, gnorm, path,
                        "line search failed to improve the likelihood")
        rel = (ll_new - ll) / max(abs(ll), 1.0)
        u, ll, base = cand, ll_new, terms
        path.append(ll)
        if rel < cfg.loglik_rel_tol:
            return _Run(u, ll, True, it, gnorm, path, "relative likelihood tolerance reached")
    return _Run(u, ll, False, cfg.max_iterations, gnorm, path, "iteration limit reached")


def _mean_start(r: np.ndarray, n_ar: int, n_ma: int) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares ARMA start (Hannan-Rissanen when MA terms are present)."""
    n = r.size
    if n_ar == 0 and n_ma == 0:
        return float(r.mean()), np.zeros(0), np.zeros(0)
    ehat = np.zeros(n)
    if n_ma:
        m = min(max(10, 2 * (n_ar + n_ma)), n // 10)
        X = np.column_stack([np.ones(n - m)] + [r[m - i: n - i] for i in range(1, m + 1)])
        coef, *_ = np.linalg.lstsq(X, r[m:], rcond=None)
        ehat[m:] = r[m:] - X @ coef
    lag = max(n_ar, n_ma) + (min(max(10, 2 * (n_ar + n_ma)), n // 10) if n_ma else 0)
    cols = [np.ones(n - lag)]
    cols += [r[lag - i: n - i] for i in range(1, n_ar + 1)]
    cols += [ehat[lag - j: n - j] for j in range(1, n_ma + 1)]
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), r[lag:], rcond=None)
    ar = np.clip(coef[1: 1 + n_ar], -0.95, 0.95)
    ma = np.clip(coef[1 + n_ar:], -0.95, 0.95)
    mu = float(r.mean() * (1.0 - ar.sum()))
    return mu, ar, ma


def _start_vectors(r: np.ndarray, layout: _Layout, n_starts: int) -> list[np.ndarray]:
    p, q, n_ar, n_ma = layout.order
    mu, ar, ma = _mean_start(r, n_ar, n_ma)
    out = []
    for a, b, g, d in STARTS[:n_starts]:
        if q == 0:
            a, b = a + b * 0.5, 0.0
        fx = layout.fixed
        delta = fx.get("delta", d)
        alphas = [fx.get(f"alpha[{i + 1}]", a / p) for i in range(p)]
        betas = [fx.get(f"beta[{j + 1}]", b / q) for j in range(q)]
        level = float(np.mean(np.abs(r - r.mean()) ** delta))
        alpha0 = max(level * (1.0 - sum(alphas) - sum(betas)), 1e-12 * max(level, 1e-300))
        shape = layout.dist.shape if layout.dist.shape is not None else _SHAPE_START.get(layout.dist.family)
        params = AparchParams(alpha0=alpha0, alpha=alphas, beta=betas, gamma=[g] * p, delta=delta,
                              mu=mu, ar=ar, ma=ma, check=False)
        dist = DistSpec(layout.dist.family, shape)
        th = layout.vector(params, dist)
        for name, v in layout.fixed.items():
            th[layout.names.index(name)] = v
        out.append(layout.unconstrained(th))
    return out


def information_criteria(loglik: float, k_params: int, n_used: int) -> dict[str, float]:
    """AIC and BIC as totals and per observation."""
    if n_used <= k_params:
        raise DataError(f"need n_used > k_params, got {n_used} <= {k_params}")
    aic = -2.0 * loglik + 2.0 * k_params
    bic = -2.0 * loglik + k_params * math.log(n_used)
    return {"aic_total": aic, "bic_total": bic, "aic_per_obs": aic / n_used, "bic_per_obs": bic / n_used}


@dataclass
class FitResult:
    params: AparchParams
    dist: DistSpec
    loglik: float
    n_used: int
    k_params: int
    aic_total: float
    bic_total: float
    aic_per_obs: float
    bic_per_obs: float
    se_robust: dict[str, float]
    se_opg: dict[str, float]
    t_stats: dict[str, float]
    converged: bool
    iterations: int
    gradient_norm: float
    order: tuple[int, int, int, int] = (1, 1, 0, 0)
    fixed: dict[str, float] = field(default_factory=dict)
    estimates: dict[str, float] = field(default_factory=dict)
    loglik_path: list[float] = field(default_factory=list)
    start_index: int = 0
    messages: list[str] = field(default_factory=list)

    @property
    def free_names(self) -> list[str]:
        return [n for n in param_names(self.order, self.dist) if n not in self.fixed]

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None or not math.isfinite(x) else x

        return {
            "params": self.params.to_dict(self.dist),
            "dist": {"family": self.dist.family, "shape": self.dist.shape},
            "order": list(self.order),
            "fixed": dict(self.fixed),
            "estimates": dict(self.estimates),
            "loglik": self.loglik,
            "n_used": self.n_used,
            "k_params": self.k_params,
            "aic_total": self.aic_total,
            "bic_total": self.bic_total,
            "aic_per_obs": self.aic_per_obs,
            "bic_per_obs": self.bic_per_obs,
            "se_robust": {k: num(v) for k, v in self.se_robust.items()},
            "se_opg": {k: num(v) for k, v in self.se_opg.items()},
            "t_stats": {k: num(v) for k, v in self.t_stats.items()},
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": num(self.gradient_norm),
            "start_index": self.start_index,
            "loglik_path": list(self.loglik_path),
            "messages": list(self.messages),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> FitResult:
        def num(x):
            return math.nan if x is None else float(x)

        dist = DistSpec(d["dist"]["family"], d["dist"]["shape"])
        return cls(
            params=AparchParams.from_dict(d["params"]),
            dist=dist,
            loglik=d["loglik"],
            n_used=d["n_used"],
            k_params=d["k_params"],
            aic_total=d["aic_total"],
            bic_total=d["bic_total"],
            aic_per_obs=d["aic_per_obs"],
            bic_per_obs=d["bic_per_obs"],
            se_robust={k: num(v) for k, v in d["se_robust"].items()},
            se_opg={k: num(v) for k, v in d["se_opg"].items()},
            t_stats={k: num(v) for k, v in d["t_stats"].items()},
            converged=d["converged"],
            iterations=d["iterations"],
            gradient_norm=num(d["gradient_norm"]),
            order=tuple(d["order"]),
            fixed=d.get("fixed", {}),
            estimates=d.get("estimates", {}),
            loglik_path=d.get("loglik_path", []),
            start_index=d.get("start_index", 0),
            messages=d.get("messages", []),
        )

    @classmethod
    def read_json(cls, path: str | Path) -> FitResult:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _returns_array(returns) -> np.ndarray:
    return returns.values if isinstance(returns, ReturnSeries) else np.asarray(returns, dtype=float)


def numerical_hessian(f, x: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Central-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    k = x.size
    H = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = steps[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / steps[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = steps[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
    return H


def sandwich(hessian: np.ndarray, opg: np.ndarray, names: Sequence[str] | None = None) -> np.ndarray:
    """``H^{-1} OPG H^{-1}`` for a log-likelihood Hessian ``H`` (negative definite).

    Raises
    ------
    RankDeficiencyError
        If ``-H`` is not positive definite.
    """
    neg = -np.asarray(hessian, dtype=float)
    scale = np.sqrt(np.abs(np.diag(neg)))
    scale[scale == 0] = 1.0
    w, v = np.linalg.eigh(neg / np.outer(scale, scale))
    if w[0] <= 1e-12 * max(w[-1], 1e-300):
        idx = int(np.argmax(np.abs(v[:, 0])))
        raise RankDeficiencyError(names[idx] if names else f"parameter {idx}")
    hinv = np.linalg.inv(neg)
    return hinv @ opg @ hinv


def _inner_curvature(z: np.ndarray, obj: _Objective, u: np.ndarray) -> np.ndarray:
    """Average negative Hessian of ``g(x e^{-s}; shape(v)) - s`` over the residuals.

    Coordinates are the standardized shift ``x``, log-scale ``s`` and, when
    free, the raw shape coordinate ``v``.
    """
    layout = obj.layout
    shape_name = layout.dist.shape_name
    v_idx = layout.free_names.index(shape_name) if shape_name in layout.free_names else None
    full_idx = layout.names.index(shape_name) if shape_name else None

    def dist_at(v: float) -> DistSpec:
        if v_idx is None:
            return layout.params(layout.theta(u))[1]
        uu = u.copy()
        uu[v_idx] = v
        return DistSpec(layout.dist.family, layout.theta(uu)[full_idx])

    dim = 2 if v_idx is None else 3
    x0 = [0.0, 0.0] + ([u[v_idx]] if v_idx is not None else [])

    def F(x):
        dist = dist_at(x[2]) if dim == 3 else dist_at(0.0)
        return standardized_logpdf((z + x[0]) * math.exp(-x[1]), dist) - x[1]

    h = np.array([1e-4, 1e-4, 1e-4 * max(1.0, abs(x0[-1]))])[:dim]
    return -numerical_hessian(lambda x: float(np.mean(F(x))), np.array(x0), h)


def _covariances(obj: _Objective, u: np.ndarray, hessian: str = "expected") -> tuple[np.ndarray, np.ndarray]:
    """Sandwich and OPG covariances of the free constrained parameters.

    ``hessian="expected"`` builds the curvature from the conditional
    expectation of the per-observation Hessian: numerical first derivatives
    of the residuals and of log sigma, combined through curvature constants
    averaged over the standardized residuals. Unlike the raw second
    derivative it stays well defined when the power term is 1 or below,
    where ``|eps|**delta`` has a kink at zero. ``"numerical"`` differences
    the summed scores directly.

    With ``config.se_smoothing = c > 0`` the expected route is repeated
    ``config.se_passes - 1`` times, each pass differencing coordinate ``i``
    with step ``c`` times its standard error from the previous pass. Near a
    residual of zero the kink makes the log-likelihood move like
    ``|step|**delta`` rather than quadratically, so infinitesimal steps
    overstate the information carried by the mean parameters whenever
    ``delta < 1``. Differencing at the scale of the sampling error measures
    the curvature the estimator actually sees. Smooth coordinates are
    barely affected. If a coarser pass fails the previous one is kept.
    """
    if hessian not in ("expected", "numerical"):
        raise DataError(f"unknown hessian estimator {hessian!r}")
    J = _reparam_jacobian(obj, u)
    h0 = obj.steps(u, obj.config.gradient_step)
    passes = obj.config.se_passes if hessian == "expected" and obj.config.se_smoothing > 0 else 1
    h, out = h0, None
    for i in range(passes):
        try:
            cov_u, cov_opg_u = _covariances_u(obj, u, hessian, h)
        except (RankDeficiencyError, NumericalFailure):
            if out is None:
                raise
            break
        out = J @ cov_u @ J.T, J @ cov_opg_u @ J.T
        h = np.maximum(obj.config.se_smoothing * np.sqrt(np.maximum(np.diag(cov_u), 0.0)), h0)
    return out


def _reparam_jacobian(obj: _Objective, u: np.ndarray) -> np.ndarray:
    layout = obj.layout
    J = np.empty((layout.k, layout.k))
    h = obj.steps(u, 1e-6)
    for i in range(layout.k):
        e = np.zeros_like(u)
        e[i] = h[i]
        J[:, i] = (layout.theta(u + e)[layout.free] - layout.theta(u - e)[layout.free]) / (2 * h[i])
    return J


def _covariances_u(obj: _Objective, u: np.ndarray, hessian: str,
                   h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sandwich and OPG covariances in free coordinates, differencing with ``h``."""
    layout = obj.layout
    S = obj.scores(u, h=h)
    opg = S.T @ S
    H = obj.hessian(u) if hessian == "numerical" else -_expected_information(obj, u, h)
    if not (np.isfinite(H).all() and np.isfinite(opg).all()):
        raise NumericalFailure(-1, "non-finite curvature or outer product")
    cov_u = sandwich(H, opg, layout.free_names)
    try:
        cov_opg_u = np.linalg.inv(opg)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(layout.free_names[0], "singular outer-product matrix") from exc
    return cov_u, cov_opg_u


def _expected_information(obj: _Objective, u: np.ndarray, steps: np.ndarray) -> np.ndarray:
    layout = obj.layout
    r = obj.r

    def paths(v):
        params, dist = layout.params(layout.theta(v))
        eps, h, _ = filter_arrays(r, params, dist, default_init_power(r, params.delta))
        start = params.burn
        return eps[start:], np.log(h[start:]) / params.delta

    eps0, logsig0 = paths(u)
    sigma0 = np.exp(logsig0)
    z = eps0 / sigma0
    a = np.empty((z.size, layout.k))
    b = np.empty((z.size, layout.k))
    for i in range(layout.k):
        e = np.zeros_like(u)
        e[i] = steps[i]
        ep, lp = paths(u + e)
        em, lm = paths(u - e)
        a[:, i] = (ep - em) / (2 * steps[i]) / sigma0
        b[:, i] = (lp - lm) / (2 * steps[i])

    M = _inner_curvature(z, obj, u)
    rows = [a, b]
    shape_name = layout.dist.shape_name
    if shape_name in layout.free_names:
        c = np.zeros_like(a)
        c[:, layout.free_names.index(shape_name)] = 1.0
        rows.append(c)
    J = np.stack(rows, axis=1)  # (n, dim, k)
    return np.einsum("tik,ij,tjl->kl", J, M, J)


def robust_se(returns, result: FitResult, config: OptimizerConfig | None = None,
              hessian: str = "expected") -> dict[str, dict[str, float]]:
    """Bollerslev-Wooldridge sandwich and OPG standard errors at a fitted point.

    Parameters
    ----------
    returns : ReturnSeries or array
    result : FitResult
    config : OptimizerConfig, optional
        Supplies the finite-difference step.
    hessian : {"expected", "numerical"}
        Curvature in the sandwich: the conditional expectation of the
        per-observation Hessian, or central differences of the summed scores.

    Returns
    -------
    dict
        ``{"robust": {name: se}, "opg": {name: se}}`` for the free parameters.

    Raises
    ------
    RankDeficiencyError
        If the Hessian is singular; ``direction`` names the parameter that
        dominates the degenerate eigenvector.
    """
    r = _returns_array(returns)
    layout = _Layout(result.order, result.dist, result.fixed, float(np.std(r)))
    obj = _Objective(r, layout, config or OptimizerConfig())
    u = layout.unconstrained(layout.vector(result.params, result.dist))
    cov_r, cov_o = _covariances(obj, u, hessian)
    return {
        "robust": dict(zip(layout.free_names, np.sqrt(np.maximum(np.diag(cov_r), 0.0)).tolist())),
        "opg": dict(zip(layout.free_names, np.sqrt(np.maximum(np.diag(cov_o), 0.0)).tolist())),
    }


def fit(returns, order: Sequence[int] = (1, 1, 0, 0), dist: DistSpec | str | None = None,
        config: OptimizerConfig | None = None, fixed: Mapping[str, float] | None = None) -> FitResult:
    """Maximum-likelihood fit of an ARMA-APARCH model.

    Parameters
    ----------
    returns : ReturnSeries or array
    order : (p, q, n_ar, n_ma)
    dist : DistSpec or family name
        A given ``shape`` seeds the optimiser; it is still estimated unless
        listed in ``fixed``.
    config : OptimizerConfig
    fixed : dict, optional
        Parameter values held constant, keyed by name (see :func:`param_names`),
        e.g. ``{"delta": 2.0, "gamma[1]": 0.0}``.

    Returns
    -------
    FitResult
        ``converged`` is False when no start met the tolerances; the best
        point found is still reported.
    """
    config = config or OptimizerConfig()
    dist = DistSpec(dist) if isinstance(dist, str) else (dist or DistSpec())
    r = _returns_array(returns)
    if r.size < MIN_OBS:
        raise InsufficientDataError(f"refusing to fit {r.size} observations; at least {MIN_OBS} needed")
    if not np.all(np.isfinite(r)):
        raise DataError("returns contain non-finite values")
    layout = _Layout(order, dist, fixed, float(np.std(r)))
    obj = _Objective(r, layout, config)

    runs = []
    for i, u0 in enumerate(_start_vectors(r, layout, config.n_starts)):
        run = _bhhh(obj, u0)
        logger.debug("start %d: loglik=%.6f converged=%s iters=%d (%s)",
                     i, run.loglik, run.converged, run.iterations, run.message)
        runs.append(run)
    pool = [i for i, run in enumerate(runs) if run.converged] or list(range(len(runs)))
    best_i = max(pool, key=lambda i: runs[i].loglik)
    best = runs[best_i]
    if not math.isfinite(best.loglik):
        raise NumericalFailure(-1, "likelihood undefined at every starting point")

    th = layout.theta(best.u)
    params, fitted_dist = layout.params(th, check=True)
    n_used = r.size - params.burn
    crit = information_criteria(best.loglik, layout.k, n_used)
    messages = [f"start {i}: {run.message} (loglik {run.loglik:.6f})" for i, run in enumerate(runs)]
    nan = dict.fromkeys(layout.free_names, math.nan)
    se_r, se_o = dict(nan), dict(nan)
    try:
        cov_r, cov_o = _covariances(obj, best.u)
        se_r = dict(zip(layout.free_names, np.sqrt(np.maximum(np.diag(cov_r), 0.0)).tolist()))
        se_o = dict(zip(layout.free_names, np.sqrt(np.maximum(np.diag(cov_o), 0.0)).tolist()))
    except (RankDeficiencyError, np.linalg.LinAlgError, NumericalFailure) as exc:
        messages.append(f"standard errors unavailable: {exc}")
    estimates = dict(zip(layout.names, th.tolist()))
    t_stats = {
        n: (estimates[n] / se_r[n] if se_r[n] > 0 else math.nan) for n in layout.free_names
    }
    return FitResult(
        params=params,
        dist=fitted_dist,
        loglik=best.loglik,
        n_used=n_used,
        k_params=layout.k,
        **crit,
        se_robust=se_r,
        se_opg=se_o,
        t_stats=t_stats,
        converged=best.converged,
        iterations=best.iterations,
        gradient_norm=best.gradient_norm,
        order=layout.order,
        fixed=dict(layout.fixed),
        estimates=estimates,
        loglik_path=best.path,
        start_index=best_i,
        messages=messages,
    )


def model_search(returns, orders: Sequence[Sequence[int]], dists: Sequence[DistSpec | str],
                 config: OptimizerConfig | None = None, workers: int = 1) -> list[FitResult]:
    """Fit every (order, distribution) pair and rank by BIC, then AIC.

    Non-converged fits are kept but ranked after all converged ones; fits that
    raise are dropped from the ranking. Ties fall back to grid order, so the
    ranking does not depend on ``workers``.
    """
    grid = [(tuple(o), DistSpec(d) if isinstance(d, str) else d) for o in orders for d in dists]
    if not grid:
        raise DataError("model search grid is empty")

    def one(item):
        order, dist = item
        try:
            return fit(returns, order, dist, config)
        except DataError as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, grid))
    else:
        outcomes = [one(item) for item in grid]

    ranked = []
    failures = []
    for idx, ((order, dist), out) in enumerate(zip(grid, outcomes)):
        label = f"order={order} dist={dist.family}"
        if isinstance(out, Exception):
            failures.append(f"{label}: {out}")
            continue
        if not out.converged:
            out.messages.append("flagged: did not converge")
            failures.append(f"{label}: did not converge")
        ranked.append((not out.converged, out.bic_total, out.aic_total, idx, out))
    if not any(not key[0] for key in ranked):
        raise ModelSearchError(failures, [key[-1] for key in ranked])
    ranked.sort(key=lambda key: key[:4])
    return [key[-1] for key in ranked]


def standardized_residuals(returns, result: FitResult) -> ReturnSeries:
    """``eps_t / sigma_t`` at the fitted parameters over the likelihood window."""
    series = returns if isinstance(returns, ReturnSeries) else ReturnSeries.from_values(returns)
    params = result.params
    eps, h, _ = filter_arrays(series.values, params, result.dist)
    start = params.burn
    z = eps[start:] / h[start:] ** (1.0 / params.delta)
    return ReturnSeries(z, series.timestamps[start:], series.intervals_per_day)


def delta_power_tests(result: FitResult | float, se: float | None = None) -> dict[str, float]:
    """t-statistics of the power term against 1 and against 2.

    Accepts a fit (using its robust standard error) or a bare ``(delta, se)``.
    """
    if isinstance(result, FitResult):
        delta = result.params.delta
        se = result.se_robust.get("delta", math.nan) if se is None else se
    else:
        delta = float(result)
    if se is None or not se > 0:
        return {"t_vs_1": math.nan, "t_vs_2": math.nan}
    return {"t_vs_1": (delta - 1.0) / se, "t_vs_2": (delta - 2.0) / se}


def _stars(t: float) -> str:
    if not math.isfinite(t):
        return ""
    pval = 2.0 * stats.norm.sf(abs(t))
    return "***" if pval < 0.01 else "**" if pval < 0.05 else "*" if pval < 0.10 else ""


def format_report(result: FitResult, label: str = "") -> str:
    """Fixed-width text table: estimates with t-statistics and significance stars.

    The power row's t-statistic tests ``delta = 1``.
    """
    lines = []
    title = f"ARMA{result.order[2:]}-APARCH{result.order[:2]} [{result.dist.family}"
    title += f", shape={result.dist.shape:.4g}]" if result.dist.shape is not None else "]"
    if label:
        title = f"{label}: {title}"
    lines.append(title)
    lines.append("-" * 44)
    dtest = delta_power_tests(result)
    for name, value in result.estimates.items():
        if name in result.fixed:
            lines.append(f"{name:<10}{value:>14.6g}   (fixed)")
            continue
        t = dtest["t_vs_1"] if name == "delta" else result.t_stats.get(name, math.nan)
        tcell = f"({t:.2f}){_stars(t)}" if math.isfinite(t) else "(n/a)"
        lines.append(f"{name:<10}{value:>14.6g}   {tcell}")
    lines.append("-" * 44)
    lines.append(f"{'Likelihood':<14}{result.loglik:>16.2f}")
    lines.append(f"{'AIC':<14}{result.aic_total:>16.2f}   ({result.aic_per_obs:.4f} per obs)")
    lines.append(f"{'BIC':<14}{result.bic_total:>16.2f}   ({result.bic_per_obs:.4f} per obs)")
    lines.append(f"n_used={result.n_used} k={result.k_params} converged={result.converged} "
                 f"iterations={result.iterations}")
    lines.append("t-statistics use Bollerslev-Wooldridge robust errors; delta is tested against 1.")
    lines.append("* 10%, ** 5%, *** 1% two-sided significance.")
    return "\n".join(lines) + "\n"
