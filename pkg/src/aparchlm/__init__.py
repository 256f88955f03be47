"""Long-memory diagnostics and APARCH volatility modelling for intraday returns."""

from .aparch import (
    PRESETS,
    AparchParams,
    DistSpec,
    classify_nested,
    filter,
    half_life,
    loglik_density,
    simulate,
)
from .longmem import acf, count_significant, estimate_d, periodicity_profile, power_sweep
from .series import (
    BarSeries,
    PowerTransform,
    ReturnSeries,
    TradingCalendar,
    load_calendar,
    log_returns,
    moments,
    power_transform,
)

__version__ = "0.1.0"

__all__ = [
    "PRESETS",
    "AparchParams",
    "BarSeries",
    "DistSpec",
    "PowerTransform",
    "ReturnSeries",
    "TradingCalendar",
    "acf",
    "classify_nested",
    "count_significant",
    "estimate_d",
    "filter",
    "half_life",
    "load_calendar",
    "log_returns",
    "loglik_density",
    "moments",
    "periodicity_profile",
    "power_sweep",
    "power_transform",
    "simulate",
]
