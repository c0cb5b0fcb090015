"""CSG EMOS link models, scoring-rule estimation and rolling calibration.

The predictive law for a forecast case is a censored-shifted gamma whose
underlying mean is an affine function of the (group-summed) ensemble and
whose variance follows one of five link variants, the default being an
affine function of the ensemble mean.  All coefficients and the shift are
constrained nonnegative and estimated jointly by minimizing the mean CRPS
(or the mean log score) over a rolling training window.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy import optimize

from .distributions import (
    CsgParams,
    _crps_core,
    _logscore_core,
    crps_batch,
    quantile_batch,
)
from .errors import (
    DataError,
    DomainError,
    GroupingError,
    InsufficientDataError,
    MissingMemberError,
    WindowTooLongError,
)

if TYPE_CHECKING:  # pragma: no cover - import only for annotations
    import datetime as dt

    from .dataio import Dataset, ForecastCase

__all__ = [
    "VARIANCE_LINKS",
    "GroupingScheme",
    "FeatureVector",
    "VarianceLink",
    "EmosCoefficients",
    "FitConfig",
    "PredictiveForecast",
    "DailyCalibration",
    "WindowScore",
    "extract_features",
    "predict",
    "mean_crps",
    "fit",
    "rolling_calibrate",
    "tune_window",
    "coefficients_to_json",
    "coefficients_from_json",
]

#: Variance link variants: sigma^2 as a function of ensemble statistics.
#:   mean          b0 + b1 * ens_mean        (default)
#:   var           b0 + b1 * ens_var
#:   md            b0 + b1 * ens_md
#:   var+mean      b0 + b1 * ens_var + b2 * ens_mean
#:   mean-squared  (b0 + b1 * ens_mean)^2
VARIANCE_LINKS = ("mean", "var", "md", "var+mean", "mean-squared")

_LINK_N_COEFFS = {"mean": 2, "var": 2, "md": 2, "var+mean": 3, "mean-squared": 2}


@dataclass(frozen=True)
class GroupingScheme:
    """Partition of the ensemble members into exchangeable groups.

    ``groups`` holds member indices (into ``member_names``) per group; a
    scheme with one singleton group per member is the fully
    non-exchangeable model.
    """

    member_names: tuple[str, ...]
    groups: tuple[tuple[int, ...], ...]
    group_names: tuple[str, ...] | None = None

    def __post_init__(self):
        m_total = len(self.member_names)
        if m_total == 0:
            raise GroupingError("at least one ensemble member is required")
        if not self.groups or any(len(g) == 0 for g in self.groups):
            raise GroupingError("every group must contain at least one member")
        flat = [i for g in self.groups for i in g]
        if sorted(flat) != list(range(m_total)):
            raise GroupingError(
                "groups must assign every member column to exactly one group"
            )
        if self.group_names is not None and len(self.group_names) != len(self.groups):
            raise GroupingError("group_names must match the number of groups")

    @property
    def n_members(self) -> int:
        return len(self.member_names)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def group_sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    @classmethod
    def singletons(cls, member_names: Sequence[str]) -> "GroupingScheme":
        """One group per member: the non-exchangeable link model."""
        names = tuple(member_names)
        return cls(names, tuple((i,) for i in range(len(names))), names)


@dataclass(frozen=True)
class FeatureVector:
    """Per-case ensemble statistics entering the link model."""

    group_sums: tuple[float, ...]
    ens_mean: float
    ens_var: float
    ens_md: float


def extract_features(case: "ForecastCase", grouping: GroupingScheme) -> FeatureVector:
    """Group sums, ensemble mean, variance and mean absolute difference.

    Reductions use exact summation so permuting members inside a group
    leaves the result bit-identical.
    """
    members = case.members
    if members is None or len(members) != grouping.n_members or any(
        v is None for v in members
    ):
        raise MissingMemberError(
            f"case {case.date} {case.station}: expected {grouping.n_members} members"
        )
    m_total = grouping.n_members
    sums = tuple(math.fsum(members[i] for i in g) for g in grouping.groups)
    ens_mean = math.fsum(sums) / m_total
    if m_total == 1:
        return FeatureVector(sums, ens_mean, 0.0, 0.0)
    ens_var = math.fsum((v - ens_mean) ** 2 for v in members) / (m_total - 1)
    ens_md = math.fsum(
        abs(members[i] - members[j]) for i in range(m_total) for j in range(m_total)
    ) / (m_total * m_total)
    return FeatureVector(sums, ens_mean, ens_var, ens_md)


@dataclass(frozen=True)
class VarianceLink:
    """Variance-link variant plus its nonnegative coefficients."""

    kind: str
    coefficients: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in VARIANCE_LINKS:
            raise DomainError(f"unknown variance link {self.kind!r}")
        expected = _LINK_N_COEFFS[self.kind]
        if len(self.coefficients) != expected:
            raise DomainError(
                f"variance link {self.kind!r} takes {expected} coefficients"
            )
        if any(not math.isfinite(b) or b < 0.0 for b in self.coefficients):
            raise DomainError("variance coefficients must be finite and >= 0")


@dataclass(frozen=True)
class EmosCoefficients:
    """Fitted link-model parameters: mean coefficients, variance link, shift."""

    mean_coefficients: tuple[float, ...]  # (a0, a1 ... am), aligned with grouping
    variance_link: VarianceLink
    shift: float
    grouping: GroupingScheme
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.mean_coefficients) != self.grouping.n_groups + 1:
            raise DomainError(
                "mean coefficients must be one intercept plus one weight per group"
            )
        if any(not math.isfinite(a) or a < 0.0 for a in self.mean_coefficients):
            raise DomainError("mean coefficients must be finite and >= 0")
        if not math.isfinite(self.shift) or self.shift < 0.0:
            raise DomainError("shift must be finite and >= 0")


@dataclass(frozen=True)
class FitConfig:
    """Estimation settings.

    ``objective`` selects mean CRPS (default) or the mean log score;
    ``init`` chooses fixed default starting values or a warm start from
    the previous day's coefficients; the floors keep the mean/variance
    conversion to gamma parameters defined on degenerate ensembles.
    """

    objective: str = "crps"  # "crps" | "logscore"
    init: str = "fixed"  # "fixed" | "warm"
    variance_link: str = "mean"
    gtol: float = 1e-6
    max_iter: int = 500
    mu_floor: float = 1e-4
    sigma2_floor: float = 1e-6
    min_cases: int = 50
    bounded: bool = False  # box-constrained L-BFGS-B instead of square reparam

    def __post_init__(self):
        if self.objective not in ("crps", "logscore"):
            raise DomainError(f"unknown objective {self.objective!r}")
        if self.init not in ("fixed", "warm"):
            raise DomainError(f"unknown initialization mode {self.init!r}")
        if self.variance_link not in VARIANCE_LINKS:
            raise DomainError(f"unknown variance link {self.variance_link!r}")
        if self.gtol <= 0 or self.max_iter <= 0:
            raise DomainError("tolerances and iteration caps must be positive")
        if self.mu_floor <= 0 or self.sigma2_floor <= 0:
            raise DomainError("floors must be positive")


@dataclass(frozen=True)
class PredictiveForecast:
    """A CSG predictive law attached to the forecast case it calibrates."""

    case: "ForecastCase"
    params: CsgParams


@dataclass(frozen=True)
class DailyCalibration:
    """One verification day: the fitted coefficients and its forecasts."""

    date: "dt.date"
    coefficients: EmosCoefficients
    forecasts: tuple[PredictiveForecast, ...]


@dataclass(frozen=True)
class WindowScore:
    """Verification summary of one training-window length."""

    window: int
    mean_crps: float
    mae: float


# ---------------------------------------------------------------------------
# Design matrices and the predictive map
# ---------------------------------------------------------------------------

def _design(cases: Sequence["ForecastCase"], grouping: GroupingScheme,
            cache: dict | None = None):
    """Stack per-case features (and observations where present) into arrays.

    ``cache`` maps cases to feature vectors so rolling windows, which
    overlap almost entirely day to day, extract each case only once.
    """
    n = len(cases)
    sums = np.empty((n, grouping.n_groups))
    ens_mean = np.empty(n)
    ens_var = np.empty(n)
    ens_md = np.empty(n)
    obs = np.full(n, np.nan)
    for i, case in enumerate(cases):
        fv = cache.get(case) if cache is not None else None
        if fv is None:
            fv = extract_features(case, grouping)
            if cache is not None:
                cache[case] = fv
        sums[i] = fv.group_sums
        ens_mean[i] = fv.ens_mean
        ens_var[i] = fv.ens_var
        ens_md[i] = fv.ens_md
        if case.observation is not None:
            obs[i] = case.observation
    return sums, ens_mean, ens_var, ens_md, obs


def _mu_sigma2(params: np.ndarray, link_kind: str, sums, ens_mean, ens_var, ens_md, cfg: FitConfig):
    """Link-model mean and variance for a flat parameter vector.

    Layout of ``params``: a0, a1..am, then the variance coefficients, then
    the shift as the final entry.  All entries are already nonnegative.
    """
    m = sums.shape[1]
    a = params[: m + 1]
    b = params[m + 1 : -1]
    mu = a[0] + sums @ a[1:]
    if link_kind == "mean":
        sigma2 = b[0] + b[1] * ens_mean
    elif link_kind == "var":
        sigma2 = b[0] + b[1] * ens_var
    elif link_kind == "md":
        sigma2 = b[0] + b[1] * ens_md
    elif link_kind == "var+mean":
        sigma2 = b[0] + b[1] * ens_var + b[2] * ens_mean
    else:  # mean-squared
        root = b[0] + b[1] * ens_mean
        sigma2 = root * root
    mu = np.maximum(mu, cfg.mu_floor)
    sigma2 = np.maximum(sigma2, cfg.sigma2_floor)
    return mu, sigma2


def predict(coefficients: EmosCoefficients, fv: FeatureVector,
            cfg: FitConfig | None = None) -> CsgParams:
    """Map ensemble features to the CSG predictive parameters.

    The linked mean and variance convert to gamma shape/scale via
    k = mu^2/sigma^2 and theta = sigma^2/mu, floored so the conversion
    stays defined for all-zero ensembles.
    """
    if len(fv.group_sums) != coefficients.grouping.n_groups:
        raise DomainError("feature vector does not match the coefficient grouping")
    cfg = cfg or FitConfig(min_cases=1)
    a = coefficients.mean_coefficients
    b = coefficients.variance_link.coefficients
    mu = a[0] + math.fsum(w * s for w, s in zip(a[1:], fv.group_sums))
    kind = coefficients.variance_link.kind
    if kind == "mean":
        sigma2 = b[0] + b[1] * fv.ens_mean
    elif kind == "var":
        sigma2 = b[0] + b[1] * fv.ens_var
    elif kind == "md":
        sigma2 = b[0] + b[1] * fv.ens_md
    elif kind == "var+mean":
        sigma2 = b[0] + b[1] * fv.ens_var + b[2] * fv.ens_mean
    else:
        sigma2 = (b[0] + b[1] * fv.ens_mean) ** 2
    mu = max(mu, cfg.mu_floor)
    sigma2 = max(sigma2, cfg.sigma2_floor)
    return CsgParams(shape=mu * mu / sigma2, scale=sigma2 / mu, shift=coefficients.shift)


def _params_vector(coefficients: EmosCoefficients) -> np.ndarray:
    return np.concatenate([
        np.asarray(coefficients.mean_coefficients, float),
        np.asarray(coefficients.variance_link.coefficients, float),
        [coefficients.shift],
    ])


def _coefficients_from_vector(params: np.ndarray, grouping: GroupingScheme,
                              link_kind: str, diagnostics: dict) -> EmosCoefficients:
    m = grouping.n_groups
    nb = _LINK_N_COEFFS[link_kind]
    return EmosCoefficients(
        mean_coefficients=tuple(float(v) for v in params[: m + 1]),
        variance_link=VarianceLink(link_kind, tuple(float(v) for v in params[m + 1 : m + 1 + nb])),
        shift=float(params[-1]),
        grouping=grouping,
        diagnostics=diagnostics,
    )


def _objective_builder(cases, grouping, cfg, cache=None):
    sums, ens_mean, ens_var, ens_md, obs = _design(cases, grouping, cache)
    if np.any(np.isnan(obs)):
        raise DataError("every training case needs a verifying observation")
    score = _crps_core if cfg.objective == "crps" else _logscore_core

    def objective(params: np.ndarray) -> float:
        mu, sigma2 = _mu_sigma2(params, cfg.variance_link, sums, ens_mean, ens_var, ens_md, cfg)
        shape = mu * mu / sigma2
        scale = sigma2 / mu
        values = score(shape, scale, np.float64(params[-1]), obs)
        return float(np.mean(values))

    return objective


def mean_crps(coefficients: EmosCoefficients, cases: Sequence["ForecastCase"],
              cfg: FitConfig | None = None) -> float:
    """Mean closed-form CRPS of the coefficient set over training cases."""
    if len(cases) == 0:
        raise InsufficientDataError("empty training set")
    cfg = cfg or FitConfig(min_cases=1)
    eval_cfg = replace(cfg, objective="crps")
    objective = _objective_builder(cases, coefficients.grouping, eval_cfg)
    return objective(_params_vector(coefficients))


def _default_initial(grouping: GroupingScheme, link_kind: str) -> np.ndarray:
    m = grouping.n_groups
    a = [0.1] + [1.0 / m] * m
    nb = _LINK_N_COEFFS[link_kind]
    b = [1.0, 0.5, 0.1][:nb]
    return np.array(a + b + [0.1])


def fit(cases: Sequence["ForecastCase"], grouping: GroupingScheme,
        cfg: FitConfig | None = None,
        initial: EmosCoefficients | None = None,
        _feature_cache: dict | None = None) -> EmosCoefficients:
    """Estimate coefficients by minimizing the configured mean score.

    Nonnegativity is enforced by optimizing the unconstrained square
    roots of the parameters under BFGS (or, with ``cfg.bounded``, by
    box-constrained L-BFGS-B on the parameters themselves).  The fit is
    deterministic for a given configuration; non-convergence is surfaced
    as a warning on the best coefficients found.
    """
    cfg = cfg or FitConfig()
    if len(cases) < cfg.min_cases:
        raise InsufficientDataError(
            f"{len(cases)} training cases, need at least {cfg.min_cases}"
        )
    if initial is not None:
        if initial.grouping.n_groups != grouping.n_groups:
            raise DomainError("warm-start coefficients do not match the grouping")
        x0 = _params_vector(initial)
    else:
        x0 = _default_initial(grouping, cfg.variance_link)
    objective = _objective_builder(cases, grouping, cfg, _feature_cache)
    f0 = objective(x0)

    with warnings.catch_warnings():
        # line searches probe extreme parameter values; overflow there is benign
        warnings.simplefilter("ignore", RuntimeWarning)
        if cfg.bounded:
            res = optimize.minimize(
                objective,
                x0,
                method="L-BFGS-B",
                bounds=[(0.0, None)] * x0.size,
                options={"maxiter": cfg.max_iter, "gtol": cfg.gtol},
            )
            best = np.maximum(res.x, 0.0)
        else:
            res = optimize.minimize(
                lambda u: objective(u * u),
                np.sqrt(x0),
                method="BFGS",
                options={"maxiter": cfg.max_iter, "gtol": cfg.gtol},
            )
            best = res.x * res.x

    f_best = objective(best)
    if f_best > f0:  # optimizer wandered; keep the starting point
        best, f_best = x0, f0
    # line searches stall once finite-difference gradients hit their noise
    # floor; a stall with a near-zero gradient is convergence in practice
    grad_norm = float(np.max(np.abs(res.jac))) if getattr(res, "jac", None) is not None else math.inf
    converged = bool(res.success) or grad_norm <= 100.0 * cfg.gtol
    if not converged:
        warnings.warn(
            f"EMOS fit did not converge ({res.message}); "
            "returning best coefficients found",
            RuntimeWarning,
            stacklevel=2,
        )
    diagnostics = {
        "objective": cfg.objective,
        "iterations": int(res.nit),
        "function_evals": int(res.nfev),
        "initial_objective": f0,
        "final_objective": f_best,
        "converged": converged,
        "n_cases": len(cases),
    }
    return _coefficients_from_vector(best, grouping, cfg.variance_link, diagnostics)


# ---------------------------------------------------------------------------
# Rolling calibration and window tuning
# ---------------------------------------------------------------------------

def _forecasts_for(coefficients: EmosCoefficients, cases, grouping, cfg, cache=None):
    out = []
    for case in cases:
        fv = cache.get(case) if cache is not None else None
        if fv is None:
            fv = extract_features(case, grouping)
            if cache is not None:
                cache[case] = fv
        out.append(PredictiveForecast(case, predict(coefficients, fv, cfg)))
    return tuple(out)


def rolling_calibrate(dataset: "Dataset", grouping: GroupingScheme, window: int,
                      cfg: FitConfig | None = None) -> list[DailyCalibration]:
    """Fit one regional coefficient set per verification day.

    Each day uses the cases of the ``window`` most recent available dates
    strictly before it (dates removed by the missing-data policy never
    count toward the window).  With warm-start initialization each day
    starts from the previous day's estimate.
    """
    cfg = cfg or FitConfig()
    if window < 1:
        raise DomainError("window must be at least one day")
    dates = dataset.dates
    if len(dates) <= window:
        raise WindowTooLongError(
            f"window of {window} days needs more than {window} available dates, "
            f"dataset has {len(dates)}"
        )
    results: list[DailyCalibration] = []
    previous: EmosCoefficients | None = None
    cache: dict = {}
    for i in range(window, len(dates)):
        target = dates[i]
        train_cases = dataset.cases_for_dates(dates[i - window : i])
        start = previous if (cfg.init == "warm" and previous is not None) else None
        coefficients = fit(train_cases, grouping, cfg, initial=start, _feature_cache=cache)
        previous = coefficients
        forecasts = _forecasts_for(coefficients, dataset.cases_on(target), grouping, cfg, cache)
        results.append(DailyCalibration(target, coefficients, forecasts))
    return results


def tune_window(dataset: "Dataset", grouping: GroupingScheme,
                grid: Sequence[int], cfg: FitConfig | None = None) -> list[WindowScore]:
    """Score every window length on one common verification period.

    The verification dates are those following the first ``max(grid)``
    available dates, so all rows of the returned table are directly
    comparable.  MAE refers to the median forecast.
    """
    cfg = cfg or FitConfig()
    if len(grid) == 0:
        raise DomainError("window grid must be nonempty")
    grid = sorted(set(int(n) for n in grid))
    if grid[0] < 1:
        raise DomainError("window lengths must be positive")
    dates = dataset.dates
    n_max = grid[-1]
    if len(dates) <= n_max:
        raise WindowTooLongError(
            f"longest window ({n_max}) needs more than {n_max} available dates, "
            f"dataset has {len(dates)}"
        )
    first_target = n_max  # index of the first common verification date
    rows: list[WindowScore] = []
    cache: dict = {}
    for n in grid:
        crps_values: list[float] = []
        abs_errors: list[float] = []
        previous: EmosCoefficients | None = None
        for i in range(first_target, len(dates)):
            target = dates[i]
            train_cases = dataset.cases_for_dates(dates[i - n : i])
            start = previous if (cfg.init == "warm" and previous is not None) else None
            coefficients = fit(train_cases, grouping, cfg, initial=start, _feature_cache=cache)
            previous = coefficients
            for forecast in _forecasts_for(coefficients, dataset.cases_on(target), grouping, cfg, cache):
                obs = forecast.case.observation
                if obs is None:
                    raise DataError("verification cases need observations")
                p = forecast.params
                crps_values.append(float(crps_batch(p.shape, p.scale, p.shift, obs)))
                median = float(quantile_batch(p.shape, p.scale, p.shift, 0.5))
                abs_errors.append(abs(median - obs))
        rows.append(WindowScore(n, float(np.mean(crps_values)), float(np.mean(abs_errors))))
    return rows


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def coefficients_to_json(coefficients: EmosCoefficients) -> str:
    """Serialize fitted coefficients (with fit diagnostics) to JSON."""
    grouping = coefficients.grouping
    doc = {
        "schema": "csg-emos-coefficients/1",
        "grouping": {
            "member_names": list(grouping.member_names),
            "groups": [list(g) for g in grouping.groups],
            "group_names": list(grouping.group_names) if grouping.group_names else None,
        },
        "mean_coefficients": list(coefficients.mean_coefficients),
        "variance_link": {
            "kind": coefficients.variance_link.kind,
            "coefficients": list(coefficients.variance_link.coefficients),
        },
        "shift": coefficients.shift,
        "diagnostics": coefficients.diagnostics,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def coefficients_from_json(text: str) -> EmosCoefficients:
    """Inverse of :func:`coefficients_to_json`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid coefficients JSON: {exc}") from exc
    try:
        g = doc["grouping"]
        grouping = GroupingScheme(
            member_names=tuple(g["member_names"]),
            groups=tuple(tuple(int(i) for i in grp) for grp in g["groups"]),
            group_names=tuple(g["group_names"]) if g.get("group_names") else None,
        )
        return EmosCoefficients(
            mean_coefficients=tuple(float(v) for v in doc["mean_coefficients"]),
            variance_link=VarianceLink(
                doc["variance_link"]["kind"],
                tuple(float(v) for v in doc["variance_link"]["coefficients"]),
            ),
            shift=float(doc["shift"]),
            grouping=grouping,
            diagnostics=dict(doc.get("diagnostics") or {}),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"coefficients JSON is missing fields: {exc}") from exc
