"""Scoring, calibration diagnostics and significance tests for forecasts.

Implements the instruments used to judge probabilistic precipitation
forecasts: ensemble and analytic CRPS, Brier and skill scores, PIT values
with randomization at zero, verification ranks with randomized ties,
reliability tables over eleven probability bins, central prediction
intervals, the Diebold-Mariano statistic and Kolmogorov-Smirnov uniformity
tests.  :func:`summarize` aggregates everything into a serializable report
consumed by the plotting front end.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special as _sp

from .distributions import cdf_batch, crps_batch, point_mass_batch, quantile_batch
from .emos import PredictiveForecast
from .errors import AlignmentError, DataError, DomainError, InsufficientDataError

__all__ = [
    "RELIABILITY_BREAKS",
    "ReliabilityTable",
    "IntervalStats",
    "VerificationReport",
    "crps_ensemble",
    "brier",
    "skill_score",
    "pit",
    "rank",
    "reliability",
    "central_interval",
    "dm_statistic",
    "ks_uniform",
    "ks_subsample_mean_p",
    "summarize",
    "report_to_json",
    "report_from_json",
]

#: Break points bounding the eleven reliability bins on the unit interval.
RELIABILITY_BREAKS = tuple(round(0.05 + 0.1 * i, 2) for i in range(10))


def crps_ensemble(members, x: float) -> float:
    """CRPS of the empirical ensemble CDF in its energy form.

    ``mean |f_i - x| - 0.5 * mean |f_i - f_j|`` over all member pairs.
    """
    f = np.asarray(members, dtype=float)
    if f.size == 0:
        raise DataError("ensemble must contain at least one member")
    term_obs = np.mean(np.abs(f - x))
    term_pairs = np.mean(np.abs(f[:, None] - f[None, :]))
    return float(term_obs - 0.5 * term_pairs)


def brier(cdf: Callable[[float], float], x: float, threshold: float) -> float:
    """Brier score of the threshold-exceedance event: (F(y) - [y >= x])^2."""
    if threshold < 0.0:
        raise DomainError("threshold must be >= 0")
    indicator = 1.0 if threshold >= x else 0.0
    diff = float(cdf(threshold)) - indicator
    return diff * diff


def skill_score(score: float, ref_score: float) -> float:
    """Relative improvement over a reference: 1 - score/ref_score."""
    if ref_score == 0.0:
        raise DomainError("reference score must be nonzero for a skill score")
    return 1.0 - score / ref_score


def pit(cdf: Callable[[float], float], x: float, rng: np.random.Generator) -> float:
    """Probability integral transform, randomized on [0, F(0)] at zero."""
    if x < 0.0:
        raise DomainError("observation must be >= 0")
    if x > 0.0:
        return float(cdf(x))
    return float(rng.uniform(0.0, float(cdf(0.0))))


def rank(members, x: float, rng: np.random.Generator) -> int:
    """Rank of the observation in the pooled ensemble, ties randomized.

    Returns a value in 1..M+1; an observation tied with ``t`` members
    lands uniformly on one of the ``t+1`` admissible positions.
    """
    f = np.asarray(members, dtype=float)
    if f.size == 0:
        raise DataError("ensemble must contain at least one member")
    below = int(np.sum(f < x))
    ties = int(np.sum(f == x))
    return below + 1 + int(rng.integers(0, ties + 1))


@dataclass(frozen=True)
class ReliabilityTable:
    """Binned forecast probabilities against observed frequencies.

    Bins are half-open ``[break, next.)`` with the final bin closed at 1;
    empty bins carry ``None`` instead of fabricated zeros, and
    ``log10_count`` feeds the inset histograms (empty bins omitted).
    """

    breaks: tuple[float, ...]
    mean_prob: tuple[float | None, ...]
    obs_freq: tuple[float | None, ...]
    count: tuple[int, ...]
    log10_count: tuple[float | None, ...]


def reliability(probs, outcomes) -> ReliabilityTable:
    """Bin event probabilities and binary outcomes into a reliability table."""
    p = np.asarray(probs, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    if p.shape != y.shape or p.ndim != 1:
        raise AlignmentError("probabilities and outcomes must be aligned 1-D arrays")
    if np.any((p < 0.0) | (p > 1.0)):
        raise DomainError("probabilities must lie in [0, 1]")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DomainError("outcomes must be binary")
    edges = np.asarray(RELIABILITY_BREAKS)
    idx = np.digitize(p, edges, right=False)  # 0..10, [edge, next) convention
    n_bins = edges.size + 1
    mean_prob: list[float | None] = []
    obs_freq: list[float | None] = []
    count: list[int] = []
    log10_count: list[float | None] = []
    for b in range(n_bins):
        mask = idx == b
        n = int(np.sum(mask))
        count.append(n)
        if n == 0:
            mean_prob.append(None)
            obs_freq.append(None)
            log10_count.append(None)
        else:
            mean_prob.append(float(np.mean(p[mask])))
            obs_freq.append(float(np.mean(y[mask])))
            log10_count.append(math.log10(n))
    return ReliabilityTable(
        tuple(RELIABILITY_BREAKS),
        tuple(mean_prob),
        tuple(obs_freq),
        tuple(count),
        tuple(log10_count),
    )


@dataclass(frozen=True)
class IntervalStats:
    """Coverage and sharpness of one central prediction interval."""

    level: float
    coverage: float
    avg_width: float


def central_interval(quantile: Callable[[float], float], level: float) -> tuple[float, float]:
    """Central interval (q_{a/2}, q_{1-a/2}) for nominal coverage ``level``."""
    if not 0.0 < level < 1.0:
        raise DomainError("interval level must lie strictly between 0 and 1")
    alpha = 1.0 - level
    return float(quantile(alpha / 2.0)), float(quantile(1.0 - alpha / 2.0))


def dm_statistic(scores_a, scores_b, lag: int = 0) -> float:
    """Diebold-Mariano statistic for two aligned score series.

    ``t = mean(d) / sqrt(v / n)`` with ``d = scores_a - scores_b`` and
    ``v`` the long-run variance (Bartlett window of length ``lag``; the
    default ``lag=0`` is the plain sample variance).  Negative values
    favour series A when scores are negatively oriented.  A fully
    degenerate difference (zero variance, zero mean) yields 0.0 with a
    warning.
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise AlignmentError("score series must be aligned 1-D arrays")
    n = a.size
    if n < 30:
        raise InsufficientDataError(f"need at least 30 aligned scores, got {n}")
    if lag < 0 or lag >= n:
        raise DomainError("lag window must satisfy 0 <= lag < n")
    d = a - b
    d_bar = float(np.mean(d))
    centred = d - d_bar
    v = float(np.mean(centred * centred))
    for j in range(1, lag + 1):
        gamma_j = float(np.mean(centred[j:] * centred[:-j]))
        v += 2.0 * (1.0 - j / (lag + 1.0)) * gamma_j
    if v <= 0.0:
        if d_bar == 0.0:
            warnings.warn(
                "degenerate score difference: zero variance and zero mean",
                RuntimeWarning,
                stacklevel=2,
            )
            return 0.0
        warnings.warn(
            "degenerate score difference: zero variance with nonzero mean",
            RuntimeWarning,
            stacklevel=2,
        )
        return math.copysign(math.inf, d_bar)
    return d_bar / math.sqrt(v / n)


def ks_uniform(values) -> float:
    """One-sample Kolmogorov-Smirnov p-value against Uniform(0, 1).

    Uses the asymptotic Kolmogorov distribution, adequate for n >= 10.
    """
    u = np.asarray(values, dtype=float)
    if u.ndim != 1 or u.size < 10:
        raise InsufficientDataError("need a 1-D sample of at least 10 values")
    if np.any((u < 0.0) | (u > 1.0)):
        raise DomainError("values must lie in [0, 1]")
    n = u.size
    s = np.sort(u)
    grid = np.arange(1, n + 1) / n
    d_plus = float(np.max(grid - s))
    d_minus = float(np.max(s - (grid - 1.0 / n)))
    d = max(d_plus, d_minus)
    return float(_sp.kolmogorov(d * math.sqrt(n)))


def ks_subsample_mean_p(values, reps: int, size: int, rng: np.random.Generator) -> float:
    """Mean KS p-value over random subsamples drawn without replacement.

    Large samples make the KS test reject for visually negligible
    departures; averaging the p-value over moderate subsamples restores a
    usable summary.
    """
    u = np.asarray(values, dtype=float)
    if size > u.size:
        raise DomainError(f"subsample size {size} exceeds sample size {u.size}")
    if reps < 1:
        raise DomainError("need at least one repetition")
    total = 0.0
    for _ in range(reps):
        idx = rng.choice(u.size, size=size, replace=False)
        total += ks_uniform(u[idx])
    return total / reps


# ---------------------------------------------------------------------------
# Aggregate report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerificationReport:
    """All verification instruments for one forecast collection.

    Per-case arrays are retained alongside every aggregate so each summary
    number can be recomputed from the report alone.
    """

    n_cases: int
    n_members: int
    thresholds: tuple[float, ...]
    levels: tuple[float, ...]
    mean_crps: float
    crps_cases: tuple[float, ...]
    reference_mean_crps: float
    reference_crps_cases: tuple[float, ...]
    crpss: float
    mae_median: float
    abs_error_cases: tuple[float, ...]
    reference_mae_median: float
    reference_abs_error_cases: tuple[float, ...]
    intervals: tuple[IntervalStats, ...]
    reference_intervals: tuple[IntervalStats, ...]
    brier_scores: tuple[float, ...]
    reference_brier_scores: tuple[float, ...]
    brier_skill_scores: tuple[float, ...]
    reliability_tables: tuple[ReliabilityTable, ...]
    reference_reliability_tables: tuple[ReliabilityTable, ...]
    pit_values: tuple[float, ...]
    rank_counts: tuple[int, ...]
    dm_crps: float
    dm_mae: float
    ks_pit_p: float
    ks_subsample: dict | None = field(default=None)


def _interval_stats_csg(shapes, scales, shifts, pit_values, level) -> IntervalStats:
    # coverage via the randomized PIT: equivalent to lying between the two
    # quantiles for positive observations, and splitting the zero atom in
    # proportion to its mass above alpha/2 (a closed interval would
    # systematically over-cover censored laws)
    alpha = 1.0 - level
    covered = (pit_values >= alpha / 2.0) & (pit_values <= 1.0 - alpha / 2.0)
    lo = quantile_batch(shapes, scales, shifts, np.full_like(shapes, alpha / 2.0))
    hi = quantile_batch(shapes, scales, shifts, np.full_like(shapes, 1.0 - alpha / 2.0))
    return IntervalStats(float(level), float(np.mean(covered)), float(np.mean(hi - lo)))


def _interval_stats_ensemble(members, obs, level) -> IntervalStats:
    # the raw-ensemble central interval is the ensemble range, whose nominal
    # coverage (M-1)/(M+1) is what `level` should be chosen to match
    lo = np.min(members, axis=1)
    hi = np.max(members, axis=1)
    covered = (obs >= lo) & (obs <= hi)
    return IntervalStats(float(level), float(np.mean(covered)), float(np.mean(hi - lo)))


def summarize(
    forecasts: Sequence[PredictiveForecast],
    thresholds: Sequence[float],
    levels: Sequence[float] = (7.0 / 9.0,),
    rng: np.random.Generator | None = None,
    reference_members: Sequence[Sequence[float]] | None = None,
    dm_lag: int = 0,
    ks_subsample: tuple[int, int] | None = None,
) -> VerificationReport:
    """Aggregate the full diagnostic suite against the raw-ensemble reference.

    ``forecasts`` carry their cases (members and observations); the
    reference defaults to those raw ensembles.  ``rng`` drives the
    randomized PIT at zero and rank tie-breaking, so reports are
    reproducible for a fixed stream.  ``ks_subsample`` is an optional
    ``(reps, size)`` pair for the subsampled mean KS p-value.
    """
    if len(forecasts) == 0:
        raise DataError("no forecasts to verify")
    thresholds = tuple(float(t) for t in thresholds)
    if len(thresholds) == 0:
        raise DataError("threshold list must be nonempty")
    levels = tuple(float(v) for v in levels)
    if rng is None:
        rng = np.random.default_rng(0)

    shapes = np.array([f.params.shape for f in forecasts])
    scales = np.array([f.params.scale for f in forecasts])
    shifts = np.array([f.params.shift for f in forecasts])
    obs = np.array([f.case.observation for f in forecasts], dtype=object)
    if any(o is None for o in obs):
        raise DataError("every verified case needs an observation")
    obs = obs.astype(float)
    if reference_members is None:
        members = np.array([f.case.members for f in forecasts], dtype=float)
    else:
        if len(reference_members) != len(forecasts):
            raise AlignmentError("reference ensembles must align with the forecasts")
        members = np.asarray(reference_members, dtype=float)
    n = obs.size
    n_members = members.shape[1]

    # probabilistic and point scores
    crps_cases = crps_batch(shapes, scales, shifts, obs)
    ref_crps_cases = np.array([crps_ensemble(members[i], obs[i]) for i in range(n)])
    medians = quantile_batch(shapes, scales, shifts, np.full(n, 0.5))
    abs_err = np.abs(medians - obs)
    ref_medians = np.median(members, axis=1)
    ref_abs_err = np.abs(ref_medians - obs)

    # PIT with randomization at zero, and raw-ensemble ranks
    cdf_at_obs = cdf_batch(shapes, scales, shifts, obs)
    p0 = point_mass_batch(shapes, scales, shifts)
    uniforms = rng.uniform(0.0, 1.0, size=n)
    pit_values = np.where(obs > 0.0, cdf_at_obs, uniforms * p0)
    ranks = np.array([rank(members[i], obs[i], rng) for i in range(n)])
    rank_counts = np.bincount(ranks, minlength=n_members + 2)[1:]

    # threshold instruments
    brier_scores = []
    ref_brier_scores = []
    bss = []
    tables = []
    ref_tables = []
    for y in thresholds:
        fc_prob_cdf = cdf_batch(shapes, scales, shifts, np.full(n, y))
        ref_prob_cdf = np.mean(members <= y, axis=1)
        indicator = (y >= obs).astype(float)
        bs = float(np.mean((fc_prob_cdf - indicator) ** 2))
        ref_bs = float(np.mean((ref_prob_cdf - indicator) ** 2))
        brier_scores.append(bs)
        ref_brier_scores.append(ref_bs)
        bss.append(skill_score(bs, ref_bs) if ref_bs > 0 else math.nan)
        # reliability of the exceedance event (probability 1 - F(y))
        event = (obs > y).astype(float)
        tables.append(reliability(1.0 - fc_prob_cdf, event))
        ref_tables.append(reliability(1.0 - ref_prob_cdf, event))

    intervals = tuple(
        _interval_stats_csg(shapes, scales, shifts, pit_values, lv) for lv in levels
    )
    ref_intervals = tuple(_interval_stats_ensemble(members, obs, lv) for lv in levels)

    dm_crps = dm_statistic(crps_cases, ref_crps_cases, lag=dm_lag) if n >= 30 else math.nan
    dm_mae = dm_statistic(abs_err, ref_abs_err, lag=dm_lag) if n >= 30 else math.nan

    ks_p = ks_uniform(pit_values) if n >= 10 else math.nan
    subsample_doc = None
    if ks_subsample is not None:
        reps, size = ks_subsample
        subsample_doc = {
            "reps": int(reps),
            "size": int(size),
            "mean_p": ks_subsample_mean_p(pit_values, int(reps), int(size), rng),
        }

    return VerificationReport(
        n_cases=n,
        n_members=int(n_members),
        thresholds=thresholds,
        levels=levels,
        mean_crps=float(np.mean(crps_cases)),
        crps_cases=tuple(float(v) for v in crps_cases),
        reference_mean_crps=float(np.mean(ref_crps_cases)),
        reference_crps_cases=tuple(float(v) for v in ref_crps_cases),
        crpss=skill_score(float(np.mean(crps_cases)), float(np.mean(ref_crps_cases))),
        mae_median=float(np.mean(abs_err)),
        abs_error_cases=tuple(float(v) for v in abs_err),
        reference_mae_median=float(np.mean(ref_abs_err)),
        reference_abs_error_cases=tuple(float(v) for v in ref_abs_err),
        intervals=intervals,
        reference_intervals=ref_intervals,
        brier_scores=tuple(brier_scores),
        reference_brier_scores=tuple(ref_brier_scores),
        brier_skill_scores=tuple(bss),
        reliability_tables=tuple(tables),
        reference_reliability_tables=tuple(ref_tables),
        pit_values=tuple(float(v) for v in pit_values),
        rank_counts=tuple(int(v) for v in rank_counts),
        dm_crps=float(dm_crps),
        dm_mae=float(dm_mae),
        ks_pit_p=float(ks_p),
        ks_subsample=subsample_doc,
    )


def _json_float(value: float):
    # report JSON is strict: non-finite statistics serialize as null
    if value is None or not math.isfinite(value):
        return None
    return value


def _float_from_json(value) -> float:
    return math.nan if value is None else float(value)


def _table_to_dict(table: ReliabilityTable) -> dict:
    return {
        "breaks": list(table.breaks),
        "mean_prob": list(table.mean_prob),
        "obs_freq": list(table.obs_freq),
        "count": list(table.count),
        "log10_count": list(table.log10_count),
    }


def _table_from_dict(doc: dict) -> ReliabilityTable:
    return ReliabilityTable(
        breaks=tuple(doc["breaks"]),
        mean_prob=tuple(doc["mean_prob"]),
        obs_freq=tuple(doc["obs_freq"]),
        count=tuple(doc["count"]),
        log10_count=tuple(doc["log10_count"]),
    )


def report_to_json(report: VerificationReport) -> str:
    """Serialize a report to deterministic JSON (the plotting contract)."""
    doc = {
        "schema": "csg-emos-report/1",
        "n_cases": report.n_cases,
        "n_members": report.n_members,
        "thresholds": list(report.thresholds),
        "levels": list(report.levels),
        "crps": {"mean": report.mean_crps, "per_case": list(report.crps_cases)},
        "reference_crps": {
            "mean": report.reference_mean_crps,
            "per_case": list(report.reference_crps_cases),
        },
        "crpss": report.crpss,
        "mae": {"mean": report.mae_median, "per_case": list(report.abs_error_cases)},
        "reference_mae": {
            "mean": report.reference_mae_median,
            "per_case": list(report.reference_abs_error_cases),
        },
        "intervals": [
            {"level": s.level, "coverage": s.coverage, "avg_width": s.avg_width}
            for s in report.intervals
        ],
        "reference_intervals": [
            {"level": s.level, "coverage": s.coverage, "avg_width": s.avg_width}
            for s in report.reference_intervals
        ],
        "brier": [
            {
                "threshold": t,
                "score": bs,
                "reference_score": ref,
                "skill": _json_float(skill),
                "reliability": _table_to_dict(table),
                "reference_reliability": _table_to_dict(ref_table),
            }
            for t, bs, ref, skill, table, ref_table in zip(
                report.thresholds,
                report.brier_scores,
                report.reference_brier_scores,
                report.brier_skill_scores,
                report.reliability_tables,
                report.reference_reliability_tables,
            )
        ],
        "pit": list(report.pit_values),
        "rank_counts": list(report.rank_counts),
        "dm": {"crps": _json_float(report.dm_crps), "mae": _json_float(report.dm_mae)},
        "ks": {"pit_p": _json_float(report.ks_pit_p), "subsample": report.ks_subsample},
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False)


def report_from_json(text: str) -> VerificationReport:
    """Inverse of :func:`report_to_json`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid report JSON: {exc}") from exc
    if doc.get("schema") != "csg-emos-report/1":
        raise DataError("not a csg-emos verification report")
    brier_docs = doc["brier"]
    return VerificationReport(
        n_cases=int(doc["n_cases"]),
        n_members=int(doc["n_members"]),
        thresholds=tuple(doc["thresholds"]),
        levels=tuple(doc["levels"]),
        mean_crps=doc["crps"]["mean"],
        crps_cases=tuple(doc["crps"]["per_case"]),
        reference_mean_crps=doc["reference_crps"]["mean"],
        reference_crps_cases=tuple(doc["reference_crps"]["per_case"]),
        crpss=doc["crpss"],
        mae_median=doc["mae"]["mean"],
        abs_error_cases=tuple(doc["mae"]["per_case"]),
        reference_mae_median=doc["reference_mae"]["mean"],
        reference_abs_error_cases=tuple(doc["reference_mae"]["per_case"]),
        intervals=tuple(
            IntervalStats(s["level"], s["coverage"], s["avg_width"]) for s in doc["intervals"]
        ),
        reference_intervals=tuple(
            IntervalStats(s["level"], s["coverage"], s["avg_width"])
            for s in doc["reference_intervals"]
        ),
        brier_scores=tuple(b["score"] for b in brier_docs),
        reference_brier_scores=tuple(b["reference_score"] for b in brier_docs),
        brier_skill_scores=tuple(
            math.nan if b["skill"] is None else b["skill"] for b in brier_docs
        ),
        reliability_tables=tuple(_table_from_dict(b["reliability"]) for b in brier_docs),
        reference_reliability_tables=tuple(
            _table_from_dict(b["reference_reliability"]) for b in brier_docs
        ),
        pit_values=tuple(doc["pit"]),
        rank_counts=tuple(doc["rank_counts"]),
        dm_crps=_float_from_json(doc["dm"]["crps"]),
        dm_mae=_float_from_json(doc["dm"]["mae"]),
        ks_pit_p=_float_from_json(doc["ks"]["pit_p"]),
        ks_subsample=doc["ks"]["subsample"],
    )
