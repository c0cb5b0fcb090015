"""Command-line entry point wiring the toolkit into reproducible runs.

Subcommands: ``simulate``, ``fit``, ``predict``, ``verify`` and
``tune-window``.  All randomness flows from the single ``--seed`` through
named substreams, so identical inputs and seed produce byte-identical
output files.  Exit codes: 0 success, 2 usage, 3 data problem, 4 numeric
failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import dataio, emos, simulator, verification
from .distributions import point_mass_batch, quantile_batch
from .errors import CsgEmosError, DataError, DomainError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# named substreams derived from the CLI seed; ids keep streams disjoint
_STREAM_IDS = {"simulate": 0, "pit": 1, "rank": 2, "ks": 3}


def _rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _STREAM_IDS[stream]]))


def _atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_text(path: str, what: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} file not found: {path}")
    return p.read_text()


def _parse_float_list(text: str, what: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise DataError(f"cannot parse {what} list {text!r}") from exc


def _parse_grid(text: str) -> list[int]:
    """Window grids: either 'start:stop:step' (inclusive) or 'n1,n2,...'."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise DataError("grid must be start:stop:step or a comma list")
        try:
            start, stop, step = (int(p) for p in parts)
        except ValueError as exc:
            raise DataError(f"cannot parse grid {text!r}") from exc
        if step <= 0 or stop < start:
            raise DataError("grid needs step > 0 and stop >= start")
        return list(range(start, stop + 1, step))
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise DataError(f"cannot parse grid {text!r}") from exc


def _fit_config(args, min_cases_default: int = 50) -> emos.FitConfig:
    return emos.FitConfig(
        objective=args.objective,
        init=args.init,
        variance_link=args.variance_link,
        min_cases=args.min_train_cases if args.min_train_cases is not None else min_cases_default,
    )


def _load_dataset(args, require_obs: bool = True):
    text = _read_text(args.data, "dataset")
    dataset, exclusions = dataio.parse_dataset(text, policy=args.policy, require_obs=require_obs)
    if exclusions:
        print(f"excluded {len(exclusions)} rows ({args.policy} policy)", file=sys.stderr)
        for exc in exclusions[:10]:
            print(f"  {exc.date} {exc.station}: {exc.reason}", file=sys.stderr)
        if len(exclusions) > 10:
            print(f"  ... and {len(exclusions) - 10} more", file=sys.stderr)
    return dataset


def _load_grouping(args, dataset) -> emos.GroupingScheme:
    if args.grouping is None:
        return emos.GroupingScheme.singletons(dataset.member_names)
    return dataio.parse_grouping(_read_text(args.grouping, "grouping"), dataset.member_names)


def _cmd_simulate(args) -> int:
    if args.preset is not None:
        spec = simulator.preset(
            args.preset, n_stations=args.stations, n_dates=args.dates, seed=args.seed
        )
    else:
        spec = simulator.scenario_from_json(_read_text(args.scenario, "scenario"))
        spec = simulator.ScenarioSpec(
            coefficients=spec.coefficients,
            n_stations=spec.n_stations,
            n_dates=spec.n_dates,
            seed=args.seed,
            start_date=spec.start_date,
            intensity_shape=spec.intensity_shape,
            intensity_scale=spec.intensity_scale,
            member_noise=spec.member_noise,
            station_prefix=spec.station_prefix,
        )
    dataset = simulator.simulate(spec)
    _atomic_write(args.out, dataio.write_dataset(dataset))
    print(f"wrote {len(dataset.cases)} cases to {args.out}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    dataset = _load_dataset(args)
    grouping = _load_grouping(args, dataset)
    dates = dataset.dates
    if len(dates) < args.window:
        raise DataError(
            f"window of {args.window} days exceeds the {len(dates)} available dates"
        )
    train_dates = dates[-args.window:]
    cases = dataset.cases_for_dates(train_dates)
    coefficients = emos.fit(cases, grouping, _fit_config(args))
    _atomic_write(args.out, emos.coefficients_to_json(coefficients))
    diag = coefficients.diagnostics
    print(
        f"fitted {args.objective} objective on {diag['n_cases']} cases: "
        f"{diag['initial_objective']:.4f} -> {diag['final_objective']:.4f}"
    )
    return EXIT_OK


def _cmd_predict(args) -> int:
    dataset = _load_dataset(args, require_obs=False)
    coefficients = emos.coefficients_from_json(_read_text(args.coefficients, "coefficients"))
    if coefficients.grouping.member_names != dataset.member_names:
        raise DataError("coefficient member columns do not match the dataset")
    levels = _parse_float_list(args.quantiles, "quantile")
    if any(not 0.0 < q < 1.0 for q in levels):
        raise DataError("quantile levels must lie strictly between 0 and 1")
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        ["date", "station", "point_mass", *(f"q{level:g}" for level in levels)]
    )
    for case in dataset.cases:
        fv = emos.extract_features(case, coefficients.grouping)
        params = emos.predict(coefficients, fv)
        p0 = float(point_mass_batch(params.shape, params.scale, params.shift))
        quantiles = [
            float(quantile_batch(params.shape, params.scale, params.shift, q))
            for q in levels
        ]
        writer.writerow(
            [case.date.isoformat(), case.station, repr(p0), *(repr(v) for v in quantiles)]
        )
    _atomic_write(args.out, out.getvalue())
    print(f"wrote predictions for {len(dataset.cases)} cases to {args.out}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    dataset = _load_dataset(args)
    grouping = _load_grouping(args, dataset)
    cfg = _fit_config(args)
    calibrations = emos.rolling_calibrate(dataset, grouping, args.window, cfg)
    forecasts = [fc for day in calibrations for fc in day.forecasts]
    thresholds = _parse_float_list(args.thresholds, "threshold")
    levels = _parse_float_list(args.levels, "level")
    subsample = None
    if args.ks_subsample is not None:
        reps, size = (int(v) for v in args.ks_subsample.split(","))
        subsample = (reps, size)
    # one generator per randomized instrument, all derived from the CLI seed
    pit_rng = _rng(args.seed, "pit")
    rank_rng = _rng(args.seed, "rank")
    report = verification.summarize(
        forecasts,
        thresholds=thresholds,
        levels=levels,
        rng=_CompositeRng(pit_rng, rank_rng, _rng(args.seed, "ks")),
        dm_lag=args.dm_lag,
        ks_subsample=subsample,
    )
    _atomic_write(args.out, verification.report_to_json(report))
    print(
        f"verified {report.n_cases} cases over {len(calibrations)} dates: "
        f"mean CRPS {report.mean_crps:.4f} (reference {report.reference_mean_crps:.4f})"
    )
    return EXIT_OK


class _CompositeRng:
    """Routes summarize's random draws to per-instrument substreams.

    ``uniform`` feeds the PIT randomization, ``integers`` the rank tie
    breaking and ``choice`` the KS subsampling, so adding cases to one
    instrument never perturbs another.
    """

    def __init__(self, pit_rng, rank_rng, ks_rng):
        self._pit = pit_rng
        self._rank = rank_rng
        self._ks = ks_rng

    def uniform(self, *args, **kwargs):
        return self._pit.uniform(*args, **kwargs)

    def integers(self, *args, **kwargs):
        return self._rank.integers(*args, **kwargs)

    def choice(self, *args, **kwargs):
        return self._ks.choice(*args, **kwargs)


def _cmd_tune_window(args) -> int:
    dataset = _load_dataset(args)
    grouping = _load_grouping(args, dataset)
    grid = _parse_grid(args.grid)
    rows = emos.tune_window(dataset, grouping, grid, _fit_config(args))
    _atomic_write(args.out, dataio.write_tuning_table(rows))
    best = min(rows, key=lambda r: r.mean_crps)
    print(f"wrote {len(rows)} rows to {args.out}; best window {best.window} days")
    return EXIT_OK


def _add_fit_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--objective", choices=["crps", "logscore"], default="crps")
    parser.add_argument(
        "--variance-link",
        choices=list(emos.VARIANCE_LINKS),
        default="mean",
        help="variance structure of the underlying gamma law",
    )
    parser.add_argument("--init", choices=["fixed", "warm"], default="fixed")
    parser.add_argument(
        "--min-train-cases",
        type=int,
        default=None,
        help="minimum training cases per fit (default 50)",
    )


def _add_data_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True, help="dataset CSV")
    parser.add_argument("--grouping", default=None, help="grouping JSON (default: one group per member)")
    parser.add_argument(
        "--policy",
        choices=["date-drop", "row-drop"],
        default="date-drop",
        help="missing-data policy applied while parsing",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csg-emos",
        description=(
            "Calibrate ensemble precipitation forecasts with a censored-shifted-gamma "
            "EMOS model and verify the resulting predictive distributions."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset CSV")
    group = p_sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=["singleton8", "control10"])
    group.add_argument("--scenario", help="scenario JSON")
    p_sim.add_argument("--stations", type=int, default=10)
    p_sim.add_argument("--dates", type=int, default=200)
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit coefficients on the most recent window")
    _add_data_options(p_fit)
    _add_fit_options(p_fit)
    p_fit.add_argument("--window", type=int, default=70, help="training days (default 70)")
    p_fit.add_argument("--out", required=True, help="coefficients JSON")
    p_fit.set_defaults(func=_cmd_fit)

    p_pred = sub.add_parser("predict", help="emit per-case quantiles and point mass")
    _add_data_options(p_pred)
    p_pred.add_argument("--coefficients", required=True, help="coefficients JSON")
    p_pred.add_argument(
        "--quantiles",
        default="0.05,0.25,0.5,0.75,0.95",
        help="comma-separated quantile levels",
    )
    p_pred.add_argument("--out", required=True, help="predictions CSV")
    p_pred.set_defaults(func=_cmd_predict)

    p_ver = sub.add_parser("verify", help="rolling calibration plus verification report")
    _add_data_options(p_ver)
    _add_fit_options(p_ver)
    p_ver.add_argument("--window", type=int, default=70, help="training days (default 70)")
    p_ver.add_argument("--thresholds", default="0,5,15,25,30", help="Brier thresholds (mm)")
    p_ver.add_argument(
        "--levels", default=f"{7.0 / 9.0!r}", help="central-interval levels in (0,1)"
    )
    p_ver.add_argument("--seed", type=int, required=True, help="seed for randomized steps")
    p_ver.add_argument("--dm-lag", type=int, default=0, help="lag window for the DM variance")
    p_ver.add_argument("--ks-subsample", default=None, help="reps,size for mean KS p-value")
    p_ver.add_argument("--out", required=True, help="report JSON")
    p_ver.set_defaults(func=_cmd_verify)

    p_tune = sub.add_parser("tune-window", help="score a grid of window lengths")
    _add_data_options(p_tune)
    _add_fit_options(p_tune)
    p_tune.add_argument("--grid", required=True, help="start:stop:step or comma list of days")
    p_tune.add_argument("--out", required=True, help="tuning CSV")
    p_tune.set_defaults(func=_cmd_tune_window)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CsgEmosError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
