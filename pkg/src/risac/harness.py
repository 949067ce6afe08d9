"""Monte-Carlo sweep harness: scheme dispatch, worker pool, CSV persistence.

Trials are embarrassingly parallel; each (value, trial) cell derives its
channel seed from the base seed and the cell coordinates only, never from
the scheme, so schemes are compared on common random channels.  CSV output
is deterministic for a fixed spec (wall times are recorded only when
ISAC_TIMING=1).
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .baselines import SCHEMES, run_scheme
from .channel import Scenario, square_factor, db_to_linear, dbm_to_watt
from .linalg import InvalidInputError
from .metrics import secrecy_lower_bound
from .optimizer import RunOptions

SCHEMA_VERSION = "risac-sweep-v1"

SWEEPABLE = ("Gamma_r_dB", "Gamma_dB", "Gamma_e_dB", "PB_dBm", "N",
             "A_over_lambda", "Lp")


@dataclass
class TrialResult:
    scheme: str
    param: str
    value: float
    trial: int
    seed: int
    sum_rate: float
    secrecy_lb: float
    converged: bool
    degraded: bool
    iterations: int
    outer_iterations: int
    violation: float
    radar_lb: float
    wall_time: float

    CSV_HEADER = ("schema_version,scheme,param,value,trial,seed,sum_rate,"
                  "secrecy_lb,converged,degraded,iterations,outer_iterations,"
                  "violation,radar_snr_lb,wall_time_s")

    def to_csv_row(self, with_timing: bool) -> str:
        f = lambda v: format(float(v), ".9g")
        return ",".join([
            SCHEMA_VERSION, self.scheme, self.param, f(self.value),
            str(self.trial), str(self.seed), f(self.sum_rate),
            f(self.secrecy_lb), str(int(self.converged)),
            str(int(self.degraded)), str(self.iterations),
            str(self.outer_iterations), f(self.violation), f(self.radar_lb),
            f(self.wall_time) if with_timing else "",
        ])


@dataclass
class SweepSpec:
    param: str
    values: Sequence[float]
    trials: int
    schemes: Sequence[str]
    base: Scenario
    out: str
    opts: RunOptions = field(default_factory=RunOptions)

    def __post_init__(self) -> None:
        if self.param not in SWEEPABLE:
            raise InvalidInputError(
                f"unsupported sweep parameter {self.param!r} (one of {SWEEPABLE})")
        if self.trials < 1:
            raise InvalidInputError("trials must be >= 1")
        vals = list(self.values)
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvalidInputError("swept values must be strictly increasing")
        bad = set(self.schemes) - set(SCHEMES)
        if bad:
            raise InvalidInputError(f"unknown schemes: {sorted(bad)}")


def apply_param(scen: Scenario, param: str, value: float) -> Scenario:
    """Return a copy of the scenario with one swept parameter applied."""
    if param == "Gamma_r_dB":
        return scen.replace(gamma_r=db_to_linear(value))
    if param == "Gamma_dB":
        return scen.replace(gamma_c=db_to_linear(value))
    if param == "Gamma_e_dB":
        return scen.replace(gamma_e=db_to_linear(value))
    if param == "PB_dBm":
        return scen.replace(power=dbm_to_watt(value))
    if param == "N":
        n1, n2 = square_factor(int(round(value)))
        return scen.replace(n1=n1, n2=n2)
    if param == "A_over_lambda":
        return scen.replace(region_halfwidth=0.5 * value * scen.wavelength)
    if param == "Lp":
        return scen.replace(paths=int(round(value)))
    raise InvalidInputError(f"unsupported sweep parameter {param!r}")


def cell_seed(base_seed: int, value_index: int, trial: int) -> int:
    """Channel seed for one (value, trial) cell; scheme-independent so all
    schemes see the same channel realizations."""
    ss = np.random.SeedSequence(entropy=base_seed,
                                spawn_key=(value_index, trial))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2 ** 63))


def run_cell(args: Tuple[str, str, int, float, int, Scenario, RunOptions]) -> TrialResult:
    scheme, param, value_index, value, trial, base, opts = args
    scen = apply_param(base, param, value)
    seed = cell_seed(base.seed, value_index, trial)
    scen = scen.replace(seed=seed)
    result = run_scheme(scheme, scen, opts)
    sec = secrecy_lower_bound(scen.gamma_c, scen.gamma_e) * scen.k_users
    return TrialResult(
        scheme=scheme, param=param, value=float(value), trial=trial, seed=seed,
        sum_rate=result.report.sum_rate, secrecy_lb=sec,
        converged=result.converged, degraded=result.state.degraded,
        iterations=len(result.state.objective_trace),
        outer_iterations=result.state.t2,
        violation=(result.state.violation_trace[-1]
                   if result.state.violation_trace else float("nan")),
        radar_lb=result.report.radar_lb,
        wall_time=result.wall_time,
    )


def n_workers() -> int:
    env = os.environ.get("ISAC_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def run_trials(spec: SweepSpec) -> List[TrialResult]:
    """All (value, scheme, trial) cells of a sweep, deterministically ordered."""
    cells = [
        (scheme, spec.param, vi, float(value), trial, spec.base, spec.opts)
        for vi, value in enumerate(spec.values)
        for scheme in spec.schemes
        for trial in range(spec.trials)
    ]
    workers = min(n_workers(), len(cells))
    if workers <= 1:
        results = [run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, cells, chunksize=1))
    results.sort(key=lambda r: (r.value, r.scheme, r.trial))
    return results


AGG_HEADER = ("schema_version,scheme,param,value,n_trials,mean_sum_rate,"
              "stderr_sum_rate,mean_radar_snr_lb,converged_fraction")


def aggregate(results: Sequence[TrialResult]) -> List[str]:
    """One row per (value, scheme): mean and standard error of the sum-rate."""
    rows = []
    keys = sorted({(r.value, r.scheme) for r in results})
    for value, scheme in keys:
        grp = [r for r in results if r.value == value and r.scheme == scheme]
        rates = np.array([r.sum_rate for r in grp])
        stderr = float(np.std(rates, ddof=1) / np.sqrt(len(rates))) if len(rates) > 1 else 0.0
        f = lambda v: format(float(v), ".9g")
        rows.append(",".join([
            SCHEMA_VERSION, scheme, grp[0].param, f(value), str(len(grp)),
            f(np.mean(rates)), f(stderr),
            f(np.mean([r.radar_lb for r in grp])),
            f(np.mean([1.0 if r.converged else 0.0 for r in grp])),
        ]))
    return rows


def aggregate_path(out: str) -> str:
    root, ext = os.path.splitext(out)
    return f"{root}_aggregate{ext or '.csv'}"


def run_sweep(spec: SweepSpec) -> List[TrialResult]:
    """Run the sweep and write the per-trial and aggregate CSV files."""
    results = run_trials(spec)
    with_timing = os.environ.get("ISAC_TIMING") == "1"
    try:
        with open(spec.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(TrialResult.CSV_HEADER + "\n")
            for r in results:
                fh.write(r.to_csv_row(with_timing) + "\n")
        with open(aggregate_path(spec.out), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(AGG_HEADER + "\n")
            for row in aggregate(results):
                fh.write(row + "\n")
    except OSError as exc:
        raise OSError(f"failed writing sweep output near {spec.out!r}: {exc}") from exc
    return results


def sweep_from_config(entries: Dict[str, str], base: Scenario, out: str,
                      trials: int | None = None,
                      opts: RunOptions | None = None) -> SweepSpec:
    """Build a SweepSpec from sweep.* keys of a flat config."""
    try:
        param = entries["sweep.param"]
        values = [float(v) for v in entries["sweep.values"].split(",")]
    except KeyError as exc:
        raise InvalidInputError(f"missing sweep config key: {exc}") from exc
    schemes = [s.strip() for s in entries.get(
        "sweep.schemes", "proposed,fpa,random_phase").split(",")]
    n_trials = trials if trials is not None else int(entries.get("sweep.trials", "5"))
    return SweepSpec(param=param, values=values, trials=n_trials,
                     schemes=schemes, base=base, out=out,
                     opts=opts or RunOptions())
