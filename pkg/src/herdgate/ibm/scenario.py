"""Replicated scenario runs, herd-level Se/Sp measurement and the search for
the individual sensitivity shift that reaches a target herd sensitivity."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .. import seeds
from ..evalx.reports import write_csv, write_json
from .params import SimParams
from .sim import init_world
from .world import WorldSpec

METRICS = ("breakdowns", "confirmed_breakdowns", "reactors")


@dataclass(frozen=True)
class HerdPerformance:
    hse: float
    hsp: float
    n_infected_tests: int
    n_uninfected_tests: int


def measure_herd_se_sp(tests) -> HerdPerformance:
    """Herd sensitivity and specificity from whole-herd test events.

    HSe is the fraction of tests on herds holding at least one T/I animal that
    were not clear; HSp the fraction of tests on all-S herds that were clear.
    Pre-movement tests cover a batch, not a herd, and are skipped. A side with
    no tests is reported as NaN.
    """
    whole = [t for t in tests if t.kind != "pre_movement"]
    if not whole:
        raise ValueError("no whole-herd test events in trace")
    inf = np.array([t.n_infected > 0 for t in whole])
    nc = np.array([t.not_clear for t in whole])
    n_inf = int(inf.sum())
    n_clean = len(whole) - n_inf
    hse = float(nc[inf].mean()) if n_inf else math.nan
    hsp = float((~nc[~inf]).mean()) if n_clean else math.nan
    return HerdPerformance(hse, hsp, n_inf, n_clean)


@dataclass
class ReplicateResult:
    replicate: int
    seed: int
    params: SimParams
    breakdowns: np.ndarray  # per year after burn-in
    confirmed_breakdowns: np.ndarray
    reactors: np.ndarray
    durations: list  # days, breakdowns started and closed after burn-in
    tests: list = field(repr=False, default_factory=list)
    cumulative_infections: int = 0
    infected_animal_days: int = 0

    @property
    def mean_duration(self) -> float:
        return float(np.mean(self.durations)) if self.durations else 0.0

    def total(self, metric: str) -> int:
        return int(np.sum(getattr(self, metric)))

    def herd_performance(self) -> HerdPerformance:
        return measure_herd_se_sp(self.tests)


def _interval(v: np.ndarray) -> dict:
    v = np.asarray(v, dtype=np.float64)
    return {
        "mean": float(v.mean()),
        "lo": float(np.percentile(v, 2.5)),
        "hi": float(np.percentile(v, 97.5)),
    }


@dataclass
class ScenarioReport:
    years: int
    burn_in_years: int
    replicates: list

    @property
    def n_replicates(self) -> int:
        return len(self.replicates)

    def totals(self, metric: str) -> np.ndarray:
        return np.array([r.total(metric) for r in self.replicates])

    def annual(self, metric: str) -> np.ndarray:
        """(replicates, years) array of per-year counts."""
        return np.array([getattr(r, metric) for r in self.replicates])

    def summary(self) -> dict:
        out = {"years": self.years, "burn_in_years": self.burn_in_years, "n_replicates": self.n_replicates}
        for m in METRICS:
            out[m] = _interval(self.totals(m))
            out[m + "_per_year"] = _interval(self.totals(m) / self.years)
        out["mean_breakdown_duration"] = _interval([r.mean_duration for r in self.replicates])
        tests = [t for r in self.replicates for t in r.tests]
        if any(t.kind != "pre_movement" for t in tests):
            perf = measure_herd_se_sp(tests)
            out["hse"], out["hsp"] = perf.hse, perf.hsp
        return out

    def herd_performance(self) -> HerdPerformance:
        return measure_herd_se_sp([t for r in self.replicates for t in r.tests])


def _draw_params(base: SimParams, particles, rng) -> SimParams:
    values = [p for p, _ in particles]
    w = np.array([w for _, w in particles], dtype=np.float64)
    k = int(rng.choice(len(values), p=w / w.sum()))
    return base.with_values(**values[k])


def run_replicate(spec: WorldSpec, params: SimParams, years: int, seed: int, replicate: int = 0,
                  burn_in_years: int = 0, intervention: Optional[dict] = None, se_shift: float = 0.0,
                  particles: Optional[Sequence] = None) -> ReplicateResult:
    """One replicate. The world runs ``burn_in_years`` under ``params`` and then
    switches to the intervention (parameter overrides and/or an additive
    sensitivity shift) for ``years`` recorded years."""
    rep_seed = seeds.derive(seed, "replicate", replicate)
    base = params
    if particles:
        base = _draw_params(params, particles, seeds.rng(seed, "particle", replicate))
    w = init_world(spec, base, rep_seed, check_conservation=False)
    w.run(365 * burn_in_years)
    after = base.with_values(**intervention) if intervention else base
    if se_shift:
        after = after.with_values(test=after.test.shifted(se_shift))
    w.params = after

    start_day, n_bd0, n_tests0 = w.day, len(w.breakdowns), len(w.tests)
    inf0, iad0 = w.cumulative_infections, w.infected_animal_days
    reactors = np.zeros(years, dtype=np.int64)
    for y in range(years):
        r0 = w.removed["reactor"]
        w.run(365)
        reactors[y] = w.removed["reactor"] - r0
    w.assert_conservation()

    bds = w.breakdowns[n_bd0:]
    year_of = np.array([(b.start_day - start_day) // 365 for b in bds], dtype=np.int64)
    conf = np.array([b.confirmed for b in bds], dtype=bool)
    return ReplicateResult(
        replicate=replicate,
        seed=rep_seed,
        params=after,
        breakdowns=np.bincount(year_of, minlength=years),
        confirmed_breakdowns=np.bincount(year_of[conf], minlength=years),
        reactors=reactors,
        durations=[b.duration for b in bds if b.end_day is not None],
        tests=w.tests[n_tests0:],
        cumulative_infections=w.cumulative_infections - inf0,
        infected_animal_days=w.infected_animal_days - iad0,
    )


def run_scenario(spec: WorldSpec, params: SimParams, years: int, n_replicates: int = 1, seed: int = 0,
                 particles: Optional[Sequence] = None, burn_in_years: int = 0,
                 intervention: Optional[dict] = None, se_shift: float = 0.0, n_jobs: int = 1) -> ScenarioReport:
    """Run ``n_replicates`` independent replicates.

    ``particles`` is a sequence of ``(parameter overrides, weight)`` pairs; each
    replicate draws one by weight. Replicate ``r`` uses the same world seed in
    every scenario sharing ``seed``, so two arms form common-random-number pairs.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    if years < 1:
        raise ValueError("years must be >= 1")
    if particles is not None and not len(particles):
        raise ValueError("particles must be non-empty")
    args = [(spec, params, years, seed, r, burn_in_years, intervention, se_shift, particles)
            for r in range(n_replicates)]
    if n_jobs == 1:
        results = [run_replicate(*a) for a in args]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(run_replicate)(*a) for a in args)
    return ScenarioReport(years=years, burn_in_years=burn_in_years, replicates=list(results))


@dataclass(frozen=True)
class SeShiftResult:
    shift: float
    hse: float
    hsp: float
    baseline_hse: float
    baseline_hsp: float
    params: SimParams
    iterations: int
    baseline_se_T: float
    baseline_se_I: float

    @property
    def relative_change(self) -> dict:
        """Shift relative to each baseline sensitivity, reported beside the additive value."""
        return {k: (self.shift / v if v > 0 else math.inf)
                for k, v in (("se_T", self.baseline_se_T), ("se_I", self.baseline_se_I))}


def se_equivalent_for_target_hse(spec: WorldSpec, params: SimParams, target_hse: float, years: int = 3,
                                 n_replicates: int = 10, seed: int = 0, tol: float = 0.005,
                                 burn_in_years: int = 0, max_iter: int = 40, n_jobs: int = 1) -> SeShiftResult:
    """Additive shift of (se_T, se_I), each capped to [0, 1], whose simulated
    pooled HSe is within ``tol`` of ``target_hse``.

    Every candidate shift is evaluated on the same replicate seeds, so the
    search compares common-random-number runs. Shifts are searched in [-1, 1].
    """
    if not 0.0 < target_hse <= 1.0:
        raise ValueError("target_hse must lie in (0, 1]")
    cache: dict = {}

    def perf(shift: float) -> HerdPerformance:
        if shift not in cache:
            rep = run_scenario(spec, params, years, n_replicates, seed, burn_in_years=burn_in_years,
                               se_shift=shift, n_jobs=n_jobs)
            cache[shift] = rep.herd_performance()
            if math.isnan(cache[shift].hse):
                raise ValueError("no tests on infected herds; HSe is undefined for this world")
        return cache[shift]

    def result(shift: float, it: int) -> SeShiftResult:
        p, b = perf(shift), perf(0.0)
        return SeShiftResult(shift=float(shift), hse=p.hse, hsp=p.hsp, baseline_hse=b.hse, baseline_hsp=b.hsp,
                             params=params.with_values(test=params.test.shifted(shift)), iterations=it,
                             baseline_se_T=params.test.se_T, baseline_se_I=params.test.se_I)

    f0 = perf(0.0).hse - target_hse
    if abs(f0) <= tol:
        return result(0.0, 0)
    end = 1.0 if f0 < 0 else -1.0
    f_end = perf(end).hse - target_hse
    if abs(f_end) <= tol:
        return result(end, 1)
    if (f0 < 0) == (f_end < 0):
        raise ValueError(f"target HSe {target_hse} unreachable: HSe ranges {perf(0.0).hse:.4f}..{perf(end).hse:.4f}")
    lo, hi = (0.0, end) if end > 0 else (end, 0.0)
    best = min((0.0, end), key=lambda s: abs(perf(s).hse - target_hse))
    for it in range(2, max_iter + 2):
        mid = 0.5 * (lo + hi)
        f = perf(mid).hse - target_hse
        if abs(f) < abs(perf(best).hse - target_hse):
            best = mid
        if abs(f) <= tol:
            return result(mid, it)
        if f < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6:
            break
    return result(best, it)


def write_scenario_report(report: ScenarioReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "scenario.json", report.summary())
    rows = []
    for r in report.replicates:
        for y in range(report.years):
            rows.append((r.replicate, y + 1, r.breakdowns[y], r.confirmed_breakdowns[y], r.reactors[y]))
    write_csv(out / "replicates.csv", ("replicate", "year", "breakdowns", "confirmed_breakdowns", "reactors"), rows)
