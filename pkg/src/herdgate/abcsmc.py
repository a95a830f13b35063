"""Approximate Bayesian computation with sequential Monte Carlo (ABC-SMC).

Generation 0 samples the prior and keeps draws whose simulated summary lies
within a tolerance of the target; the first tolerance is the ``alpha``
quantile of a pilot batch. Later generations resample the previous population
by weight, perturb with a component-wise uniform kernel, and weight accepted
particles by prior density over the kernel mixture density.

Proposal ``i`` of generation ``g`` always uses the seeds derived from
``(seed, g, i)``. Proposals are simulated in fixed-size batches and accepted
in index order, so results do not depend on the number of workers.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from . import seeds
from .ibm.scenario import measure_herd_se_sp, run_replicate

log = logging.getLogger(__name__)

DEFAULT_STATISTICS = ("breakdowns", "confirmed_breakdowns", "reactors", "mean_duration")


# ------------------------------------------------------------------ priors


@dataclass(frozen=True)
class ParamPrior:
    name: str
    lo: float
    hi: float
    kind: str = "uniform"  # uniform | log-uniform

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"prior {self.name}: lo must be < hi")
        if self.kind not in ("uniform", "log-uniform"):
            raise ValueError(f"prior {self.name}: unknown kind {self.kind!r}")
        if self.kind == "log-uniform" and self.lo <= 0:
            raise ValueError(f"prior {self.name}: log-uniform needs lo > 0")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        if self.kind == "uniform":
            return self.lo + u * (self.hi - self.lo)
        return np.exp(np.log(self.lo) + u * (np.log(self.hi) - np.log(self.lo)))

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        inside = (x >= self.lo) & (x <= self.hi)
        if self.kind == "uniform":
            return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(inside, 1.0 / (x * (np.log(self.hi) - np.log(self.lo))), 0.0)

    def cdf(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=np.float64), self.lo, self.hi)
        if self.kind == "uniform":
            return (x - self.lo) / (self.hi - self.lo)
        return (np.log(x) - np.log(self.lo)) / (np.log(self.hi) - np.log(self.lo))


@dataclass(frozen=True)
class Prior:
    """Independent per-parameter priors."""

    params: tuple

    def __post_init__(self):
        names = [p.name for p in self.params]
        if not names:
            raise ValueError("prior needs at least one parameter")
        if len(set(names)) != len(names):
            raise ValueError("duplicate prior parameter names")

    @property
    def names(self) -> list:
        return [p.name for p in self.params]

    @property
    def dim(self) -> int:
        return len(self.params)

    @property
    def lower(self) -> np.ndarray:
        return np.array([p.lo for p in self.params])

    @property
    def upper(self) -> np.ndarray:
        return np.array([p.hi for p in self.params])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.column_stack([p.sample(rng, n) for p in self.params])

    def pdf(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(theta)
        out = np.ones(len(theta))
        for k, p in enumerate(self.params):
            out = out * p.pdf(theta[:, k])
        return out

    def contains(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(theta)
        return np.all((theta >= self.lower) & (theta <= self.upper), axis=1)

    def to_dict(self) -> dict:
        return {p.name: {"lo": p.lo, "hi": p.hi, "kind": p.kind} for p in self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "Prior":
        return cls(tuple(ParamPrior(name, float(v["lo"]), float(v["hi"]), v.get("kind", "uniform"))
                         for name, v in d.items()))

    @classmethod
    def from_json(cls, path) -> "Prior":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------ summaries and distance


def raw_statistics(report) -> dict:
    """Per-year statistics of a scenario report (or single replicate), averaged
    over replicates. Mean breakdown duration is 0 when no breakdown closed."""
    reps = getattr(report, "replicates", None) or [report]
    years = len(reps[0].breakdowns)
    durations = [d for r in reps for d in r.durations]
    tests = [t for r in reps for t in r.tests]
    perf = measure_herd_se_sp(tests) if any(t.kind != "pre_movement" for t in tests) else None
    return {
        "breakdowns": float(np.mean([np.sum(r.breakdowns) for r in reps])) / years,
        "confirmed_breakdowns": float(np.mean([np.sum(r.confirmed_breakdowns) for r in reps])) / years,
        "reactors": float(np.mean([np.sum(r.reactors) for r in reps])) / years,
        "mean_duration": float(np.mean(durations)) if durations else 0.0,
        "hse": perf.hse if perf is not None else math.nan,
        "hsp": perf.hsp if perf is not None else math.nan,
        "infections": float(np.mean([r.cumulative_infections for r in reps])) / years,
    }


def summarize(report, scale=None, statistics: Sequence[str] = DEFAULT_STATISTICS) -> np.ndarray:
    """Summary vector of the named statistics, each divided by ``scale``
    (normally the target's raw values; zero scales count as 1)."""
    raw = raw_statistics(report)
    unknown = set(statistics) - set(raw)
    if unknown:
        raise ValueError(f"unknown statistics: {sorted(unknown)}")
    v = np.array([raw[s] for s in statistics], dtype=np.float64)
    if scale is None:
        return v
    scale = np.asarray(scale, dtype=np.float64)
    if scale.shape != v.shape:
        raise ValueError("scale must have one entry per statistic")
    return v / np.where(scale != 0, np.abs(scale), 1.0)


def distance(summary, target, weights=None) -> float:
    """Weighted Euclidean distance between summary vectors."""
    s = np.asarray(summary, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if s.shape != t.shape:
        raise ValueError(f"summary length {s.size} != target length {t.size}")
    w = np.ones_like(s) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != s.shape or np.any(w < 0):
        raise ValueError("weights must be non-negative with one entry per statistic")
    return float(np.sqrt(np.sum(w * (s - t) ** 2)))


# ------------------------------------------------------------------ populations


@dataclass
class Population:
    generation: int
    epsilon: float
    thetas: np.ndarray  # (n, d)
    weights: np.ndarray  # sums to 1
    distances: np.ndarray
    n_proposals: int  # simulated proposals this generation
    names: list = field(default_factory=list)

    @property
    def acceptance_rate(self) -> float:
        return len(self.weights) / self.n_proposals if self.n_proposals else math.nan

    def mean(self) -> np.ndarray:
        return self.weights @ self.thetas

    def var(self) -> np.ndarray:
        return self.weights @ (self.thetas - self.mean()) ** 2

    def as_particles(self) -> list:
        """``(parameter dict, weight)`` pairs, as consumed by scenario runs."""
        return [({n: float(v) for n, v in zip(self.names, th)}, float(w)) for th, w in zip(self.thetas, self.weights)]


@dataclass
class AbcResult:
    populations: list
    n_calls: int
    budget_exhausted: bool = False
    stop_reason: str = "generations"

    @property
    def final(self) -> Population:
        return self.populations[-1]


def posterior_sample(populations, n: int, seed: int = 0) -> np.ndarray:
    """``n`` draws with replacement from the final population by weight."""
    pops = populations.populations if isinstance(populations, AbcResult) else populations
    if not pops or not len(pops[-1].weights):
        raise ValueError("final population is empty")
    last = pops[-1]
    idx = seeds.rng(seed, "posterior").choice(len(last.weights), size=n, p=last.weights)
    return last.thetas[idx]


def write_populations(populations, path) -> None:
    pops = populations.populations if isinstance(populations, AbcResult) else populations
    names = pops[0].names if pops else []
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "weight", "distance", *names])
        for p in pops:
            for th, wt, d in zip(p.thetas, p.weights, p.distances):
                w.writerow([p.generation, repr(float(wt)), repr(float(d)), *(repr(float(v)) for v in th)])


def read_populations(path, epsilons: Sequence[float], n_proposals: Sequence[int]) -> list:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][3:]
    gens: dict = {}
    for r in rows[1:]:
        gens.setdefault(int(r[0]), []).append([float(v) for v in r[1:]])
    out = []
    for g in sorted(gens):
        a = np.array(gens[g])
        out.append(Population(g, float(epsilons[g]), a[:, 2:], a[:, 0], a[:, 1], int(n_proposals[g]), list(names)))
    return out


# ------------------------------------------------------------------ fitting


@dataclass(frozen=True)
class AbcConfig:
    n_particles: int = 100
    n_generations: int = 5
    alpha: float = 0.5
    kernel_scale: float = 0.5  # half-width = scale x weighted range of the previous population
    distance_weights: Optional[tuple] = None
    statistics: tuple = DEFAULT_STATISTICS
    max_calls: int = 100_000
    seed: int = 0
    pilot_size: Optional[int] = None  # default n_particles
    initial_epsilon: Optional[float] = None  # skips the pilot when set
    min_acceptance: float = 0.01

    def __post_init__(self):
        if self.n_particles < 10:
            raise ValueError("n_particles must be >= 10")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.n_generations < 1 or self.max_calls < 1:
            raise ValueError("n_generations and max_calls must be >= 1")
        if self.kernel_scale <= 0:
            raise ValueError("kernel_scale must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["statistics"] = list(self.statistics)
        if self.distance_weights is not None:
            d["distance_weights"] = list(self.distance_weights)
        if d["initial_epsilon"] is not None and math.isinf(d["initial_epsilon"]):
            d["initial_epsilon"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AbcConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown AbcConfig fields: {sorted(unknown)}")
        if "statistics" in d:
            d["statistics"] = tuple(d["statistics"])
        if d.get("distance_weights") is not None:
            d["distance_weights"] = tuple(d["distance_weights"])
        if d.get("initial_epsilon") is not None:
            d["initial_epsilon"] = float(d["initial_epsilon"])
        return cls(**d)


class _Budget(Exception):
    pass


class _LowAcceptance(Exception):
    pass


def _half_width(pop: Population, prior: Prior, scale: float) -> np.ndarray:
    live = pop.thetas[pop.weights > 0]
    width = scale * (live.max(axis=0) - live.min(axis=0))
    # a collapsed population still needs a proper kernel density
    return np.maximum(width, 1e-9 * (prior.upper - prior.lower))


def _kernel_weights(thetas: np.ndarray, prev: Population, hw: np.ndarray, prior: Prior) -> np.ndarray:
    dens = np.zeros(len(thetas))
    norm = 1.0 / np.prod(2 * hw)
    for th, w in zip(prev.thetas, prev.weights):
        if w > 0:
            dens += w * norm * np.all(np.abs(thetas - th) <= hw, axis=1)
    w = prior.pdf(thetas) / dens
    return w / w.sum()


class _Runner:
    def __init__(self, simulate, prior, target, config, n_jobs, n_calls):
        self.simulate = simulate
        self.prior = prior
        self.target = np.asarray(target, dtype=np.float64)
        self.cfg = config
        self.n_jobs = n_jobs
        self.n_calls = n_calls

    def propose(self, gen: int, i: int, prev: Optional[Population], hw) -> np.ndarray:
        rng = seeds.rng(self.cfg.seed, "abc", "propose", gen, i)
        if prev is None:
            return self.prior.sample(rng, 1)[0]
        for _ in range(10_000):
            j = rng.choice(len(prev.weights), p=prev.weights)
            theta = prev.thetas[j] + rng.uniform(-hw, hw)
            if self.prior.contains(theta)[0]:
                return theta
        raise RuntimeError("perturbation kernel keeps leaving the prior support")

    def evaluate(self, gen: int, start: int, thetas: np.ndarray) -> np.ndarray:
        sim_seeds = [seeds.derive(self.cfg.seed, "abc", "simulate", gen, start + k) for k in range(len(thetas))]
        args = [({n: float(v) for n, v in zip(self.prior.names, th)}, s) for th, s in zip(thetas, sim_seeds)]
        if self.n_jobs == 1:
            summaries = [self.simulate(*a) for a in args]
        else:
            summaries = Parallel(n_jobs=self.n_jobs)(delayed(self.simulate)(*a) for a in args)
        w = self.cfg.distance_weights
        return np.array([distance(s, self.target, w) for s in summaries])

    def generation(self, gen: int, eps: float, prev: Optional[Population], preset=None) -> Population:
        """Accept ``n_particles`` proposals with distance <= eps, in index order."""
        n = self.cfg.n_particles
        hw = None if prev is None else _half_width(prev, self.prior, self.cfg.kernel_scale)
        acc_t, acc_d = [], []
        tried = 0
        if preset is not None:  # pilot draws are prior proposals 0..k-1 of generation 0
            for th, d in zip(*preset):
                tried += 1
                if d <= eps:
                    acc_t.append(th)
                    acc_d.append(d)
                    if len(acc_t) == n:
                        break
        while len(acc_t) < n:
            # observed acceptance below the floor, judged once n proposals are in
            if tried >= n and len(acc_t) < self.cfg.min_acceptance * tried:
                raise _LowAcceptance
            # size the batch to the remaining need; depends only on counts, not on workers
            rate = max(len(acc_t) / tried, self.cfg.min_acceptance) if tried else 1.0
            need = math.ceil(1.2 * (n - len(acc_t)) / rate)
            batch = min(n, max(10, need), self.cfg.max_calls - self.n_calls)
            if batch <= 0:
                raise _Budget
            thetas = np.array([self.propose(gen, tried + k, prev, hw) for k in range(batch)])
            d = self.evaluate(gen, tried, thetas)
            self.n_calls += batch
            for th, dd in zip(thetas, d):
                tried += 1
                if dd <= eps and len(acc_t) < n:
                    acc_t.append(th)
                    acc_d.append(dd)
        thetas = np.array(acc_t)
        if prev is None:
            weights = np.full(n, 1.0 / n)
        else:
            weights = _kernel_weights(thetas, prev, hw, self.prior)
        return Population(gen, float(eps), thetas, weights, np.array(acc_d), tried, list(self.prior.names))


def _log_generation(pop: Population, n_calls: int) -> None:
    log.info("generation %d: eps=%.6g acceptance=%.3f calls=%d mean=%s", pop.generation, pop.epsilon,
             pop.acceptance_rate, n_calls, np.array2string(pop.mean(), precision=4))


def _next_epsilon(pop: Population, alpha: float) -> Optional[float]:
    eps = float(np.quantile(pop.distances, alpha))
    if eps < pop.epsilon:
        return eps
    smaller = pop.distances[pop.distances < pop.epsilon]
    return float(smaller.max()) if len(smaller) else None


def fit(simulate: Callable, prior: Prior, target, config: AbcConfig, n_jobs: int = 1,
        checkpoint_dir=None) -> AbcResult:
    """Run ABC-SMC.

    ``simulate(theta: dict, seed: int)`` returns a summary vector comparable to
    ``target``. With ``checkpoint_dir`` each finished generation is saved and a
    rerun resumes after the last saved generation with identical results.
    """
    run = _Runner(simulate, prior, target, config, n_jobs, 0)
    pops: list = []
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None and (ckpt / "state.json").exists():
        state = json.loads((ckpt / "state.json").read_text())
        if state["config"] != config.to_dict() or state["prior"] != prior.to_dict():
            raise ValueError("checkpoint was written for a different config or prior")
        pops = read_populations(ckpt / "populations.csv", state["epsilons"], state["n_proposals"])
        run.n_calls = state["n_calls"]
        if state["stop_reason"] is not None:
            return AbcResult(pops, run.n_calls, state["stop_reason"] == "budget", state["stop_reason"])

    def save(reason=None):
        if ckpt is None:
            return
        ckpt.mkdir(parents=True, exist_ok=True)
        write_populations(pops, ckpt / "populations.csv")
        state = {"config": config.to_dict(), "prior": prior.to_dict(), "n_calls": run.n_calls,
                 "epsilons": [p.epsilon for p in pops], "n_proposals": [p.n_proposals for p in pops],
                 "stop_reason": reason}
        (ckpt / "state.json").write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")

    def finish(reason: str) -> AbcResult:
        if reason == "budget":
            warnings.warn(f"ABC-SMC simulator budget of {config.max_calls} calls exhausted after "
                          f"{len(pops)} generation(s)", RuntimeWarning, stacklevel=3)
        save(reason)
        return AbcResult(pops, run.n_calls, reason == "budget", reason)

    try:
        if not pops:
            preset = None
            eps0 = config.initial_epsilon
            if eps0 is None:
                k = min(config.pilot_size or config.n_particles, config.max_calls)
                pilot = np.array([run.propose(0, i, None, None) for i in range(k)])
                d = run.evaluate(0, 0, pilot)
                run.n_calls += k
                eps0 = float(np.quantile(d, config.alpha))
                preset = (pilot, d)
            pops.append(run.generation(0, eps0, None, preset))
            _log_generation(pops[-1], run.n_calls)
            save()
        while len(pops) < config.n_generations:
            eps = _next_epsilon(pops[-1], config.alpha)
            if eps is None:
                return finish("tolerance")
            pops.append(run.generation(len(pops), eps, pops[-1]))
            _log_generation(pops[-1], run.n_calls)
            save()
    except _Budget:
        return finish("budget")
    except _LowAcceptance:
        return finish("acceptance")
    return finish("generations")


# ------------------------------------------------------------------ simulator adapter


class IbmSimulator:
    """Picklable ``simulate(theta, seed)`` for the transmission model: one
    replicate per call, summarised and scaled by the target's raw values."""

    def __init__(self, spec, params, years: int, scale, statistics=DEFAULT_STATISTICS, burn_in_years: int = 0):
        self.spec = spec
        self.params = params
        self.years = years
        self.scale = np.asarray(scale, dtype=np.float64)
        self.statistics = tuple(statistics)
        self.burn_in_years = burn_in_years

    def __call__(self, theta: dict, seed: int) -> np.ndarray:
        rep = run_replicate(self.spec, self.params.with_values(**theta), self.years, seed,
                            burn_in_years=self.burn_in_years)
        return summarize(rep, self.scale, self.statistics)


def fit_ibm(spec, params, prior: Prior, target_raw, config: AbcConfig, years: int = 2, burn_in_years: int = 0,
            n_jobs: int = 1, checkpoint_dir=None) -> AbcResult:
    """Fit simulator parameters to raw target statistics (per-year counts and
    mean duration, in ``config.statistics`` order)."""
    target_raw = np.asarray(target_raw, dtype=np.float64)
    sim = IbmSimulator(spec, params, years, target_raw, config.statistics, burn_in_years)
    target = target_raw / np.where(target_raw != 0, np.abs(target_raw), 1.0)
    return fit(sim, prior, target, config, n_jobs=n_jobs, checkpoint_dir=checkpoint_dir)
