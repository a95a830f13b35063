"""Synthetic test-record generator with known ground truth.

The generator builds herds, vet practices and a calendar of tests, then draws
each test's label from a logistic latent risk over the configured features and
the herd-level SICCT result from the label through practice-specific accuracy.

Weights are expressed per standard deviation of the observed feature (missing
values contribute nothing). A weight key is either a numeric record field, a
categorical indicator ``"field=value"``, or one of ``prev_result_1``,
``prev_result_2`` (indicator of ``not_clear``).

Practices carry a latent accuracy offset correlated with their mean herd size,
so practice-level analyses have recoverable structure; see
:func:`practice_correlation_analytic`.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .. import seeds
from .schema import (
    HERD_TYPES,
    MOVE_WINDOWS,
    OPTIONAL_FIELDS,
    BreakdownEvent,
    RecordError,
    TestRecord,
)

MIN_TEST_GAP_DAYS = 91
_HERD_TYPE_P = (0.3, 0.45, 0.15, 0.1)
_TEST_TYPE_NAMES = ("routine", "pre-movement", "short-interval", "other")
_TEST_TYPE_P = (0.7, 0.15, 0.1, 0.05)
_WINDOW_FRACTION = {"2y": 0.5, "1y": 0.5, "90d": 90 / 365}

DEFAULT_WEIGHTS = {
    "moves_in_1y": 0.5,
    "days_since_last_breakdown": -0.4,
    "badger_abundance": 0.5,
    "easting": 0.3,
    "prev_result_1": 0.4,
    "apha_risk_score": 0.3,
    "herd_type=dairy": 0.2,
}
DEFAULT_MISSING = {
    "easting": 0.02,
    "northing": 0.02,
    "days_since_last_test": 0.0,
    "days_since_last_breakdown": 0.0,
    "apha_risk_score": 0.1,
    "badger_abundance": 0.05,
    "vet_practice": 0.5,
    "tuberculin_batch_bovine": 0.9,
    "tuberculin_batch_avian": 0.9,
}


@dataclass
class SynthConfig:
    """Generator settings. ``fraction_missing`` is the probability of masking
    an otherwise present optional value."""

    n_records: int = 20_000
    n_herds: int = 2_000
    n_practices: int = 100
    seed: int = 0
    prevalence: float = 0.1
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    fraction_missing: dict = field(default_factory=lambda: dict(DEFAULT_MISSING))
    se: float = 0.638
    sp: float = 0.895
    practice_accuracy_sd: float = 0.05
    practice_size_correlation: float = -0.45
    herd_size_mean: float = 120.0
    practice_herd_size_sd: float = 40.0
    herd_size_sd: float = 40.0
    extent_m: float = 100_000.0
    start_date: str = "2012-01-01"
    end_date: str = "2021-09-30"

    def validate(self) -> None:
        if self.n_herds < 1 or self.n_records < self.n_herds:
            raise ValueError("need n_records >= n_herds >= 1")
        if self.n_practices < 1:
            raise ValueError("n_practices must be >= 1")
        weights_zero = all(w == 0 for w in self.weights.values())
        if weights_zero and self.prevalence == 0:
            raise ValueError("degenerate config: all weights zero and zero prevalence")
        if not 0 < self.prevalence < 1:
            raise ValueError(f"prevalence must lie in (0, 1), got {self.prevalence}")
        for name, frac in self.fraction_missing.items():
            if name not in OPTIONAL_FIELDS:
                raise ValueError(f"fraction_missing: {name} is not an optional field")
            if not 0 <= frac <= 1:
                raise ValueError(f"fraction_missing[{name}]={frac} outside [0, 1]")
        for p in (self.se, self.sp):
            if not 0 <= p <= 1:
                raise ValueError("se and sp must lie in [0, 1]")
        if not -1 <= self.practice_size_correlation <= 1:
            raise ValueError("practice_size_correlation must lie in [-1, 1]")
        span = (self._end() - self._start()).days
        per_herd = -(-self.n_records // self.n_herds)
        if (per_herd - 1) * MIN_TEST_GAP_DAYS > span:
            raise ValueError(
                f"{per_herd} tests per herd do not fit between {self.start_date} and "
                f"{self.end_date} with a {MIN_TEST_GAP_DAYS}-day minimum gap"
            )
        for key in self.weights:
            _weight_source(key)

    def _start(self) -> dt.date:
        return dt.date.fromisoformat(self.start_date)

    def _end(self) -> dt.date:
        return dt.date.fromisoformat(self.end_date)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown SynthConfig fields: {sorted(unknown)}")
        cfg = cls(**data)
        if "fraction_missing" in data:
            cfg.fraction_missing = {**DEFAULT_MISSING, **data["fraction_missing"]}
        return cfg

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class GroundTruth:
    weights: dict
    intercept: float
    feature_mean: dict
    feature_sd: dict
    risk: np.ndarray  # latent P(label) per record
    posterior: np.ndarray  # P(label | every observed feature) per record
    practice_mean_size: np.ndarray
    practice_offset: np.ndarray

    def bayes_auc(self) -> float:
        return expected_auc(self.posterior)


def expected_auc(q: np.ndarray) -> float:
    """AUC of score ``q`` when each label is Bernoulli(q), in expectation.

    Pairs (i, k) count with weight q_i (1 - q_k); ties earn half credit.
    """
    q = np.asarray(q, dtype=np.float64)
    order = np.argsort(q, kind="stable")
    qs = q[order]
    neg = 1.0 - qs
    _, start = np.unique(qs, return_index=True)
    pos_sum = np.add.reduceat(qs, start)
    neg_sum = np.add.reduceat(neg, start)
    neg_below = np.concatenate(([0.0], np.cumsum(neg_sum)[:-1]))
    # within a tie group, pairs i != k share half credit
    self_pairs = np.add.reduceat(qs * neg, start)
    tie = 0.5 * (pos_sum * neg_sum - self_pairs)
    num = np.sum(pos_sum * neg_below) + np.sum(tie)
    den = qs.sum() * neg.sum() - np.sum(qs * neg)
    return float(num / den)


def _weight_source(key: str) -> tuple[str, Optional[str]]:
    from .features import NUMERIC_FEATURES

    if "=" in key:
        name, value = key.split("=", 1)
        if name not in ("test_type", "herd_type", "prev_result_1", "prev_result_2"):
            raise ValueError(f"weight {key!r}: indicator weights need a categorical field")
        return name, value
    if key in ("prev_result_1", "prev_result_2"):
        return key, "not_clear"
    if key == "severe_interpretation" or (key in NUMERIC_FEATURES and key != "sicct_herd_result"):
        return key, None
    raise ValueError(f"weight {key!r} does not name a usable feature")


def _mask(rng, n, frac):
    return rng.random(n) < frac if frac > 0 else np.zeros(n, dtype=bool)


def generate_columns(config: SynthConfig) -> dict:
    """Array-level generator behind :func:`generate_synthetic`.

    Returns a dict of per-record numpy arrays (float columns use NaN and object
    columns ``None`` for missing), the breakdown arrays and the ground truth.
    """
    config.validate()
    cfg = config
    s = lambda name: seeds.rng(cfg.seed, "synth", name)  # noqa: E731

    # practices
    rng = s("practices")
    z1 = rng.standard_normal(cfg.n_practices)
    z2 = rng.standard_normal(cfg.n_practices)
    rho = cfg.practice_size_correlation
    practice_size = cfg.herd_size_mean + cfg.practice_herd_size_sd * z1
    practice_offset = cfg.practice_accuracy_sd * (rho * z1 + np.sqrt(1 - rho * rho) * z2)

    # herds
    rng = s("herds")
    H = cfg.n_herds
    herd_practice = rng.integers(0, cfg.n_practices, H)
    herd_size = np.maximum(1, np.rint(practice_size[herd_practice] + cfg.herd_size_sd * rng.standard_normal(H))).astype(np.int64)
    herd_type = rng.choice(len(HERD_TYPES), size=H, p=_HERD_TYPE_P)
    easting = rng.uniform(0, cfg.extent_m, H)
    northing = rng.uniform(0, cfg.extent_m, H)
    propensity = rng.standard_normal(H)
    field_ = 1.0 + 0.8 * np.sin(easting / 17_000.0) * np.cos(northing / 23_000.0)
    badger = np.maximum(0.0, field_ + 0.3 * rng.standard_normal(H))
    apha = np.clip(np.rint(3 + 0.8 * propensity + 0.8 * (field_ - 1)), 1, 5).astype(np.int64)
    rate_in = np.exp(np.log(8.0) + 0.8 * rng.standard_normal(H))
    rate_out = np.exp(np.log(8.0) + 0.8 * rng.standard_normal(H))
    risky_frac = rng.beta(2, 8, H)

    # test calendar: equal tests per herd (+1 for a random subset)
    rng = s("calendar")
    base, extra = divmod(cfg.n_records, H)
    n_tests = np.full(H, base, dtype=np.int64)
    n_tests[rng.permutation(H)[:extra]] += 1
    start, end = cfg._start(), cfg._end()
    span = (end - start).days
    herd_of = np.repeat(np.arange(H), n_tests)
    rank = np.concatenate([np.arange(k) for k in n_tests]) if H else np.zeros(0, np.int64)
    day = np.empty(cfg.n_records, dtype=np.int64)
    first = np.concatenate(([0], np.cumsum(n_tests)[:-1]))
    for k in np.unique(n_tests):
        herds_k = np.flatnonzero(n_tests == k)
        avail = span - (k - 1) * MIN_TEST_GAP_DAYS
        offs = np.sort(rng.integers(0, avail + 1, size=(len(herds_k), k)), axis=1)
        offs += np.arange(k) * MIN_TEST_GAP_DAYS
        idx = first[herds_k][:, None] + np.arange(k)
        day[idx] = offs
    n = cfg.n_records
    gap = np.where(rank > 0, day - np.roll(day, 1), -1)

    # per-test covariates
    rng = s("tests")
    test_type = np.where(rank == 0, 0, rng.choice(4, size=n, p=_TEST_TYPE_P))
    severe = np.where(test_type == 2, rng.random(n) < 0.9, rng.random(n) < 0.02)
    p_prev = expit(-2.2 + 0.8 * propensity[herd_of])
    prev1 = np.where(rank >= 1, (rng.random(n) < p_prev).astype(np.int64), 2)
    prev2 = np.where(rank >= 2, (rng.random(n) < p_prev).astype(np.int64), 2)

    m4_in = rng.poisson(4 * rate_in[herd_of])
    m4_out = rng.poisson(4 * rate_out[herd_of])
    moves = {}
    for kind, m4 in (("in", m4_in), ("out", m4_out)):
        counts = {"4y": m4}
        risky = {"4y": rng.binomial(m4, risky_frac[herd_of])}
        prev_w = "4y"
        for w in ("2y", "1y", "90d"):
            counts[w] = rng.binomial(counts[prev_w], _WINDOW_FRACTION[w])
            bad = counts[prev_w] - risky[prev_w]
            risky[w] = _hypergeometric(rng, risky[prev_w], bad, counts[w])
            prev_w = w
        for w in MOVE_WINDOWS:
            moves[f"moves_{kind}_{w}"] = counts[w]
            moves[f"risky_moves_{kind}_{w}"] = risky[w]

    # historical breakdowns from the latent herd propensity
    rng = s("history")
    hist_rate = np.exp(-3.0 + propensity) / 365.0
    since_bd = np.full(n, -1, dtype=np.int64)
    n_ifn = np.zeros(n, dtype=np.int64)
    history_span = span + 3650
    n_hist = rng.poisson(hist_rate * history_span)
    for h in np.flatnonzero(n_hist):
        past = np.sort(rng.integers(-3650, span + 1, n_hist[h]))
        rows = slice(first[h], first[h] + n_tests[h])
        pos = np.searchsorted(past, day[rows], side="left")
        last = np.where(pos > 0, past[np.maximum(pos - 1, 0)], 0)
        since_bd[rows] = np.where(pos > 0, day[rows] - last, -1)
        n_ifn[rows] = 2 * pos

    batch_b = rng.integers(0, 661, n)
    batch_a = rng.integers(0, 646, n)

    dates = np.datetime64(start.isoformat()) + day.astype("timedelta64[D]")
    month = dates.astype("datetime64[M]").astype(np.int64) % 12 + 1

    cols: dict = {
        "herd_idx": herd_of,
        "day": day,
        "month": month,
        "severe_interpretation": severe,
        "n_animals_tested": herd_size[herd_of],
        "easting": easting[herd_of].copy(),
        "northing": northing[herd_of].copy(),
        "prev_result_1": prev1,
        "prev_result_2": prev2,
        "days_since_last_test": np.where(gap >= 0, gap, np.nan),
        "days_since_last_breakdown": np.where(since_bd >= 0, since_bd, np.nan).astype(np.float64),
        "n_prior_ifn_gamma_tests": n_ifn,
        "test_type": test_type,
        "herd_type": herd_type[herd_of],
        "apha_risk_score": apha[herd_of].astype(np.float64),
        "badger_abundance": badger[herd_of].copy(),
        "practice": herd_practice[herd_of],
        "batch_bovine": batch_b,
        "batch_avian": batch_a,
        **moves,
    }

    # missingness
    rng = s("missing")
    present = {}
    for name in OPTIONAL_FIELDS:
        present[name] = ~_mask(rng, n, cfg.fraction_missing.get(name, 0.0))
    for name in ("easting", "northing", "days_since_last_test", "days_since_last_breakdown",
                 "apha_risk_score", "badger_abundance"):
        cols[name] = np.where(present[name], cols[name], np.nan)
    present["days_since_last_test"] &= ~np.isnan(cols["days_since_last_test"])
    present["days_since_last_breakdown"] &= ~np.isnan(cols["days_since_last_breakdown"])
    cols["present"] = present

    # latent risk
    score = np.zeros(n)
    means, sds = {}, {}
    for key, w in cfg.weights.items():
        x = _weight_column(cols, key)
        ok = ~np.isnan(x)
        mu = float(x[ok].mean()) if ok.any() else 0.0
        sd = float(x[ok].std()) if ok.any() else 0.0
        means[key], sds[key] = mu, sd
        if w == 0 or sd == 0:
            continue
        score += w * np.where(ok, (x - mu) / sd, 0.0)
    f = lambda b: float(np.mean(expit(b + score))) - cfg.prevalence  # noqa: E731
    intercept = brentq(f, -50.0, 50.0, xtol=1e-14)
    risk = expit(intercept + score)

    rng = s("labels")
    label = rng.random(n) < risk

    # SICCT herd result through practice accuracy
    off = practice_offset[cols["practice"]]
    se_j = np.clip(cfg.se + off, 0.0, 1.0)
    sp_j = np.clip(cfg.sp + off, 0.0, 1.0)
    correct = rng.random(n) < np.where(label, se_j, sp_j)
    sicct = np.where(correct, label, ~label)
    cols["label"] = label
    cols["sicct"] = sicct

    # posterior given observed features; unknown practice -> population mean accuracy
    known = present["vet_practice"]
    se_obs = np.where(known, se_j, np.mean(np.clip(cfg.se + practice_offset[herd_practice[herd_of]], 0, 1)))
    sp_obs = np.where(known, sp_j, np.mean(np.clip(cfg.sp + practice_offset[herd_practice[herd_of]], 0, 1)))
    like1 = np.where(sicct, se_obs, 1 - se_obs)
    like0 = np.where(sicct, 1 - sp_obs, sp_obs)
    posterior = risk * like1 / (risk * like1 + (1 - risk) * like0)

    # breakdown events consistent with the 90-day labelling rule
    bd_offset = np.where(sicct, 0, rng.integers(1, 61, n))
    conf_delay = rng.integers(0, 31, n)
    cols["bd_confirmed_start"] = np.where(label, day + bd_offset, -1)
    cols["bd_confirmation"] = np.where(label, day + bd_offset + conf_delay, -1)
    cols["bd_unconfirmed_start"] = np.where(sicct & ~label, day, -1)

    truth = GroundTruth(
        weights=dict(cfg.weights),
        intercept=float(intercept),
        feature_mean=means,
        feature_sd=sds,
        risk=risk,
        posterior=posterior,
        practice_mean_size=practice_size,
        practice_offset=practice_offset,
    )
    cols["truth"] = truth
    return cols


def _hypergeometric(rng, good, bad, nsample):
    good = np.asarray(good)
    out = np.zeros_like(good)
    ok = (good > 0) & (nsample > 0)
    if ok.any():
        out[ok] = rng.hypergeometric(good[ok], bad[ok], nsample[ok])
    return out


def _weight_column(cols: dict, key: str) -> np.ndarray:
    name, value = _weight_source(key)
    if name in ("prev_result_1", "prev_result_2"):
        code = {"clear": 0, "not_clear": 1, "unknown": 2}[value]
        return (cols[name] == code).astype(np.float64)
    if name == "test_type":
        return (cols["test_type"] == _TEST_TYPE_NAMES.index(value)).astype(np.float64)
    if name == "herd_type":
        return (cols["herd_type"] == HERD_TYPES.index(value)).astype(np.float64)
    if name == "test_date":
        return cols["day"].astype(np.float64)
    return np.asarray(cols[name], dtype=np.float64)


_PREV = ("clear", "not_clear", "unknown")


def generate_synthetic(config: SynthConfig) -> tuple[list[TestRecord], list[BreakdownEvent], GroundTruth]:
    """Generate records, breakdown events and the ground truth for ``config``."""
    cols = generate_columns(config)
    start = config._start()
    present = cols["present"]
    n = config.n_records
    records = []
    width = max(7, len(str(n)))
    for i in range(n):
        date = start + dt.timedelta(days=int(cols["day"][i]))
        h = int(cols["herd_idx"][i])

        def opt(name, value, cast=float):
            return cast(value) if present[name][i] else None

        kw = dict(
            test_id=f"T{i + 1:0{width}d}",
            herd_id=f"H{h + 1:06d}",
            test_date=date,
            month=int(cols["month"][i]),
            severe_interpretation=bool(cols["severe_interpretation"][i]),
            n_animals_tested=int(cols["n_animals_tested"][i]),
            easting=opt("easting", cols["easting"][i]),
            northing=opt("northing", cols["northing"][i]),
            prev_result_1=_PREV[cols["prev_result_1"][i]],
            prev_result_2=_PREV[cols["prev_result_2"][i]],
            days_since_last_test=opt("days_since_last_test", cols["days_since_last_test"][i], int),
            days_since_last_breakdown=opt("days_since_last_breakdown", cols["days_since_last_breakdown"][i], int),
            n_prior_ifn_gamma_tests=int(cols["n_prior_ifn_gamma_tests"][i]),
            test_type=_TEST_TYPE_NAMES[cols["test_type"][i]],
            herd_type=HERD_TYPES[cols["herd_type"][i]],
            apha_risk_score=opt("apha_risk_score", cols["apha_risk_score"][i], int),
            badger_abundance=opt("badger_abundance", cols["badger_abundance"][i]),
            vet_practice=opt("vet_practice", cols["practice"][i], lambda v: f"VP{int(v) + 1:04d}"),
            tuberculin_batch_bovine=opt("tuberculin_batch_bovine", cols["batch_bovine"][i], lambda v: f"TB{int(v):03d}"),
            tuberculin_batch_avian=opt("tuberculin_batch_avian", cols["batch_avian"][i], lambda v: f"TA{int(v):03d}"),
            sicct_herd_result="not_clear" if cols["sicct"][i] else "clear",
            label_confirmed_breakdown=bool(cols["label"][i]),
        )
        for key, arr in cols.items():
            if key.startswith(("moves_", "risky_moves_")):
                kw[key] = int(arr[i])
        records.append(TestRecord(**kw))

    events = []
    for i in range(n):
        herd = f"H{int(cols['herd_idx'][i]) + 1:06d}"
        if cols["bd_confirmed_start"][i] >= 0:
            events.append(
                BreakdownEvent(
                    herd_id=herd,
                    start_date=start + dt.timedelta(days=int(cols["bd_confirmed_start"][i])),
                    confirmed=True,
                    confirmation_date=start + dt.timedelta(days=int(cols["bd_confirmation"][i])),
                )
            )
        elif cols["bd_unconfirmed_start"][i] >= 0:
            events.append(
                BreakdownEvent(
                    herd_id=herd,
                    start_date=start + dt.timedelta(days=int(cols["bd_unconfirmed_start"][i])),
                    confirmed=False,
                )
            )
    return records, events, cols["truth"]


def practice_correlation_analytic(config: SynthConfig) -> float:
    """Expected Pearson r between practice SICCT accuracy and mean tested herd size.

    Both practice-level quantities are observed with sampling noise (binomial
    accuracy over the practice's tests, herd-size scatter over its herds),
    which attenuates the latent correlation. First-order approximation that
    ignores offset clipping and practice-to-practice prevalence differences.
    """
    s_a = config.practice_accuracy_sd
    s_m = config.practice_herd_size_sd
    herds_per_practice = config.n_herds / config.n_practices
    coverage = 1.0 - config.fraction_missing.get("vet_practice", 0.0)
    tests_per_practice = config.n_records / config.n_practices * coverage
    acc = config.prevalence * config.se + (1 - config.prevalence) * config.sp
    var_acc = s_a**2 + acc * (1 - acc) / tests_per_practice
    var_size = s_m**2 + config.herd_size_sd**2 / herds_per_practice
    return config.practice_size_correlation * s_a * s_m / np.sqrt(var_acc * var_size)


def latent_correlation_for(config: SynthConfig, target_r: float) -> float:
    """Latent practice correlation whose attenuated analytic value equals ``target_r``."""
    probe = dataclasses.replace(config, practice_size_correlation=1.0)
    rho = target_r / practice_correlation_analytic(probe)
    if not -1 <= rho <= 1:
        raise RecordError(f"target r={target_r} unreachable; sampling noise caps |r| at {abs(target_r / rho):.3f}")
    return float(rho)
