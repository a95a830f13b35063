"""Acceptance suite: one test per numbered criterion, each printing a PASS/FAIL line."""
import dataclasses
import json
import time

import numpy as np
from scipy import stats
from scipy.special import expit

from herdgate import seeds
from herdgate.abcsmc import DEFAULT_STATISTICS, AbcConfig, ParamPrior, Prior, fit, fit_ibm, raw_statistics
from herdgate.cli import main
from herdgate.evalx import confusion, permutation_importance, practice_analysis_arrays, roc
from herdgate.evalx import threshold_for_sensitivity, threshold_for_specificity
from herdgate.hgbt import Hyperparameters, train
from herdgate.ibm import (
    ConservationError,
    HerdSpec,
    SimParams,
    TestCharacteristics,
    WorldSpec,
    demo_world,
    init_world,
    run_herd_test,
    run_scenario,
    se_equivalent_for_target_hse,
)
from herdgate.ibm.params import demo_params
from herdgate.ibm.sim import S
from herdgate.records import CONTROL, SynthConfig, categorical_mask, feature_matrix, generate_synthetic, label_array
from herdgate.records.synth import expected_auc, generate_columns, latent_correlation_for
from herdgate.tune import SearchSpec, random_search
from oracles import chain_binomial_sti, exact_greedy_tree, pairwise_auc, sweep_operating_points

NEVER = 10**9
QUIET = SimParams(beta_c=0.0, sigma=0.0, beta_e=0.0, eps_cattle=0.0, eps_badger=0.0)


def _isolated(n_herds, size, initial_I=0, **kw):
    herds = [HerdSpec(id=f"H{i}", size=size, tile=0, initial_I=initial_I, first_test_day=NEVER)
             for i in range(n_herds)]
    return WorldSpec(herds=herds, n_tiles=1, tile_groups=[0.0], **kw)


def _scored(seed, n=None, levels=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 501))
    y = rng.random(n) < rng.uniform(0.1, 0.9)
    y[0], y[1] = True, False
    s = rng.normal(size=n) + 0.8 * y
    if levels:
        s = np.round(s * levels) / levels
    return s, y


# ------------------------------------------------------------------ 1


def test_criterion_01_hgbt_oracle_equivalence(criterion):
    t0 = time.perf_counter()
    mismatches = []
    for seed in range(25):
        rng = np.random.default_rng(1000 + seed)
        n, p = int(rng.integers(20, 201)), int(rng.integers(1, 4))
        X = np.round(rng.normal(size=(n, p)), 1)
        X[rng.random((n, p)) < 0.1] = np.nan
        logit = 1.5 * np.nan_to_num(X[:, 0]) - np.nan_to_num(X[:, -1]) * (p > 1)
        y = (rng.random(n) < expit(logit)).astype(float)
        if y.min() == y.max():
            y[0] = 1.0 - y[0]
        leaves, msl = int(rng.integers(2, 10)), int(rng.integers(1, 5))
        tree = train(X, y, Hyperparameters(n_iterations=1, max_leaf_nodes=leaves, min_samples_leaf=msl,
                                           l2_regularization=0.0)).trees[0]
        got = [(i, tree.feature[i], tree.threshold_bin[i], tree.missing_left[i]) for i in tree.split_order()]
        if got != exact_greedy_tree(X, y, leaves, 0.0, msl):
            mismatches.append(seed)
    elapsed = time.perf_counter() - t0
    criterion(1, not mismatches and elapsed < 10.0,
              f"{25 - len(mismatches)}/25 split sequences identical, {elapsed:.2f} s (limit 10 s)")


# ------------------------------------------------------------------ 2


def test_criterion_02_learnability(criterion):
    records, _, truth = generate_synthetic(SynthConfig(n_records=100_000, n_herds=20_000, seed=2))
    X, names = feature_matrix(records)
    y = label_array(records)
    spec = SearchSpec(n_configs=8, n_splits=2, n_iterations=100, max_leaf_nodes_range=(4, 32),
                      learning_rate_range=(0.02, 0.3), metric="auc", seed=2)
    t0 = time.perf_counter()
    res = random_search(X, y, spec, categorical=categorical_mask(names), feature_names=names)
    elapsed = time.perf_counter() - t0
    te = res.test_index
    held_out = roc(res.model.predict_proba(X[te]), y[te]).auc
    bayes = truth.bayes_auc()
    bayes_test = expected_auc(truth.posterior[te])
    gap = bayes - held_out
    criterion(2, abs(gap) <= 0.03 and elapsed < 300.0,
              f"held-out AUC {held_out:.4f} vs Bayes {bayes:.4f} (test rows {bayes_test:.4f}), "
              f"gap {gap:.4f} (limit 0.03); tuning+training {elapsed:.0f} s (limit 300 s)")


# ------------------------------------------------------------------ 3


def test_criterion_03_auc_matches_pairwise_oracle(criterion):
    worst = 0.0
    for seed in range(100):
        s, y = _scored(seed, levels=4 if seed % 4 == 0 else None)
        worst = max(worst, abs(roc(s, y).auc - pairwise_auc(s, y)))
    criterion(3, worst <= 1e-12, f"max |trapezoid - pairwise| = {worst:.2e} over 100 instances (limit 1e-12)")


# ------------------------------------------------------------------ 4


def test_criterion_04_threshold_dominance(criterion):
    failures = 0
    checks = 0
    for seed in range(100):
        s, y = _scored(500 + seed, levels=5 if seed % 3 == 0 else None)
        a = roc(s, y)
        sweep = sweep_operating_points(s, y)
        for target in np.random.default_rng(seed).uniform(0, 1, 10):
            op = threshold_for_specificity(a, target)
            cm = confusion(s, y, op.threshold)
            ok = (op.specificity >= target
                  and op.sensitivity == max(se for _, se, sp in sweep if sp >= target)
                  and (cm.sensitivity, cm.specificity) == (op.sensitivity, op.specificity))
            op = threshold_for_sensitivity(a, target)
            cm = confusion(s, y, op.threshold)
            ok = ok and (op.sensitivity >= target
                         and op.specificity == max(sp for _, se, sp in sweep if se >= target)
                         and (cm.sensitivity, cm.specificity) == (op.sensitivity, op.specificity))
            failures += not ok
            checks += 1
    criterion(4, failures == 0, f"{checks - failures}/{checks} targets undominated for both directions")


# ------------------------------------------------------------------ 5


def test_criterion_05_importance_discrimination(criterion):
    wins = 0
    const_values = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = 3000
        a = rng.normal(size=n)
        X = np.column_stack([a, rng.normal(size=n), np.full(n, 2.0), rng.uniform(size=n)])
        y = rng.random(n) < expit(3 * a)
        names = ["A", "B", "CONST", CONTROL]
        model = train(X[:2000], y[:2000], Hyperparameters(n_iterations=30, max_leaf_nodes=8), feature_names=names)
        rep = permutation_importance(model, X[2000:], y[2000:], n_repeats=10, seed=seed)
        wins += rep.get("A").mean > rep.get(CONTROL).ci_high
        const_values += [rep.get("CONST").mean, rep.get("CONST").ci_low, rep.get("CONST").ci_high]
    const_zero = all(v == 0.0 for v in const_values)
    criterion(5, wins >= 19 and const_zero,
              f"informative > control upper CI in {wins}/20 runs (need 19); constant column exactly 0: {const_zero}")


# ------------------------------------------------------------------ 6


def test_criterion_06_practice_correlation_recovery(criterion):
    base = SynthConfig(n_records=60_000, n_herds=12_000, n_practices=600, seed=0,
                       fraction_missing={"vet_practice": 0.0})
    rho = latent_correlation_for(base, -0.4)
    rs = []
    for seed in range(10):
        cols = generate_columns(dataclasses.replace(base, practice_size_correlation=rho, seed=100 + seed))
        rep = practice_analysis_arrays([f"P{p}" for p in cols["practice"]], cols["n_animals_tested"],
                                       cols["sicct"] == cols["label"])
        rs.append(rep.sicct_r)
    rs = np.array(rs)
    criterion(6, bool(np.all(np.abs(rs + 0.4) <= 0.1)),
              f"recovered r in [{rs.min():.3f}, {rs.max():.3f}], mean {rs.mean():.3f} (target -0.4 +- 0.1)")


# ------------------------------------------------------------------ 7


def _environment_decay_exact() -> bool:
    spec = dataclasses.replace(_isolated(2, 5, initial_environment=7.5), n_tiles=3, tile_groups=[0.0, 0.0, 0.0])
    w = init_world(spec, dataclasses.replace(QUIET, delta=0.07), 0)
    ok = True
    for t in range(1, 200):
        w.step()
        ok &= bool(np.allclose(w.E, 7.5 * np.exp(-0.07 * t), rtol=1e-12, atol=0))
    return ok


def _false_positive_rate() -> tuple:
    sp, n = 0.99, 20
    test = TestCharacteristics(sp=sp, severe_sp=sp)
    w = init_world(_isolated(10_000, n), dataclasses.replace(QUIET, test=test), 0)
    hits = sum(run_herd_test(w, h, "standard").not_clear for h in range(10_000))
    ci = stats.binomtest(hits, 10_000).proportion_ci(0.95)
    expected = 1 - sp**n
    return ci.low <= expected <= ci.high, hits / 10_000, expected


def _chain_binomial_mae() -> float:
    n, beta, sigma, days = 10, 0.4, 10.0, 25
    params = SimParams(beta_c=beta, sigma=sigma, beta_e=0.0, eps_cattle=0.0, eps_badger=0.0)
    w = init_world(_isolated(5000, n, initial_I=1), params, 11)
    sim_mean = []
    for _ in range(days):
        w.step()
        sim_mean.append(np.mean(n - w.herd_counts(S)))
    oracle_mean, _ = chain_binomial_sti(n, 0, 1, beta, sigma, days)
    return float(np.mean(np.abs(np.array(sim_mean) - oracle_mean)) / oracle_mean[-1])


def _conservation_holds() -> tuple:
    spec = demo_world(n_herds=50, mean_size=60, seed=1, badger_initial_prevalence=0.1)
    params = SimParams(beta_c=0.01, beta_e=1e-5, eps_cattle=0.1, eps_badger=0.1, badger_beta=0.005,
                       badger_beta_e=2e-4, birth_rate=1e-3, death_rate=1e-3)
    w = init_world(spec, params, 2, check_conservation=True)
    animal_days = 0
    try:
        while animal_days < 1_000_000:
            animal_days += int(w.herd_sizes().sum())
            w.step()
    except ConservationError:
        return False, animal_days
    return True, animal_days


def test_criterion_07_simulator_oracles(criterion):
    decay = _environment_decay_exact()
    fp_ok, fp_rate, fp_expected = _false_positive_rate()
    mae = _chain_binomial_mae()
    conserved, animal_days = _conservation_holds()
    criterion(7, decay and fp_ok and mae < 0.02 and conserved,
              f"decay exact {decay}; false-positive rate {fp_rate:.4f} vs {fp_expected:.4f} in 95% CI {fp_ok}; "
              f"chain-binomial MAE {mae:.4f} (limit 0.02); conservation over {animal_days} animal-days {conserved}")


# ------------------------------------------------------------------ 8


def test_criterion_08_directional_effect(criterion):
    spec, params = demo_world(), demo_params()
    kw = dict(years=3, burn_in_years=1)
    baseline_hse = run_scenario(spec, params, n_replicates=10, seed=0, **kw).herd_performance().hse
    shift = se_equivalent_for_target_hse(spec, params, min(1.0, baseline_hse + (0.784 - 0.638)),
                                         n_replicates=10, seed=0, tol=0.01, **kw)
    base = run_scenario(spec, params, n_replicates=30, seed=8, **kw)
    better = run_scenario(spec, params, n_replicates=30, seed=8, se_shift=shift.shift, **kw)
    lines, ok = [], True
    for metric in ("confirmed_breakdowns", "reactors"):
        b, t = base.totals(metric), better.totals(metric)
        p = stats.ttest_rel(b, t, alternative="greater").pvalue
        ok &= bool(b.mean() > t.mean() and p < 0.05)
        lines.append(f"{metric} {b.mean():.2f} -> {t.mean():.2f} (p={p:.2g})")
    criterion(8, ok, f"HSe {baseline_hse:.3f} -> {shift.hse:.3f} at shift {shift.shift:+.3f}; " + "; ".join(lines))


# ------------------------------------------------------------------ 9


def _binomial_toy() -> tuple:
    # target: 15 successes in 50 trials, generated at p* = 0.3
    def sim(theta, seed):
        return np.array([seeds.rng(seed, "toy").binomial(50, theta["p"])], dtype=float)

    t0 = time.perf_counter()
    res = fit(sim, Prior((ParamPrior("p", 0.0, 1.0),)), [15.0], AbcConfig(n_particles=200, n_generations=6, seed=1))
    return float(res.final.mean()[0]), time.perf_counter() - t0


def _se_recovery() -> tuple:
    spec, base = demo_world(seed=7), demo_params()
    raw = raw_statistics(run_scenario(spec, base.with_values(se_I=0.8), years=2, n_replicates=10, seed=99))
    t0 = time.perf_counter()
    res = fit_ibm(spec, base, Prior((ParamPrior("se_I", 0.3, 1.0),)), [raw[s] for s in DEFAULT_STATISTICS],
                  AbcConfig(n_particles=200, n_generations=5, alpha=0.75, seed=9), years=2)
    return float(res.final.mean()[0]), time.perf_counter() - t0, res


def test_criterion_09_abc_recovery(criterion):
    toy_mean, toy_time = _binomial_toy()
    se_mean, se_time, res = _se_recovery()
    ok = abs(toy_mean - 0.3) <= 0.05 and toy_time < 60 and 0.7 <= se_mean <= 0.9 and se_time < 1800
    criterion(9, ok, f"toy posterior mean {toy_mean:.4f} in {toy_time:.1f} s; se_I posterior mean {se_mean:.3f} "
                     f"after {len(res.populations)} generations, {res.n_calls} simulations, {se_time:.0f} s")


# ------------------------------------------------------------------ 10


def _contents(root) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            data = p.read_bytes()
            if p.name == "manifest.json":
                m = json.loads(data)
                m.pop("timing")
                data = json.dumps(m, sort_keys=True).encode()
            out[p.relative_to(root).as_posix()] = data
    return out


def _commands(tmp, data, model, split):
    sim = {"world": {"n_herds": 12, "mean_size": 20, "n_tiles": 4, "initial_infected_herds": 3},
           "years": 1, "n_replicates": 3}
    return {
        "generate": ({"n_records": 600, "n_herds": 150, "n_practices": 12}, []),
        "train": ({"n_iterations": 10, "max_leaf_nodes": 8}, ["--data", data]),
        "tune": ({"n_configs": 2, "n_splits": 2, "n_iterations": 5, "max_leaf_nodes_range": [2, 8]}, ["--data", data]),
        "eval": ({"target_specificity": 0.9}, ["--data", data, "--model", model, "--split", split]),
        "importance": ({"n_repeats": 5}, ["--data", data, "--model", model]),
        "practices": ({}, ["--data", data, "--model", model]),
        "simulate": (sim, []),
        "sweep": ({**sim, "grid": [{}, {"se_shift": 0.2}]}, []),
        "fit": ({**sim, "prior": {"se_I": {"lo": 0.5, "hi": 1.0}}, "truth": {"se_I": 0.8},
                 "abc": {"n_particles": 10, "n_generations": 2}}, []),
    }


def test_criterion_10_byte_identical_reruns(criterion, tmp_path):
    assert main(["generate", "--out", str(tmp_path / "data"), "--seed", "4", "--config",
                 _write(tmp_path / "g.json", {"n_records": 600, "n_herds": 150, "n_practices": 12})]) == 0
    data = str(tmp_path / "data" / "dataset.csv")
    assert main(["train", "--data", data, "--out", str(tmp_path / "model"), "--config",
                 _write(tmp_path / "t.json", {"n_iterations": 10, "max_leaf_nodes": 8})]) == 0
    model, split = str(tmp_path / "model" / "model.json"), str(tmp_path / "model" / "split.json")
    differing = []
    for name, (cfg, extra) in _commands(tmp_path, data, model, split).items():
        path = _write(tmp_path / f"{name}.json", cfg)
        outs = []
        for threads in (1, 2):
            out = tmp_path / f"{name}-{threads}"
            assert main([name, "--config", path, "--out", str(out), "--seed", "11", "--threads", str(threads),
                         *extra]) == 0
            outs.append(_contents(out))
        if outs[0] != outs[1] or not outs[0]:
            differing.append(name)
    criterion(10, not differing, f"9 commands rerun at 1 and 2 threads; differing: {differing or 'none'}")


def _write(path, cfg) -> str:
    path.write_text(json.dumps(cfg))
    return str(path)
