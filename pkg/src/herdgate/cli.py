"""Command-line entry point.

Every command reads an optional JSON ``--config``, writes a fresh output
directory and records a ``manifest.json`` with input and output hashes. Each
option can also be set through ``HERDGATE_<OPTION>`` (for example
``HERDGATE_SEED``); explicit flags win. Exit codes: 0 success, 1 validation or
runtime error, 2 usage error.

Stage seeds are derived from the master seed with :func:`herdgate.seeds.derive`
using the command name as the path, so a stage can be rerun on its own.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, seeds
from .evalx.reports import confusion_dict, dumps_json, write_csv, write_json

OPTIONS = ("config", "out", "seed", "threads", "data", "model", "split")


class CliError(Exception):
    """Validation failure reported with exit status 1."""


# ------------------------------------------------------------------ helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _check_keys(cfg: dict, allowed, where: str) -> None:
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise CliError(f"{where}: unknown field(s) {unknown}")


def _require(path, flag: str) -> Path:
    if path is None:
        raise CliError(f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise CliError(f"{flag}: {p} does not exist")
    return p


class Run:
    """Collects inputs and stage seeds for the manifest of one command."""

    def __init__(self, args):
        self.args = args
        self.master = args.seed
        self.inputs: dict = {}
        self.stage_seeds: dict = {}
        self.timing: dict = {}  # extra manifest timing, excluded from rerun comparisons

    def seed(self, *path) -> int:
        s = seeds.derive(self.master, *path)
        self.stage_seeds["/".join(str(p) for p in path)] = s
        return s

    def input(self, name: str, path) -> Path:
        p = _require(path, "--" + name)
        self.inputs[name] = {"path": str(path), "sha256": sha256(p)}
        return p

    def config(self) -> dict:
        if self.args.config is None:
            return {}
        p = self.input("config", self.args.config)
        try:
            cfg = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"--config: invalid JSON ({exc})") from exc
        if not isinstance(cfg, dict):
            raise CliError("--config: top level must be a JSON object")
        return cfg


def _load_records(run: Run):
    from .records import feature_matrix, label_array, load_dataset

    records = load_dataset(run.input("data", run.args.data))
    X, names = feature_matrix(records)
    return records, X, names, label_array(records).astype(np.float64)


def _load_split(run: Run, n: int):
    if run.args.split is None:
        return np.arange(n)
    d = json.loads(run.input("split", run.args.split).read_text())
    te = np.asarray(d["test"], dtype=np.int64)
    if te.size and (te.min() < 0 or te.max() >= n):
        raise CliError("--split: test indices do not match the dataset")
    return te


def _load_model(run: Run):
    from .hgbt import load_model

    return load_model(run.input("model", run.args.model))


# ------------------------------------------------------------------ data and model commands


def cmd_generate(run: Run, out: Path) -> None:
    from .records import SynthConfig, generate_synthetic, save_breakdowns, save_dataset

    cfg = run.config()
    cfg["seed"] = run.seed("generate")
    try:
        synth = SynthConfig.from_dict(cfg)
        records, breakdowns, truth = generate_synthetic(synth)
    except (TypeError, ValueError) as exc:
        raise CliError(f"generate config: {exc}") from exc
    save_dataset(records, out / "dataset.csv")
    save_breakdowns(breakdowns, out / "breakdowns.csv")
    write_json(out / "truth.json", {"bayes_auc": truth.bayes_auc(), "weights": truth.weights,
                                    "intercept": truth.intercept, "config": synth.to_dict()})


def cmd_train(run: Run, out: Path) -> None:
    from .hgbt import Hyperparameters, save_model, train
    from .records import categorical_mask
    from .tune import split_holdout

    cfg = run.config()
    test_fraction = float(cfg.pop("test_fraction", 0.2))
    _check_keys(cfg, Hyperparameters.__dataclass_fields__, "train config")
    hp = Hyperparameters(**cfg)
    records, X, names, y = _load_records(run)
    tr, te = split_holdout(len(y), test_fraction, run.seed("train", "split"))
    model = train(X[tr], y[tr], hp, seed=run.seed("train"), categorical=categorical_mask(names), feature_names=names)
    save_model(model, out / "model.json")
    write_json(out / "split.json", {"train": tr, "test": te})
    write_csv(out / "train_loss.csv", ["iteration", "log_loss"], enumerate(model.train_loss))


def cmd_tune(run: Run, out: Path) -> None:
    from .hgbt import save_model
    from .records import categorical_mask
    from .tune import SearchSpec, summary, write_config_summary, write_search_log, random_search

    cfg = run.config()
    _check_keys(cfg, set(SearchSpec.__dataclass_fields__) - {"seed"}, "tune config")
    spec = SearchSpec(seed=run.seed("tune"), **cfg)
    records, X, names, y = _load_records(run)
    res = random_search(X, y, spec, categorical=categorical_mask(names), feature_names=names,
                        n_jobs=run.args.threads)
    run.timing["search_jobs"] = [{"config": c, "split": s, "wall_time_s": float(res.wall_time[c, s])}
                                 for c in range(res.wall_time.shape[0]) for s in range(res.wall_time.shape[1])]
    write_search_log(res, out / "search_log.csv")
    write_config_summary(res, out / "config_summary.csv")
    write_json(out / "summary.json", summary(res))
    save_model(res.model, out / "model.json")
    write_json(out / "split.json", {"train": res.train_index, "test": res.test_index})


def cmd_eval(run: Run, out: Path) -> None:
    from .evalx import confusion, misclassification_by_year, roc, threshold_for_sensitivity, threshold_for_specificity
    from .evalx.reports import write_roc, write_roc_curve, write_yearly
    from .records.features import sicct_positive, years

    cfg = run.config()
    _check_keys(cfg, {"threshold", "target_specificity", "target_sensitivity"}, "eval config")
    threshold = float(cfg.get("threshold", 0.5))
    records, X, names, y = _load_records(run)
    model = _load_model(run)
    te = _load_split(run, len(y))
    p = model.predict_proba(X[te])
    labels = y[te].astype(bool)
    if labels.all() or not labels.any():
        raise CliError("evaluation rows need both labels")
    analysis = roc(p, labels)
    # the skin test alone, on the same rows, as the comparison point
    sicct = confusion(sicct_positive(records)[te].astype(np.float64), labels, 0.5)
    report = {"n": int(len(te)), "auc": analysis.auc, "threshold": threshold,
              "confusion": confusion_dict(confusion(p, labels, threshold)), "sicct": confusion_dict(sicct)}
    for key, fn, match in (("target_specificity", threshold_for_specificity, sicct.specificity),
                           ("target_sensitivity", threshold_for_sensitivity, sicct.sensitivity)):
        if key in cfg:
            # "sicct" matches the skin test's own rate on these rows
            target = match if cfg[key] == "sicct" else float(cfg[key])
            op = fn(analysis, target)
            report[key] = {"target": target, "threshold": op.threshold,
                           "sensitivity": op.sensitivity, "specificity": op.specificity,
                           "confusion": confusion_dict(confusion(p, labels, op.threshold))}
    write_json(out / "report.json", report)
    write_roc(analysis, out / "roc.csv")
    write_roc_curve(analysis, out / "roc_curve.csv")
    write_yearly(misclassification_by_year(years(records)[te], labels, p, threshold), out / "yearly.csv")


def cmd_importance(run: Run, out: Path) -> None:
    from .evalx import permutation_importance
    from .evalx.reports import write_importance, write_importance_bars

    cfg = run.config()
    _check_keys(cfg, {"n_repeats", "threshold"}, "importance config")
    records, X, names, y = _load_records(run)
    model = _load_model(run)
    te = _load_split(run, len(y))
    rep = permutation_importance(model, X[te], y[te], n_repeats=int(cfg.get("n_repeats", 10)),
                                 seed=run.seed("importance"), threshold=float(cfg.get("threshold", 0.5)),
                                 feature_names=names, n_jobs=run.args.threads)
    write_importance(rep, out / "importance.csv")
    write_importance_bars(rep, out / "importance_bars.csv")
    write_json(out / "summary.json", {"baseline_accuracy": rep.baseline_accuracy, "n_repeats": rep.n_repeats,
                                      "control": rep.control, "top": [f.name for f in rep.ranked()[:5]]})


def cmd_practices(run: Run, out: Path) -> None:
    from .evalx import practice_analysis
    from .evalx.reports import write_practices

    cfg = run.config()
    _check_keys(cfg, {"threshold"}, "practices config")
    records, X, names, y = _load_records(run)
    preds = None
    if run.args.model is not None:
        preds = _load_model(run).predict_proba(X) >= float(cfg.get("threshold", 0.5))
    rep = practice_analysis(records, preds)
    write_practices(rep, out / "practices.csv")
    write_csv(out / "practice_size_accuracy.csv", ["mean_herd_size", "sicct_accuracy"],
              [(r.mean_herd_size, r.sicct_accuracy) for r in rep.rows])
    keys = ("sicct_global_accuracy", "sicct_fraction_outside", "sicct_r", "sicct_r_p", "model_global_accuracy",
            "model_fraction_outside", "model_r", "model_r_p")
    write_json(out / "summary.json", {k: getattr(rep, k) for k in keys} | {"n_practices": len(rep.rows)})


# ------------------------------------------------------------------ simulation commands

SCENARIO_KEYS = {"world", "world_file", "params", "params_file", "years", "n_replicates", "burn_in_years", "particles"}


def _scenario_inputs(run: Run, cfg: dict):
    from .abcsmc import read_populations
    from .ibm import SimParams, WorldSpec, demo_params, demo_world

    if "world_file" in cfg:
        spec = WorldSpec.from_json(run.input("world_file", cfg["world_file"]))
    else:
        world = dict(cfg.get("world", {}))
        world.setdefault("seed", run.seed("world"))
        spec = demo_world(**world)
    if "params_file" in cfg:
        base = SimParams.from_json(run.input("params_file", cfg["params_file"]))
    else:
        base = demo_params()
    params = base.with_values(**cfg.get("params", {}))
    particles = None
    if "particles" in cfg:
        path = run.input("particles", cfg["particles"])
        gens = sorted({int(r.split(",", 1)[0]) for r in path.read_text().splitlines()[1:]})
        pops = read_populations(path, [np.nan] * (gens[-1] + 1), [0] * (gens[-1] + 1))
        particles = pops[-1].as_particles()
    years = int(cfg.get("years", 3))
    if years < 1:
        raise CliError("years must be >= 1")
    return spec, params, particles, years


def _scenario(run: Run, cfg: dict, spec, params, particles, years, **kw):
    from .ibm import run_scenario

    return run_scenario(spec, params, years, n_replicates=int(cfg.get("n_replicates", 10)), seed=run.seed("simulate"),
                        particles=particles, burn_in_years=int(cfg.get("burn_in_years", 0)),
                        n_jobs=run.args.threads, **kw)


def cmd_simulate(run: Run, out: Path) -> None:
    from .ibm import write_scenario_report

    cfg = run.config()
    _check_keys(cfg, SCENARIO_KEYS, "simulate config")
    spec, params, particles, years = _scenario_inputs(run, cfg)
    write_scenario_report(_scenario(run, cfg, spec, params, particles, years), out)
    write_json(out / "world.json", spec.to_dict())
    write_json(out / "params.json", params.to_dict())


def cmd_sweep(run: Run, out: Path) -> None:
    """Scenario per grid point under common random numbers. A point is a dict
    of parameter overrides applied after burn-in; ``se_shift`` adds to every
    sensitivity. With ``target_hse`` the equivalent shift is found first and
    appended as an extra point."""
    from .ibm import se_equivalent_for_target_hse, write_scenario_report

    cfg = run.config()
    _check_keys(cfg, SCENARIO_KEYS | {"grid", "target_hse", "shift_search"}, "sweep config")
    spec, params, particles, years = _scenario_inputs(run, cfg)
    grid = [dict(p) for p in cfg.get("grid", [{}])]
    if not grid:
        raise CliError("grid must contain at least one point")
    search = None
    if "target_hse" in cfg:
        opts = dict(cfg.get("shift_search", {}))
        _check_keys(opts, {"years", "n_replicates", "tol", "burn_in_years", "max_iter"}, "shift_search")
        search = se_equivalent_for_target_hse(spec, params, float(cfg["target_hse"]), seed=run.seed("sweep", "shift"),
                                              n_jobs=run.args.threads, **opts)
        grid.append({"se_shift": search.shift})
    rows, plot = [], []
    base = None
    for k, point in enumerate(grid):
        shift = float(point.pop("se_shift", 0.0))
        try:
            params.with_values(**point)
        except ValueError as exc:
            raise CliError(f"grid point {k}: {exc}") from exc
        kw = {"se_shift": shift} if shift else {}
        if point:
            kw["intervention"] = point
        report = _scenario(run, cfg, spec, params, particles, years, **kw)
        write_scenario_report(report, out / "points" / str(k))
        s = report.summary()
        cb, re = s["confirmed_breakdowns_per_year"]["mean"], s["reactors_per_year"]["mean"]
        if base is None:
            base = (cb, re)
        rel = [(v - b) / b if b else float("nan") for v, b in zip((cb, re), base)]
        rows.append((k, json.dumps(point, sort_keys=True), shift, s.get("hse"), s.get("hsp"),
                     s["breakdowns_per_year"]["mean"], cb, re, rel[0], rel[1]))
        plot.append((s.get("hse"), re))
    write_csv(out / "sweep.csv", ["point", "overrides", "se_shift", "hse", "hsp", "breakdowns_per_year",
                                  "confirmed_breakdowns_per_year", "reactors_per_year",
                                  "confirmed_change", "reactors_change"], rows)
    write_csv(out / "sweep_plot.csv", ["hse", "reactors_per_year"], plot)
    if search is not None:
        write_json(out / "se_shift.json", {"shift": search.shift, "relative_change": search.relative_change,
                                           "hse": search.hse, "hsp": search.hsp,
                                           "baseline_hse": search.baseline_hse, "baseline_hsp": search.baseline_hsp,
                                           "target_hse": float(cfg["target_hse"]), "iterations": search.iterations})


def cmd_fit(run: Run, out: Path) -> None:
    """ABC-SMC fit. ``target`` gives raw statistics directly; otherwise
    ``truth`` overrides generate them from ``target_replicates`` runs."""
    from .abcsmc import AbcConfig, Prior, fit_ibm, raw_statistics, write_populations
    from .ibm import run_scenario

    cfg = run.config()
    _check_keys(cfg, SCENARIO_KEYS | {"prior", "abc", "target", "truth", "target_replicates", "checkpoint_dir"},
                "fit config")
    if "prior" not in cfg:
        raise CliError("fit config: prior is required")
    spec, params, _, years = _scenario_inputs(run, cfg)
    prior = Prior.from_dict(cfg["prior"])
    abc = dict(cfg.get("abc", {}))
    abc["seed"] = run.seed("fit")
    abc = AbcConfig.from_dict(abc)
    burn = int(cfg.get("burn_in_years", 0))
    if "target" in cfg:
        target = np.asarray(cfg["target"], dtype=np.float64)
        if target.shape != (len(abc.statistics),):
            raise CliError("target: one value per statistic required")
    else:
        truth = params.with_values(**cfg.get("truth", {}))
        rep = run_scenario(spec, truth, years, n_replicates=int(cfg.get("target_replicates", 1)),
                           seed=run.seed("fit", "target"), burn_in_years=burn, n_jobs=run.args.threads)
        raw = raw_statistics(rep)
        target = np.array([raw[s] for s in abc.statistics])
    res = fit_ibm(spec, params, prior, target, abc, years=years, burn_in_years=burn, n_jobs=run.args.threads,
                  checkpoint_dir=cfg.get("checkpoint_dir"))
    write_populations(res, out / "populations.csv")
    gens = [{"generation": p.generation, "epsilon": p.epsilon, "n_proposals": p.n_proposals,
             "acceptance_rate": p.acceptance_rate, "mean": dict(zip(prior.names, p.mean())),
             "sd": dict(zip(prior.names, np.sqrt(p.var())))} for p in res.populations]
    write_json(out / "posterior.json", {"statistics": list(abc.statistics), "target": target,
                                        "n_calls": res.n_calls, "stop_reason": res.stop_reason,
                                        "budget_exhausted": res.budget_exhausted, "generations": gens})


COMMANDS = {
    "generate": (cmd_generate, "synthesise a test-event dataset"),
    "train": (cmd_train, "train a boosted-tree model"),
    "tune": (cmd_tune, "random hyperparameter search"),
    "eval": (cmd_eval, "ROC, confusion matrices and yearly error rates"),
    "importance": (cmd_importance, "permutation feature importance"),
    "practices": (cmd_practices, "per-practice accuracy analysis"),
    "simulate": (cmd_simulate, "run the transmission simulator"),
    "fit": (cmd_fit, "fit simulator parameters with ABC-SMC"),
    "sweep": (cmd_sweep, "scenarios over a grid of test characteristics"),
}


# ------------------------------------------------------------------ driver


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON settings for the command")
    common.add_argument("--out", help="output directory (must not exist or be empty)")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--threads", type=int, help="worker count (default: available cores)")
    common.add_argument("--data", help="dataset CSV")
    common.add_argument("--model", help="model JSON")
    common.add_argument("--split", help="split JSON; evaluation uses its test rows")
    parser = argparse.ArgumentParser(prog="herdgate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"herdgate {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def _apply_env(args, parser) -> None:
    for name in OPTIONS:
        if getattr(args, name) is None:
            env = os.environ.get("HERDGATE_" + name.upper())
            if env is not None:
                setattr(args, name, env)
    try:
        args.seed = int(args.seed) if args.seed is not None else 0
        args.threads = int(args.threads) if args.threads is not None else (os.cpu_count() or 1)
    except ValueError:
        parser.error("--seed and --threads must be integers")
    if args.seed < 0 or args.seed >= 2**64:
        parser.error("--seed must be an unsigned 64-bit integer")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    if args.out is None:
        parser.error("--out is required")


def _outputs(root: Path) -> dict:
    files = sorted(p for p in root.rglob("*") if p.is_file())
    return {p.relative_to(root).as_posix(): sha256(p) for p in files}


def execute(args) -> Path:
    out = Path(args.out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise CliError(f"--out: {out} already exists and is not empty")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.parent / f".{out.name}.partial-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    started = time.time()
    run = Run(args)
    try:
        COMMANDS[args.command][0](run, tmp)
        manifest = {
            "command": args.command,
            "tool_version": __version__,
            "master_seed": args.seed,
            "stage_seeds": run.stage_seeds,
            "inputs": run.inputs,
            "outputs": _outputs(tmp),
            "timing": {
                "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
                "wall_time_s": time.time() - started,
                **run.timing,
            },
        }
        (tmp / "manifest.json").write_text(dumps_json(manifest), encoding="utf-8")
        if out.exists():
            out.rmdir()
        os.replace(tmp, out)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_env(args, parser)
    try:
        out = execute(args)
    except CliError as exc:
        print(f"herdgate {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"herdgate {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
