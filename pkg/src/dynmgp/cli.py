"""Command-line interface: simulate / fit / predict / tune / benchmark / rl.

Every subcommand reads a YAML config (unknown keys are rejected), applies
flag overrides, writes its outputs plus the fully-resolved config into the
output directory, and exits nonzero on any failure.  All floats are written
with 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np
import yaml

from . import __version__
from .experiments import (CaseSpec, default_ss_config, generate, mean_crps,
                          read_csv_dataset, remove_gaps, run_benchmark,
                          write_csv_dataset)
from .inference import FitConfig, FitResult, fit
from .model import (Dataset, DynamicParams, GammaPosterior, HardSlab,
                    SoftSlab, SpikeSlabConfig)
from .prediction import Predictor
from .rl import RlConfig, null_policy, run_rl, write_trajectory_csv
from .tuning import DEFAULT_GRID, TuningGrid, grid_search

__all__ = ["main"]

ARCHIVE_FORMAT = "dynmgp-params"
ARCHIVE_VERSION = 1


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _check_keys(section: dict, allowed, where: str):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ValueError(f"unknown config keys in {where}: {sorted(unknown)}")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValueError(f"config {path} must be a mapping")
    return cfg


def _ss_from_config(section: dict | None, default=None) -> SpikeSlabConfig:
    if section is None:
        return default if default is not None else SpikeSlabConfig(
            nu0=0.02, slab=HardSlab(0.1), eta=0.5)
    _check_keys(section, {"nu0", "eta", "slab"}, "spike_slab")
    slab_sec = section.get("slab", {})
    _check_keys(slab_sec, {"kind", "nu1", "rho"}, "spike_slab.slab")
    kind = slab_sec.get("kind", "hard")
    nu1 = float(slab_sec.get("nu1", 0.1))
    if kind == "hard":
        slab = HardSlab(nu1)
    elif kind == "soft":
        slab = SoftSlab(nu1, float(slab_sec.get("rho", 0.9)))
    else:
        raise ValueError(f"unknown slab kind {kind!r}")
    return SpikeSlabConfig(nu0=float(section.get("nu0", 0.02)), slab=slab,
                           eta=float(section.get("eta", 0.5)))


def _fit_from_config(section: dict | None, seed: int) -> FitConfig:
    section = section or {}
    _check_keys(section, {"k_out", "k_in", "batches", "adam_step",
                          "gamma_init", "static_sources"}, "fit")
    return FitConfig(
        k_out=int(section.get("k_out", 5)),
        k_in=int(section.get("k_in", 400)),
        batches=int(section.get("batches", 4)),
        adam_step=float(section.get("adam_step", 0.01)),
        gamma_init=float(section.get("gamma_init", 0.99)),
        static_sources=bool(section.get("static_sources", False)),
        seed=seed,
    )


def _ss_to_dict(ss: SpikeSlabConfig) -> dict:
    slab = {"kind": "hard", "nu1": ss.slab.nu1} if isinstance(ss.slab, HardSlab) \
        else {"kind": "soft", "nu1": ss.slab.nu1, "rho": ss.slab.rho}
    return {"nu0": ss.nu0, "eta": ss.eta, "slab": slab}


def _write_resolved(cfg: dict, out_dir: str):
    with open(os.path.join(out_dir, "resolved_config.yaml"), "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


# ---------------------------------------------------------------------------
# Parameter archive
# ---------------------------------------------------------------------------

def save_fit(result: FitResult, ss_config: SpikeSlabConfig, path):
    """Self-describing JSON archive of fitted parameters."""
    p = result.params
    doc = {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "library_version": __version__,
        "spike_slab": _ss_to_dict(ss_config),
        "params": {
            "source_amp_u": [a.tolist() for a in p.source_amp_u],
            "source_ls_u": [l.tolist() for l in p.source_ls_u],
            "target_amp_u": p.target_amp_u.tolist(),
            "target_ls_u": p.target_ls_u.tolist(),
            "source_noise_u": p.source_noise_u.tolist(),
            "target_noise_u": p.target_noise_u,
        },
        "gamma": result.gamma.values.tolist(),
        "trace": [float(v) for v in result.trace],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_fit(path):
    """Returns (FitResult, SpikeSlabConfig) from a parameter archive."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != ARCHIVE_FORMAT:
        raise ValueError(f"{path} is not a parameter archive")
    if doc.get("version") != ARCHIVE_VERSION:
        raise ValueError(f"unsupported archive version {doc.get('version')}")
    p = doc["params"]
    params = DynamicParams(
        source_amp_u=[np.asarray(a, dtype=float) for a in p["source_amp_u"]],
        source_ls_u=[np.asarray(l, dtype=float) for l in p["source_ls_u"]],
        target_amp_u=np.asarray(p["target_amp_u"], dtype=float),
        target_ls_u=np.asarray(p["target_ls_u"], dtype=float),
        source_noise_u=np.asarray(p["source_noise_u"], dtype=float),
        target_noise_u=float(p["target_noise_u"]),
    )
    result = FitResult(params=params,
                       gamma=GammaPosterior(np.asarray(doc["gamma"],
                                                       dtype=float)),
                       trace=list(doc.get("trace", [])))
    return result, _ss_from_config(doc["spike_slab"])


def _write_gamma_csv(result: FitResult, dataset: Dataset, path):
    times = dataset.target.times[1:]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["output_id", "t", "gamma"])
        for i in range(result.gamma.values.shape[0]):
            for t, g in zip(times, result.gamma.values[i]):
                w.writerow([i, int(t), _fmt(g)])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict, out_dir: str, seed: int, jobs: int) -> None:
    _check_keys(cfg, {"case", "k", "n", "noise", "seed"}, "simulate config")
    spec = CaseSpec(case=int(cfg.get("case", 1)), k=int(cfg.get("k", 1)),
                    n=int(cfg.get("n", 130)),
                    noise=float(cfg.get("noise", 0.3)), seed=seed)
    data = generate(spec)
    rng = np.random.default_rng(seed + 10_000)
    train, held = remove_gaps(data, rng)
    write_csv_dataset(train, os.path.join(out_dir, "dataset.csv"))
    with open(os.path.join(out_dir, "gaps.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{j+1}" for j in range(held.d)] + ["y"])
        for t, x, y in zip(held.times, held.inputs, held.values):
            w.writerow([int(t)] + [_fmt(v) for v in x] + [_fmt(y)])
    _write_resolved({"subcommand": "simulate", "case": spec.case,
                     "k": spec.k, "n": spec.n, "noise": spec.noise,
                     "seed": seed}, out_dir)


def _load_data(cfg, key="data"):
    path = cfg.get(key)
    if path is None:
        raise ValueError(f"config key '{key}' (dataset CSV path) is required")
    return read_csv_dataset(path, target_id=cfg.get("target_id"))


def cmd_fit(cfg: dict, out_dir: str, seed: int, jobs: int) -> None:
    _check_keys(cfg, {"data", "target_id", "spike_slab", "fit", "seed"},
                "fit config")
    dataset = _load_data(cfg)
    ss = _ss_from_config(cfg.get("spike_slab"))
    fc = _fit_from_config(cfg.get("fit"), seed)
    result = fit(dataset, ss, fc)
    save_fit(result, ss, os.path.join(out_dir, "params.json"))
    _write_gamma_csv(result, dataset, os.path.join(out_dir, "gamma.csv"))
    _write_resolved({"subcommand": "fit", "data": cfg.get("data"),
                     "target_id": cfg.get("target_id"),
                     "spike_slab": _ss_to_dict(ss),
                     "fit": {"k_out": fc.k_out, "k_in": fc.k_in,
                             "batches": fc.batches,
                             "adam_step": fc.adam_step,
                             "gamma_init": fc.gamma_init,
                             "static_sources": fc.static_sources},
                     "seed": seed}, out_dir)


def cmd_predict(cfg: dict, out_dir: str, seed: int, jobs: int) -> None:
    _check_keys(cfg, {"data", "target_id", "model", "queries", "seed"},
                "predict config")
    dataset = _load_data(cfg)
    model_path = cfg.get("model")
    if model_path is None:
        raise ValueError("config key 'model' (parameter archive) is required")
    result, ss = load_fit(model_path)
    queries_path = cfg.get("queries")
    if queries_path is None:
        raise ValueError("config key 'queries' (CSV of t,x1..xd) is required")
    queries = []
    with open(queries_path, newline="") as fh:
        reader = csv.DictReader(fh)
        xcols = [c for c in (reader.fieldnames or []) if c.startswith("x")]
        if "t" not in (reader.fieldnames or []):
            raise ValueError(f"{queries_path}: expected a 't' column")
        for row in reader:
            queries.append((int(row["t"]), [float(row[c]) for c in xcols]))
    pred = Predictor(result, dataset, ss)
    with open(os.path.join(out_dir, "predictions.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{j+1}" for j in range(dataset.d)]
                   + ["mean", "variance"])
        for t, x in queries:
            p = pred.predict(t, np.asarray(x))
            w.writerow([t] + [_fmt(v) for v in x]
                       + [_fmt(p.mean), _fmt(p.variance)])
    _write_resolved({"subcommand": "predict", "data": cfg.get("data"),
                     "model": model_path, "queries": queries_path,
                     "seed": seed}, out_dir)


def cmd_tune(cfg: dict, out_dir: str, seed: int, jobs: int) -> None:
    _check_keys(cfg, {"data", "target_id", "grid", "spike_slab", "fit",
                      "seed"}, "tune config")
    dataset = _load_data(cfg)
    grid_sec = cfg.get("grid")
    if grid_sec is None:
        grid = DEFAULT_GRID
    else:
        _check_keys(grid_sec, {"pairs", "slab_values", "ratios"}, "grid")
        if "pairs" in grid_sec:
            grid = TuningGrid(tuple((float(a), float(b))
                                    for a, b in grid_sec["pairs"]))
        else:
            grid = TuningGrid.from_ratios(
                [float(v) for v in grid_sec["slab_values"]],
                [float(r) for r in grid_sec["ratios"]])
    template = _ss_from_config(cfg.get("spike_slab"))
    fc = _fit_from_config(cfg.get("fit"), seed)
    result = grid_search(dataset, grid, fc, template=template, n_jobs=jobs)
    with open(os.path.join(out_dir, "criterion_table.csv"), "w",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["nu0", "nu_slab", "criterion"])
        for nu0, nu_slab, val in result.table:
            w.writerow([_fmt(nu0), _fmt(nu_slab),
                        "" if val is None else _fmt(val)])
    save_fit(result.best_fit, result.best_config,
             os.path.join(out_dir, "params.json"))
    _write_resolved({"subcommand": "tune", "data": cfg.get("data"),
                     "grid": [[a, b] for a, b in grid.pairs],
                     "best": _ss_to_dict(result.best_config),
                     "seed": seed}, out_dir)


def cmd_benchmark(cfg: dict, out_dir: str, seed: int, jobs: int) -> None:
    _check_keys(cfg, {"case", "k", "n", "noise", "methods", "replications",
                      "spike_slab", "fit", "seed"}, "benchmark config")
    spec = CaseSpec(case=int(cfg.get("case", 1)), k=int(cfg.get("k", 1)),
                    n=int(cfg.get("n", 130)),
                    noise=float(cfg.get("noise", 0.3)), seed=seed)
    methods = tuple(cfg.get("methods", ("GP", "MGP-L1", "DMGP-SS")))
    replications = int(cfg.get("replications", 10))
    ss = _ss_from_config(cfg.get("spike_slab"),
                         default=default_ss_config(spec.case))
    fc = _fit_from_config(cfg.get("fit") or {"k_in": 2000,
                                             "adam_step": 0.03}, seed)
    reports = run_benchmark(spec, methods=methods, replications=replications,
                            fit_config=fc, ss_config=ss, n_jobs=jobs)
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "replication", "mae", "crps", "fit_seconds"])
        for m, rep in reports.items():
            for k, (e, c, s) in enumerate(zip(rep.mae_values, rep.crps_values,
                                              rep.fit_seconds)):
                w.writerow([m, k, _fmt(e), _fmt(c), _fmt(s)])
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "mae_mean", "mae_std", "crps_mean", "crps_std",
                    "failures"])
        for m, rep in reports.items():
            w.writerow([m, _fmt(rep.mae_mean), _fmt(rep.mae_std),
                        _fmt(rep.crps_mean), _fmt(rep.crps_std),
                        rep.failures])
    _write_resolved({"subcommand": "benchmark", "case": spec.case,
                     "k": spec.k, "n": spec.n, "noise": spec.noise,
                     "methods": list(methods), "replications": replications,
                     "spike_slab": _ss_to_dict(ss), "seed": seed}, out_dir)


def cmd_rl(cfg: dict, out_dir: str, seed: int, jobs: int) -> None:
    _check_keys(cfg, {"kind", "discount", "support_side", "max_steps",
                      "n_actions", "max_sweeps", "fit", "seed"}, "rl config")
    kind = cfg.get("kind", "DMGP-SS")
    rl_cfg = RlConfig(
        support_side=int(cfg.get("support_side", 16)),
        max_steps=int(cfg.get("max_steps", 600)),
        n_actions=int(cfg.get("n_actions", 9)),
        discount=float(cfg.get("discount", 0.99)),
        max_sweeps=int(cfg.get("max_sweeps", 300)),
        seed=seed,
    )
    fc = None
    if cfg.get("fit"):
        fc = _fit_from_config(cfg.get("fit"), seed)
    policy, rows, dist = run_rl(kind=kind, config=rl_cfg, fit_config=fc)
    write_trajectory_csv(rows, os.path.join(out_dir, "trajectory.csv"))
    reached = any(abs(r[1] - 0.45) < 0.05 for r in rows)
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "mean_abs_distance", "reached_goal", "sweeps",
                    "converged"])
        w.writerow([kind, _fmt(dist), int(reached), policy.sweeps,
                    int(policy.converged)])
    _write_resolved({"subcommand": "rl", "kind": kind,
                     "discount": rl_cfg.discount,
                     "support_side": rl_cfg.support_side,
                     "max_steps": rl_cfg.max_steps,
                     "n_actions": rl_cfg.n_actions,
                     "max_sweeps": rl_cfg.max_sweeps, "seed": seed}, out_dir)


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "tune": cmd_tune,
    "benchmark": cmd_benchmark,
    "rl": cmd_rl,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dynmgp",
        description="Non-stationary sparse multi-output GP toolkit")
    parser.add_argument("subcommand", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="YAML config path")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="parallel jobs for replications/grid cells")
    parser.add_argument("--out", default=".", help="output directory")
    args = parser.parse_args(argv)

    try:
        cfg = _load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.subcommand](cfg, args.out, seed, args.jobs)
    except (ValueError, OSError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
