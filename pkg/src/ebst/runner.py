"""Seeded experiment execution and report files.

Per run: one deterministic JSON report (``<run_id>.json``), one timestamp
sidecar (``<run_id>.meta.json``) excluded from determinism comparisons, and
one row per round appended to ``runs.csv``. Sweeps add a long-format summary
CSV. The dataset is built from ``data.seed`` alone, so different training
seeds share the same fixture; the training seed drives weight init and
sampler noise.

The EBST_THREADS environment variable caps parallel seed workers (default:
one worker per seed). Each worker owns its full state; all file writes happen
on the calling thread.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

from . import metrics as metrics_mod
from . import nn
from .config import ExperimentConfig, embed_config
from .datagen import DomainDataset, gen_gaussian_shift, gen_two_moons, load_csv, rng_stream, rotate_domain
from .errors import ConfigError, DivergenceError
from .selftrain import TrainSettings, TrainState, pretrain_source, run_round

SCHEMA_VERSION = 1

RUNS_CSV_COLUMNS = [
    "run_id", "seed", "mode", "alpha", "round", "step1_loss", "step2_final_loss",
    "mean_target_energy", "selection_fraction", "beta", "lower_bound",
    "source_acc", "target_acc", "marginal_kl",
]

SWEEP_CSV_COLUMNS = [
    "run_id", "mode", "alpha", "seed", "final_target_mean_acc",
    "source_only_target_acc", "final_source_acc", "status",
]

# metric vocabulary for emit_plot_data, drawn from the runs.csv columns
PLOT_METRICS = [
    "step1_loss", "step2_final_loss", "mean_target_energy", "selection_fraction",
    "beta", "lower_bound", "source_acc", "target_acc", "marginal_kl",
]


def run_id_for(config: ExperimentConfig, seed: int) -> str:
    return f"{config.generator}-{config.mode}-alpha{config.alpha:g}-seed{seed}"


def build_datasets(config: ExperimentConfig):
    """Source/target pair for the configured generator; data-seeded only."""
    if config.generator == "two_moons":
        source = gen_two_moons(config.n, config.noise_sd, config.data_seed)
        target_base = gen_two_moons(config.n, config.noise_sd, config.data_seed + 1)
        target = rotate_domain(target_base, config.theta_degrees)
        return source, target
    if config.generator == "gaussian_shift":
        return gen_gaussian_shift(config.n, config.classes, config.mean_shift,
                                  config.data_seed)
    if config.generator == "csv":
        k = config.csv_k or None
        source = load_csv(config.source_csv, k)
        target = load_csv(config.target_csv, k or source.k)
        if target.k < source.k:
            target = replace(target, k=source.k)
        return source, target
    raise ConfigError(f"unknown generator {config.generator!r}")


def _settings_from(config: ExperimentConfig) -> TrainSettings:
    return TrainSettings(
        lr=config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        epochs_per_round=config.epochs_per_round,
        batch_size=config.batch_size,
        portion_step=config.portion_step,
        portion_max=config.portion_max,
        lambda_schedule=config.lambda_schedule,
        step2_energy=config.step2_energy,
        use_cd=config.use_cd,
        cd_steps=config.cd_steps,
        cd_step_size=config.cd_step_size,
        cd_noise=config.cd_noise,
        cd_box_margin=config.cd_box_margin,
    )


def pretrained_params(config: ExperimentConfig, seed: int,
                      source: DomainDataset | None = None) -> nn.ModelParams:
    """Init from the seed's stream and fit the source set; deterministic."""
    if source is None:
        source, _ = build_datasets(config)
    params = nn.init_params([source.d, *config.hidden, source.k],
                            rng_stream(seed, "init"))
    params, _ = pretrain_source(params, source, config.source_epochs, config.source_lr,
                                config.momentum, config.weight_decay,
                                config.batch_size, seed)
    return params


def source_only_eval(config: ExperimentConfig, seed: int):
    """Target-domain score of the pretrained model, before any self-training."""
    source, target = build_datasets(config)
    params = pretrained_params(config, seed, source)
    try:
        return metrics_mod.evaluate(params, target, config.kl_direction)
    except ValueError:
        return None


def run_single(config: ExperimentConfig, seed: int) -> dict:
    """Full pipeline for one seed; returns the report dict."""
    source, target = build_datasets(config)
    params = pretrained_params(config, seed, source)
    state = TrainState(
        params=params,
        portion=config.portion_start,
        mode=config.mode,
        alpha=config.alpha,
        epsilon=config.epsilon,
        seed=seed,
    )
    settings = _settings_from(config)
    sgld_rng = rng_stream(seed, "sgld")
    rounds = []
    status = "ok"
    for _ in range(config.rounds):
        try:
            state, report = run_round(state, source, target, settings, sgld_rng)
        except DivergenceError as exc:
            warnings.warn(f"seed {seed}: {exc}", RuntimeWarning)
            status = "diverged"
            break
        rounds.append(report)
    try:
        final = asdict(metrics_mod.evaluate(state.params, target, config.kl_direction))
    except ValueError:
        final = None
    return {
        "schema": SCHEMA_VERSION,
        "config": embed_config(config, seed),
        "rounds": [_jsonify(asdict(r)) for r in rounds],
        "final": _jsonify(final) if final else None,
        "status": status,
    }


def _jsonify(obj):
    """Plain-Python view: numpy scalars to float/int, arrays to lists."""
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, bool):
        return obj
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float) and obj != obj:  # NaN is not valid JSON
        return None
    return obj


def write_report(report: dict, out_dir, run_id: str) -> Path:
    """Deterministic JSON plus a timestamp sidecar kept out of the report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{run_id}.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    sidecar = out / f"{run_id}.meta.json"
    sidecar.write_text(json.dumps({
        "run_id": run_id,
        "written_at": datetime.now(timezone.utc).isoformat(),
    }) + "\n", encoding="utf-8")
    return path


def _append_runs_csv(out_dir: Path, run_id: str, seed: int, report: dict) -> None:
    path = out_dir / "runs.csv"
    new = not path.exists()
    config = report["config"]
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(RUNS_CSV_COLUMNS)
        for rnd in report["rounds"]:
            writer.writerow([
                run_id, seed, config["train.mode"], config["train.alpha"], rnd["round"],
                rnd["step1_loss_after"], rnd["step2_loss_trace"][-1],
                rnd["mean_target_energy"], rnd["selection_fraction"], rnd["beta"],
                rnd["lower_bound"], rnd["source_acc"], rnd["target_acc"],
                rnd["marginal_kl"],
            ])


def run_experiment(config: ExperimentConfig) -> list:
    """One run per configured seed; returns the report paths in seed order."""
    seeds = list(config.seeds)
    workers = int(os.environ.get("EBST_THREADS", len(seeds)) or 1)
    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(lambda s: run_single(config, s), seeds))
    else:
        reports = [run_single(config, seed) for seed in seeds]
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for seed, report in zip(seeds, reports):
        run_id = run_id_for(config, seed)
        paths.append(write_report(report, out_dir, run_id))
        _append_runs_csv(out_dir, run_id, seed, report)
    return paths


def alpha_sweep(config: ExperimentConfig, alphas, csv_name: str = "sweep.csv") -> Path:
    """Run the experiment per alpha and summarize final accuracies.

    Duplicate alphas are dropped with a warning. Columns: SWEEP_CSV_COLUMNS;
    the source-only baseline is recomputed per seed (it does not depend on
    alpha) so the sweep file carries every number needed for comparisons.
    """
    unique = []
    for a in alphas:
        a = float(a)
        if a in unique:
            warnings.warn(f"duplicate alpha {a:g} dropped from sweep", RuntimeWarning)
            continue
        unique.append(a)
    if not unique:
        raise ConfigError("alpha sweep needs at least one alpha")

    baselines = {}
    for seed in config.seeds:
        ev = source_only_eval(config, seed)
        baselines[seed] = ev.mean_acc if ev else None

    rows = []
    for a in unique:
        cfg = replace(config, alpha=a)
        paths = run_experiment(cfg)
        for seed, path in zip(cfg.seeds, paths):
            report = json.loads(path.read_text(encoding="utf-8"))
            final = report["final"] or {}
            last_round = report["rounds"][-1] if report["rounds"] else {}
            rows.append([
                run_id_for(cfg, seed), cfg.mode, a, seed,
                final.get("mean_acc"), baselines[seed],
                last_round.get("source_acc"), report["status"],
            ])

    out = Path(config.out_dir) / csv_name
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_COLUMNS)
        writer.writerows(rows)
    return out


def emit_plot_data(report_paths, out_path) -> int:
    """Tidy (run_id, round, metric_name, value) CSV across reports.

    Unreadable reports are skipped with a warning; raises if nothing was
    readable. Returns the number of data rows written.
    """
    extract = {
        "step1_loss": lambda r: r["step1_loss_after"],
        "step2_final_loss": lambda r: r["step2_loss_trace"][-1],
        "mean_target_energy": lambda r: r["mean_target_energy"],
        "selection_fraction": lambda r: r["selection_fraction"],
        "beta": lambda r: r["beta"],
        "lower_bound": lambda r: r["lower_bound"],
        "source_acc": lambda r: r["source_acc"],
        "target_acc": lambda r: r["target_acc"],
        "marginal_kl": lambda r: r["marginal_kl"],
    }
    rows = []
    readable = 0
    for path in report_paths:
        try:
            report = json.loads(Path(path).read_text(encoding="utf-8"))
            config = report["config"]
            seed = config["train.seeds"]
            run_id = (f"{config['data.generator']}-{config['train.mode']}"
                      f"-alpha{float(config['train.alpha']):g}-seed{seed}")
        except (OSError, ValueError, KeyError) as exc:
            warnings.warn(f"skipping unreadable report {path}: {exc}", RuntimeWarning)
            continue
        readable += 1
        for rnd in report["rounds"]:
            for name in PLOT_METRICS:
                rows.append([run_id, rnd["round"], name, extract[name](rnd)])
    if report_paths and not readable:
        raise ConfigError("no readable reports")
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "round", "metric_name", "value"])
        writer.writerows(rows)
    return len(rows)
