"""Drive one configured experiment end to end and write its artifacts."""

from __future__ import annotations

import json
import logging
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

from . import metrics as mio
from .config import ConfigError, ExperimentConfig, file_sha256, load_config, write_ini
from .data import Dataset, load_dataset_cache, load_idx, partition_with_noise, synthetic_classification
from .federation import TrainingDiverged, TrainingResult, run_training
from .models import save_checkpoint

log = logging.getLogger(__name__)

# Offset between the train and test synthetic seed streams.
TEST_SEED_OFFSET = 10_000


@dataclass
class ExperimentData:
    clients: list[Dataset]
    test: Dataset
    partition: object


def load_datasets(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = config.dataset
    if d.source == "synthetic":
        train = synthetic_classification(d.num_classes, d.samples_per_class, d.dim, d.class_separation, config.seed)
        test = synthetic_classification(
            d.num_classes, d.test_samples_per_class, d.dim, d.class_separation, config.seed + TEST_SEED_OFFSET
        )
        return train, test
    if d.source == "idx":
        train = load_idx(d.train_images, d.train_labels)
        test = load_idx(d.test_images, d.test_labels, num_classes=train.num_classes)
        return train, test
    train, _ = load_dataset_cache(d.train_cache)
    test, _ = load_dataset_cache(d.test_cache)
    return train, test


def prepare_data(config: ExperimentConfig) -> ExperimentData:
    train, test = load_datasets(config)
    clients, partition = partition_with_noise(train, config.partition)
    return ExperimentData(clients, test, partition)


def _write_artifacts(out: Path, config: ExperimentConfig, data: ExperimentData, result: TrainingResult,
                     status: str, error: str | None, config_path, elapsed: float) -> dict:
    K = len(data.clients)
    mio.write_metrics_csv(out / mio.METRICS_FILE, result.metrics, K)
    mio.write_bounds_csv(out / mio.BOUNDS_FILE, result.profiles)
    mio.write_eta_trajectory(out / mio.ETA_FILE, result.metrics, result.global_etas, K)
    save_checkpoint(out / "model.bin", result.final_model)
    accs = [m.test_accuracy for m in result.metrics]
    summary = {
        "status": status,
        "error": error,
        "rounds_completed": len(result.metrics),
        "final_accuracy": accs[-1] if accs else None,
        "best_accuracy": max(accs) if accs else None,
        "window": mio.default_window(len(accs), config.convergence_fraction) if accs else 0,
        "window_mean_accuracy": mio.window_mean_accuracy(result.metrics, fraction=config.convergence_fraction) if accs else None,
        "post_convergence_variance": (
            mio.post_convergence_variance(result.metrics, fraction=config.convergence_fraction) if accs else None
        ),
        "final_global_eta": result.global_etas[-1] if result.global_etas else None,
        "client_sizes": [len(c) for c in data.clients],
        "noisy_labels": int(data.partition.noise_flags.sum()),
        "eta_trajectory": mio.ETA_FILE,
        "metrics": mio.METRICS_FILE,
        "bounds": mio.BOUNDS_FILE,
        "wall_time_total": elapsed,
        "wall_times": [m.wall_time for m in result.metrics],
        "config": config.to_dict(),
        "config_file": Path(config_path).name if config_path else None,
        "config_sha256": file_sha256(config_path) if config_path else None,
    }
    (out / mio.SUMMARY_FILE).write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    return summary


def execute(config: ExperimentConfig, config_path=None) -> dict:
    """Run ``config`` and write every artifact into its output directory.

    Returns the summary dict; raises :class:`TrainingDiverged` after writing
    partial artifacts if training blew up.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config_path is not None:
        shutil.copyfile(config_path, out / "config.ini")
    write_ini(out / "config.effective.ini", config.to_dict())
    data = prepare_data(config)
    t0 = time.perf_counter()
    try:
        result = run_training(config.federation, data.clients, data.test)
    except TrainingDiverged as exc:
        _write_artifacts(out, config, data, exc.partial, "diverged", str(exc), config_path, time.perf_counter() - t0)
        raise
    return _write_artifacts(out, config, data, result, "ok", None, config_path, time.perf_counter() - t0)


def run_experiment(config_path, overrides=(), env=None) -> int:
    """CLI-facing wrapper: 0 on success, 2 on a bad config, 3 on divergence."""
    try:
        config = load_config(config_path, overrides, env)
    except (ConfigError, OSError) as exc:
        log.error("invalid config: %s", exc)
        return 2
    try:
        summary = execute(config, config_path)
    except TrainingDiverged as exc:
        log.error("training diverged: %s", exc)
        return 3
    log.info(
        "finished %d rounds: final accuracy %s, artifacts in %s",
        summary["rounds_completed"],
        summary["final_accuracy"],
        config.output_dir,
    )
    return 0
