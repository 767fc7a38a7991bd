"""Experiment configuration: an INI file with one section per concern.

Schema version 1.  Every key is optional; omitted keys take the defaults in
:data:`SCHEMA`.  Unknown sections or keys are rejected so typos do not go
unnoticed.  The output directory may also come from the environment variable
``ROBUSTFL_OUTPUT_DIR``; precedence is command-line flag > environment >
file > default.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

from .bounds import ETA_FLOOR, INVALID_POLICIES, RadiusGrid
from .data import PartitionSpec
from .federation import PRECISIONS, STRATEGIES, WEIGHTINGS, BoundConfig, FederationConfig
from .losses import LOSS_KINDS, BoundedLoss
from .models import ARCHITECTURES, TrainConfig

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "ROBUSTFL_OUTPUT_DIR"

DATA_SOURCES = ("synthetic", "idx", "cache")

# section -> key -> (type, default)
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "experiment": {
        "schema_version": (int, SCHEMA_VERSION),
        "rounds": (int, 100),
        "seed": (int, 0),
        "output_dir": (str, "runs/default"),
        "workers": (int, 1),
        "precision": (str, "float32"),
        "convergence_fraction": (float, 0.25),
    },
    "dataset": {
        "source": (str, "synthetic"),
        "num_classes": (int, 10),
        "samples_per_class": (int, 1000),
        "test_samples_per_class": (int, 200),
        "dim": (int, 20),
        "class_separation": (float, 3.0),
        "train_images": (str, ""),
        "train_labels": (str, ""),
        "test_images": (str, ""),
        "test_labels": (str, ""),
        "train_cache": (str, ""),
        "test_cache": (str, ""),
    },
    "partition": {
        "num_clients": (int, 10),
        "dirichlet_alpha": (float, 0.3),
        "lognormal_sigma": (float, 0.9),
        "noise_rate": (float, 0.2),
        # -1 means "use the experiment seed".
        "seed": (int, -1),
    },
    "federation": {
        "strategy": (str, "fedavg"),
        "weighting": (str, "robust_bound"),
        "arch": (str, "mlp_200_100"),
        "act_prob": (float, 1.0),
        "prox_mu": (float, 0.01),
        "dyn_alpha": (float, 0.01),
    },
    "training": {
        "learning_rate": (float, 0.1),
        "local_epochs": (int, 5),
        "batch_size": (int, 50),
        "weight_decay": (float, 1e-3),
    },
    "bounds": {
        "loss": (str, "zero_one"),
        "bound_M": (float, 1.0),
        "epsilon_max": (float, 0.5),
        "num_points": (int, 10),
        "moment_mode": (str, "plug_in"),
        "confidence_delta": (float, 0.05),
        "eta_floor": (float, ETA_FLOOR),
        "invalid_radius": (str, "trivial"),
    },
}


class ConfigError(ValueError):
    """A configuration value failed validation; the message names the field."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(section: str, key: str, raw) -> object:
    kind, _ = SCHEMA[section][key]
    if not isinstance(raw, str):
        return kind(raw)
    try:
        if kind is bool:
            return _parse_bool(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected {kind.__name__}, got {raw!r}") from None


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"
    num_classes: int = 10
    samples_per_class: int = 1000
    test_samples_per_class: int = 200
    dim: int = 20
    class_separation: float = 3.0
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_cache: str = ""
    test_cache: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    partition: PartitionSpec
    federation: FederationConfig
    output_dir: str
    convergence_fraction: float = 0.25
    values: dict = field(default_factory=dict, compare=False)

    @property
    def rounds(self) -> int:
        return self.federation.rounds

    @property
    def seed(self) -> int:
        return self.federation.seed

    def to_dict(self) -> dict:
        """Effective values, section by section (what was actually run)."""
        return {sec: dict(keys) for sec, keys in self.values.items()}


def _check(cond: bool, section: str, key: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"[{section}] {key}: {msg}")


def _validate(v: dict) -> None:
    e, d, p, f, t, b = (v[s] for s in ("experiment", "dataset", "partition", "federation", "training", "bounds"))
    _check(e["schema_version"] == SCHEMA_VERSION, "experiment", "schema_version", f"unsupported version {e['schema_version']}")
    _check(e["rounds"] >= 0, "experiment", "rounds", "must be >= 0")
    _check(e["workers"] >= 1, "experiment", "workers", "must be >= 1")
    _check(e["precision"] in PRECISIONS, "experiment", "precision", f"must be one of {sorted(PRECISIONS)}")
    _check(0 < e["convergence_fraction"] <= 1, "experiment", "convergence_fraction", "must lie in (0, 1]")
    _check(bool(e["output_dir"]), "experiment", "output_dir", "must not be empty")

    _check(d["source"] in DATA_SOURCES, "dataset", "source", f"must be one of {DATA_SOURCES}")
    if d["source"] == "synthetic":
        _check(d["num_classes"] >= 2, "dataset", "num_classes", "must be >= 2")
        _check(d["samples_per_class"] >= 1, "dataset", "samples_per_class", "must be >= 1")
        _check(d["test_samples_per_class"] >= 1, "dataset", "test_samples_per_class", "must be >= 1")
        _check(d["dim"] >= d["num_classes"], "dataset", "dim", "must be >= num_classes")
        _check(d["class_separation"] >= 0, "dataset", "class_separation", "must be >= 0")
    elif d["source"] == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            _check(bool(d[key]), "dataset", key, "required when source = idx")
    else:
        for key in ("train_cache", "test_cache"):
            _check(bool(d[key]), "dataset", key, "required when source = cache")

    _check(p["num_clients"] >= 1, "partition", "num_clients", "must be >= 1")
    _check(p["dirichlet_alpha"] > 0, "partition", "dirichlet_alpha", "must be > 0")
    _check(p["lognormal_sigma"] >= 0, "partition", "lognormal_sigma", "must be >= 0")
    _check(0 <= p["noise_rate"] < 1, "partition", "noise_rate", "must lie in [0, 1)")

    _check(f["strategy"] in STRATEGIES, "federation", "strategy", f"must be one of {STRATEGIES}")
    _check(f["weighting"] in WEIGHTINGS, "federation", "weighting", f"must be one of {WEIGHTINGS}")
    _check(f["arch"] in ARCHITECTURES, "federation", "arch", f"must be one of {sorted(ARCHITECTURES)}")
    _check(0 < f["act_prob"] <= 1, "federation", "act_prob", "must lie in (0, 1]")
    _check(f["prox_mu"] >= 0, "federation", "prox_mu", "must be >= 0")
    _check(f["dyn_alpha"] > 0, "federation", "dyn_alpha", "must be > 0")

    _check(t["learning_rate"] > 0, "training", "learning_rate", "must be > 0")
    _check(t["local_epochs"] >= 1, "training", "local_epochs", "must be >= 1")
    _check(t["batch_size"] >= 1, "training", "batch_size", "must be >= 1")
    _check(t["weight_decay"] >= 0, "training", "weight_decay", "must be >= 0")

    _check(b["loss"] in LOSS_KINDS, "bounds", "loss", f"must be one of {LOSS_KINDS}")
    _check(b["bound_M"] > 0, "bounds", "bound_M", "must be > 0")
    if b["loss"] != "squared_clamped":
        _check(b["bound_M"] == 1.0, "bounds", "bound_M", f"is fixed at 1 for the {b['loss']} loss")
    _check(0 < b["epsilon_max"] < 1, "bounds", "epsilon_max", "must lie in (0, 1)")
    _check(b["num_points"] >= 1, "bounds", "num_points", "must be >= 1")
    _check(b["moment_mode"] in ("plug_in", "high_probability"), "bounds", "moment_mode", "must be plug_in or high_probability")
    _check(0 < b["confidence_delta"] <= 1, "bounds", "confidence_delta", "must lie in (0, 1]")
    _check(b["eta_floor"] > 0, "bounds", "eta_floor", "must be > 0")
    _check(b["invalid_radius"] in INVALID_POLICIES, "bounds", "invalid_radius", f"must be one of {INVALID_POLICIES}")


def parse_override(text: str) -> tuple[str, str, str]:
    """``section.key=value`` -> (section, key, value)."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    lhs, value = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    return section.strip(), key.strip(), value.strip()


def build_config(raw: dict[str, dict[str, str]] | None = None, overrides=(), env=None) -> ExperimentConfig:
    """Resolve defaults < file values < environment < overrides, then validate."""
    raw = raw or {}
    env = os.environ if env is None else env
    values: dict[str, dict[str, object]] = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}

    def put(section, key, text):
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"[{section}] {key}: unknown key")
        values[section][key] = _coerce(section, key, text)

    for section, keys in raw.items():
        for key, text in keys.items():
            put(section, key, text)
    if env.get(OUTPUT_DIR_ENV):
        values["experiment"]["output_dir"] = env[OUTPUT_DIR_ENV]
    for item in overrides:
        put(*(parse_override(item) if isinstance(item, str) else item))

    _validate(values)
    e, p, f, t, b = (values[s] for s in ("experiment", "partition", "federation", "training", "bounds"))
    part_seed = e["seed"] if p["seed"] < 0 else p["seed"]
    try:
        federation = FederationConfig(
            strategy=f["strategy"],
            weighting=f["weighting"],
            train=TrainConfig(t["learning_rate"], t["local_epochs"], t["batch_size"], t["weight_decay"]),
            bounds=BoundConfig(
                grid=RadiusGrid(b["epsilon_max"], b["num_points"]),
                loss=BoundedLoss.make(b["loss"], b["bound_M"]),
                moment_mode=b["moment_mode"],
                confidence_delta=b["confidence_delta"],
                eta_floor=b["eta_floor"],
                invalid_radius=b["invalid_radius"],
            ),
            arch=f["arch"],
            act_prob=f["act_prob"],
            rounds=e["rounds"],
            seed=e["seed"],
            prox_mu=f["prox_mu"],
            dyn_alpha=f["dyn_alpha"],
            workers=e["workers"],
            precision=e["precision"],
        )
        partition = PartitionSpec(p["num_clients"], p["dirichlet_alpha"], p["lognormal_sigma"], p["noise_rate"], part_seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(
        dataset=DatasetConfig(**values["dataset"]),
        partition=partition,
        federation=federation,
        output_dir=str(e["output_dir"]),
        convergence_fraction=e["convergence_fraction"],
        values=values,
    )


def read_ini(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep key case
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return {s: dict(parser.items(s)) for s in parser.sections()}


def load_config(path, overrides=(), env=None) -> ExperimentConfig:
    return build_config(read_ini(path), overrides, env)


def write_ini(path, values: dict[str, dict[str, object]]) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, keys in values.items():
        parser[section] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in keys.items()}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
